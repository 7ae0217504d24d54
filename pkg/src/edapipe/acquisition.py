"""Simulated concomitant EDA/PSM acquisition and on-disk session storage.

The simulator produces sessions shaped like the occlusion-with-stretch
protocol: rest, sustained handgrip, cuff occlusion whose final stretch
segment carries the pain peak, then recovery. Both channels are emitted
as raw ADC counts at a fixed rate so the downstream signal pipeline sees
exactly what a device stream would deliver.
"""

from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

SUBJECT_ID_PATTERN = re.compile(r"^22-102-S1\d{3}$")

ADC_BITS_DEFAULT = 12

META_FILENAME = "meta.json"
FRAMES_FILENAME = "frames.ndjson"

# Wire/file record keys, one JSON object per line.
_FRAME_KEYS = ("session", "seq", "t_ms", "eda", "psm")


@dataclass(frozen=True)
class SessionConfig:
    """Per-subject experiment parameters for one acquisition session."""

    subject_id: str
    mvc_force: float = 120.0          # N, 35% MVC handgrip setpoint
    occlusion_pressure: float = 200.0  # mmHg
    stretch_force: float = 20.0        # N
    vas_post: float = 5.0              # cm on the 0-10 post-session scale
    sample_rate: float = 2.0           # Hz
    seed: int = 0
    n_bits: int = ADC_BITS_DEFAULT

    def __post_init__(self):
        if not SUBJECT_ID_PATTERN.match(self.subject_id):
            raise ConfigError(
                f"subject_id: {self.subject_id!r} does not match 22-102-S1 "
                "followed by exactly 3 digits"
            )
        if self.sample_rate <= 0:
            raise ConfigError(f"sample_rate: must be > 0, got {self.sample_rate}")
        if not 0.0 <= self.vas_post <= 10.0:
            raise ConfigError(f"vas_post: must be in [0, 10], got {self.vas_post}")
        for name in ("mvc_force", "occlusion_pressure", "stretch_force"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name}: must be >= 0, got {getattr(self, name)}")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ConfigError(f"seed: must be a nonnegative integer, got {self.seed}")
        if self.n_bits < 1:
            raise ConfigError(f"n_bits: must be >= 1, got {self.n_bits}")

    @property
    def adc_max(self) -> int:
        return (1 << self.n_bits) - 1


@dataclass(frozen=True)
class PhaseProfile:
    """Durations of the experiment phases, in seconds.

    The stretch segment occupies the final ``stretch_s`` seconds of the
    occlusion phase rather than adding to the total.
    """

    baseline_s: float = 60.0
    grip_s: float = 120.0
    occlusion_s: float = 180.0
    stretch_s: float = 60.0
    recovery_s: float = 120.0

    def __post_init__(self):
        for name in ("baseline_s", "grip_s", "occlusion_s", "recovery_s"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name}: must be > 0")
        if not 0 <= self.stretch_s <= self.occlusion_s:
            raise ConfigError("stretch_s: must lie within the occlusion phase")

    @property
    def total_s(self) -> float:
        return self.baseline_s + self.grip_s + self.occlusion_s + self.recovery_s


@dataclass(frozen=True)
class GeneratorGains:
    """Amplitudes of the synthetic signal components.

    Setting every gain to zero degenerates the generator to constant,
    noise-free channels at the zero-pain level.
    """

    pain_scale: float = 1.0        # scales the whole latent trajectory
    psm_noise_sd: float = 6.0      # counts
    tonic_base_uS: float = 1.8
    tonic_gain_uS: float = 1.2     # tonic rise at full latent pain
    scr_rate_base: float = 0.03    # events/s at zero pain
    scr_rate_gain: float = 0.22    # extra events/s at full pain
    scr_amp_base_uS: float = 0.06
    scr_amp_gain_uS: float = 0.55
    eda_noise_sd_uS: float = 0.008

    @classmethod
    def zeroed(cls) -> "GeneratorGains":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class StreamFrame:
    """One timestamped pair of raw EDA and PSM counts."""

    session_id: str
    seq: int
    t_ms: int
    eda_counts: int
    psm_counts: int


@dataclass
class SessionRecord:
    config: SessionConfig
    frames: list[StreamFrame] = field(default_factory=list)
    status: str = "open"  # open | closed

    @property
    def session_id(self) -> str:
        return self.config.subject_id


def frame_t_ms(seq: int, sample_rate: float) -> int:
    """Canonical timestamp (ms) of frame ``seq`` at ``sample_rate`` Hz."""
    return int(round(seq * 1000.0 / sample_rate))


def frame_to_line(frame: StreamFrame) -> str:
    return json.dumps(
        {
            "session": frame.session_id,
            "seq": frame.seq,
            "t_ms": frame.t_ms,
            "eda": frame.eda_counts,
            "psm": frame.psm_counts,
        },
        separators=(",", ":"),
    )


def line_to_frame(line: str) -> StreamFrame:
    """Parse one wire/file record. Raises DataError for malformed input."""
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed frame record: {exc}") from exc
    if not isinstance(obj, dict) or set(obj) != set(_FRAME_KEYS):
        raise DataError(f"malformed frame record: expected keys {_FRAME_KEYS}")
    if not isinstance(obj["session"], str):
        raise DataError("malformed frame record: session must be a string")
    for key in ("seq", "t_ms", "eda", "psm"):
        if not isinstance(obj[key], int) or isinstance(obj[key], bool):
            raise DataError(f"malformed frame record: {key} must be an integer")
    return StreamFrame(
        session_id=obj["session"],
        seq=obj["seq"],
        t_ms=obj["t_ms"],
        eda_counts=obj["eda"],
        psm_counts=obj["psm"],
    )


def validate_frame(frame: StreamFrame, config: SessionConfig) -> None:
    """Check a frame against the session's rate and ADC range."""
    if frame.seq < 0:
        raise DataError(f"seq: must be >= 0, got {frame.seq}")
    expected = frame_t_ms(frame.seq, config.sample_rate)
    if frame.t_ms != expected:
        raise DataError(
            f"t_ms: expected {expected} for seq {frame.seq} at "
            f"{config.sample_rate} Hz, got {frame.t_ms}"
        )
    for name, value in (("eda", frame.eda_counts), ("psm", frame.psm_counts)):
        if not 0 <= value <= config.adc_max:
            raise DataError(
                f"{name}: counts {value} outside ADC range [0, {config.adc_max}]"
            )


# ---------------------------------------------------------------------------
# Synthetic generator


def latent_pain(config: SessionConfig, profile: PhaseProfile,
                gains: GeneratorGains) -> np.ndarray:
    """Latent pain trajectory in [0, 1], one value per frame.

    Zero at rest, a ramp while the grip is held, highest while the cuff is
    inflated with the stretch segment on top, exponential decay afterwards.
    """
    n = int(round(profile.total_s * config.sample_rate))
    t = np.arange(n) / config.sample_rate
    lam = np.zeros(n)

    t0 = profile.baseline_s
    t1 = t0 + profile.grip_s
    t2 = t1 + profile.occlusion_s
    t_stretch = t2 - profile.stretch_s

    grip_level = 0.35
    occl_level = 0.65
    peak_level = 0.95

    grip = (t >= t0) & (t < t1)
    lam[grip] = grip_level * (t[grip] - t0) / profile.grip_s

    occl = (t >= t1) & (t < t_stretch)
    if profile.occlusion_s > profile.stretch_s:
        lam[occl] = grip_level + (occl_level - grip_level) * (
            t[occl] - t1) / (profile.occlusion_s - profile.stretch_s)

    stretch = (t >= t_stretch) & (t < t2)
    start = occl_level if profile.occlusion_s > profile.stretch_s else grip_level
    if profile.stretch_s > 0:
        lam[stretch] = start + (peak_level - start) * (
            t[stretch] - t_stretch) / profile.stretch_s

    recovery = t >= t2
    lam[recovery] = peak_level * np.exp(-(t[recovery] - t2) / 30.0)

    return np.clip(lam * gains.pain_scale, 0.0, 1.0)


def _scr_kernel(sample_rate: float, rise_s: float = 1.0, decay_s: float = 4.0,
                span_s: float = 20.0) -> np.ndarray:
    """Unit-peak impulse response: fast rise, exponential decay."""
    t = np.arange(int(span_s * sample_rate)) / sample_rate
    k = np.exp(-t / decay_s) - np.exp(-t / rise_s)
    peak = k.max()
    return k / peak if peak > 0 else k


def simulate_subject(config: SessionConfig,
                     profile: PhaseProfile | None = None,
                     gains: GeneratorGains | None = None) -> SessionRecord:
    """Generate a full closed session of frames, deterministic under the seed."""
    profile = profile or PhaseProfile()
    gains = gains or GeneratorGains()
    rng = np.random.default_rng(config.seed)
    lam = latent_pain(config, profile, gains)
    n = lam.size
    adc_max = config.adc_max

    # PSM channel: the slider tracks the latent trajectory sample by sample.
    psm = lam * adc_max + rng.normal(0.0, 1.0, n) * gains.psm_noise_sd
    psm_counts = np.clip(np.floor(psm + 0.5), 0, adc_max).astype(np.int64)

    # EDA channel: slow tonic drift toward arousal plus SCR-shaped impulses
    # whose rate and amplitude both grow with the latent pain.
    dt = 1.0 / config.sample_rate
    smooth_w = max(1, int(round(30.0 * config.sample_rate)))
    kernel = np.ones(smooth_w) / smooth_w
    lam_slow = np.convolve(lam, kernel, mode="same")
    tonic = gains.tonic_base_uS + gains.tonic_gain_uS * lam_slow

    rate = gains.scr_rate_base + gains.scr_rate_gain * lam
    events = rng.random(n) < rate * dt
    amps = np.where(
        events,
        (gains.scr_amp_base_uS + gains.scr_amp_gain_uS * lam)
        * rng.lognormal(0.0, 0.35, n),
        0.0,
    )
    scr = np.convolve(amps, _scr_kernel(config.sample_rate))[:n]

    eda_uS = tonic + scr + rng.normal(0.0, 1.0, n) * gains.eda_noise_sd_uS
    # Inverse of the conductance transfer function (vcc 3.3 V, 0.132 V/uS).
    eda = eda_uS * 0.132 / 3.3 * (1 << config.n_bits)
    eda_counts = np.clip(np.floor(eda + 0.5), 0, adc_max).astype(np.int64)

    frames = [
        StreamFrame(
            session_id=config.subject_id,
            seq=i,
            t_ms=frame_t_ms(i, config.sample_rate),
            eda_counts=int(eda_counts[i]),
            psm_counts=int(psm_counts[i]),
        )
        for i in range(n)
    ]
    return SessionRecord(config=config, frames=frames, status="closed")


def simulate_cohort(n_subjects: int = 15, seed: int = 1,
                    profile: PhaseProfile | None = None,
                    first_subject: int = 1) -> list[SessionRecord]:
    """Simulate a cohort with per-subject parameter and pain-level spread.

    The post-session VAS is a noisy, quantized recall of the latent pain
    peak, so it carries the label sparsity the in-session channel avoids.
    """
    if n_subjects < 1:
        raise ConfigError(f"n_subjects: must be >= 1, got {n_subjects}")
    root = np.random.SeedSequence(seed)
    records = []
    for i, seq in enumerate(root.spawn(n_subjects)):
        rng = np.random.default_rng(seq)
        subject_id = f"22-102-S1{first_subject + i:03d}"
        # Spread peak pain across the cohort so every class band is populated.
        pain_scale = 0.45 + 0.55 * (i / max(1, n_subjects - 1)) \
            + rng.normal(0.0, 0.03)
        pain_scale = float(np.clip(pain_scale, 0.1, 1.0))
        gains = GeneratorGains(pain_scale=pain_scale)

        peak = 0.95 * pain_scale
        vas = 10.0 * peak + rng.normal(0.0, 0.6)
        vas = float(np.clip(np.round(vas / 0.5) * 0.5, 0.0, 10.0))

        # Protocol parameters come in a few shared levels, as on a real
        # bench; subjects collide on them, so no column identifies a subject.
        config = SessionConfig(
            subject_id=subject_id,
            mvc_force=float(rng.choice([100.0, 120.0, 140.0, 160.0])),
            occlusion_pressure=float(rng.choice([180.0, 200.0, 220.0])),
            stretch_force=float(rng.choice([15.0, 20.0, 25.0])),
            vas_post=vas,
            seed=int(rng.integers(0, 2**31 - 1)),
        )
        records.append(simulate_subject(config, profile, gains))
    return records


# ---------------------------------------------------------------------------
# Session store


def _config_to_dict(config: SessionConfig) -> dict:
    return asdict(config)


def _config_from_dict(d: dict) -> SessionConfig:
    return SessionConfig(**d)


class SessionStore:
    """Directory-backed session persistence.

    Layout: ``<root>/sessions/<id>/meta.json`` and ``frames.ndjson``.
    Frame appends are serialized per session; a closed session is immutable.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.sessions_dir = self.root / "sessions"
        self.sessions_dir.mkdir(parents=True, exist_ok=True)
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()
        # (last_seq, status) cache so appends do not re-read files
        self._state: dict[str, list] = {}

    def _lock(self, session_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(session_id, threading.Lock())

    def _dir(self, session_id: str) -> Path:
        return self.sessions_dir / session_id

    def _meta_path(self, session_id: str) -> Path:
        return self._dir(session_id) / META_FILENAME

    def _frames_path(self, session_id: str) -> Path:
        return self._dir(session_id) / FRAMES_FILENAME

    def _write_meta(self, session_id: str, config: SessionConfig, status: str):
        meta = {
            "session_id": session_id,
            "config": _config_to_dict(config),
            "status": status,
        }
        self._meta_path(session_id).write_text(
            json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )

    def _read_meta(self, session_id: str) -> dict:
        path = self._meta_path(session_id)
        if not path.exists():
            raise DataError(f"unknown session: {session_id}")
        return json.loads(path.read_text(encoding="utf-8"))

    def list_sessions(self) -> list[str]:
        return sorted(p.name for p in self.sessions_dir.iterdir() if p.is_dir())

    def exists(self, session_id: str) -> bool:
        return self._meta_path(session_id).exists()

    def open_session(self, config: SessionConfig) -> str:
        session_id = config.subject_id
        with self._lock(session_id):
            if self.exists(session_id):
                raise DataError(f"session already exists: {session_id}")
            self._dir(session_id).mkdir(parents=True)
            self._write_meta(session_id, config, "open")
            self._frames_path(session_id).touch()
            self._state[session_id] = [-1, "open"]
        return session_id

    def _load_state(self, session_id: str) -> list:
        state = self._state.get(session_id)
        if state is None:
            meta = self._read_meta(session_id)
            last_seq = -1
            frames_path = self._frames_path(session_id)
            if frames_path.exists():
                with frames_path.open(encoding="utf-8") as fh:
                    for line in fh:
                        if line.strip():
                            last_seq = line_to_frame(line).seq
            state = [last_seq, meta["status"]]
            self._state[session_id] = state
        return state

    def config(self, session_id: str) -> SessionConfig:
        return _config_from_dict(self._read_meta(session_id)["config"])

    def status(self, session_id: str) -> str:
        return self._load_state(session_id)[1]

    def append_frame(self, session_id: str, frame: StreamFrame) -> int:
        """Validate and persist one frame; returns the stored seq."""
        with self._lock(session_id):
            if not self.exists(session_id):
                raise DataError(f"unknown session: {session_id}")
            state = self._load_state(session_id)
            if state[1] != "open":
                raise DataError(f"session is closed: {session_id}")
            if frame.session_id != session_id:
                raise DataError(
                    f"frame addressed to {frame.session_id!r}, not {session_id!r}"
                )
            config = self.config(session_id)
            validate_frame(frame, config)
            expected = state[0] + 1
            if frame.seq != expected:
                raise DataError(
                    f"seq: expected {expected}, got {frame.seq} "
                    "(duplicate, out-of-order, or gap)"
                )
            with self._frames_path(session_id).open("a", encoding="utf-8") as fh:
                fh.write(frame_to_line(frame) + "\n")
            state[0] = frame.seq
            return frame.seq

    def close_session(self, session_id: str) -> SessionRecord:
        with self._lock(session_id):
            meta = self._read_meta(session_id)
            if meta["status"] == "closed":
                raise DataError(f"session already closed: {session_id}")
            config = _config_from_dict(meta["config"])
            self._write_meta(session_id, config, "closed")
            self._load_state(session_id)[1] = "closed"
        return self.read_session(session_id)

    def write_session(self, record: SessionRecord) -> str:
        """Persist a complete (e.g. simulated) session in one call."""
        session_id = record.config.subject_id
        with self._lock(session_id):
            if self.exists(session_id):
                raise DataError(f"session already exists: {session_id}")
            self._dir(session_id).mkdir(parents=True)
            self._write_meta(session_id, record.config, record.status)
            with self._frames_path(session_id).open("w", encoding="utf-8") as fh:
                for frame in record.frames:
                    fh.write(frame_to_line(frame) + "\n")
            self._state[session_id] = [
                record.frames[-1].seq if record.frames else -1, record.status
            ]
        return session_id

    def read_session(self, session_id: str) -> SessionRecord:
        meta = self._read_meta(session_id)
        config = _config_from_dict(meta["config"])
        frames = []
        with self._frames_path(session_id).open(encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    frames.append(line_to_frame(line))
        return SessionRecord(config=config, frames=frames, status=meta["status"])

    def export_session(self, session_id: str, format: str = "ndjson") -> bytes:
        """Serialize meta + frames. Formats: ndjson (meta line first), csv."""
        record = self.read_session(session_id)
        if format == "ndjson":
            meta = {
                "session_id": session_id,
                "config": _config_to_dict(record.config),
                "status": record.status,
            }
            lines = [json.dumps(meta, sort_keys=True, separators=(",", ":"))]
            lines += [frame_to_line(f) for f in record.frames]
            return ("\n".join(lines) + "\n").encode("utf-8")
        if format == "csv":
            lines = ["seq,t_ms,eda,psm"]
            lines += [
                f"{f.seq},{f.t_ms},{f.eda_counts},{f.psm_counts}"
                for f in record.frames
            ]
            return ("\n".join(lines) + "\n").encode("utf-8")
        raise ConfigError(f"format: unknown export format {format!r}")


def read_session_dir(session_dir: str | Path) -> SessionRecord:
    """Read one ``sessions/<id>`` directory without a surrounding store."""
    session_dir = Path(session_dir)
    meta_path = session_dir / META_FILENAME
    if not meta_path.exists():
        raise DataError(f"not a session directory: {session_dir}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    config = _config_from_dict(meta["config"])
    frames = []
    with (session_dir / FRAMES_FILENAME).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                frames.append(line_to_frame(line))
    return SessionRecord(config=config, frames=frames, status=meta["status"])
