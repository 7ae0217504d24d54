"""Counts calibration, baseline trimming, filtering, and phasic decomposition.

The slider channel goes counts -> 0-10 cm via an affine scale map; the
EDA channel goes counts -> microsiemens via the sensor transfer function.
Skin conductance is split into a slow tonic component (centered moving
median) and the fast phasic remainder, in which trough-to-peak responses
are detected against an amplitude threshold.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .acquisition import SessionConfig, SessionRecord, read_session_dir
from .errors import ConfigError, DataError

UNITS = ("counts", "cm", "uS")


@dataclass(frozen=True)
class ScaleMap:
    """Calibration constants mapping slider voltage/counts to a cm scale."""

    p_ref: float = 3.3          # V, slider supply
    n_bits: int = 12
    gad_min: int = 0            # counts at the no-pain stop
    gad_max: int = 4095         # counts at the full-pain stop
    scale_min: float = 0.0      # cm
    scale_max: float = 10.0     # cm

    def __post_init__(self):
        if self.p_ref <= 0:
            raise ConfigError(f"p_ref: must be > 0, got {self.p_ref}")
        full = (1 << self.n_bits) - 1
        if not 0 <= self.gad_min < self.gad_max <= full:
            raise ConfigError(
                f"gad range: need 0 <= gad_min < gad_max <= {full}, "
                f"got [{self.gad_min}, {self.gad_max}]"
            )
        if self.scale_min >= self.scale_max:
            raise ConfigError("scale range: scale_min must be < scale_max")


@dataclass(frozen=True)
class ConductanceMap:
    """EDA sensor transfer parameters (counts -> microsiemens)."""

    vcc: float = 3.3               # V
    n_bits: int = 12
    sensitivity: float = 0.132     # V per uS

    def __post_init__(self):
        for name in ("vcc", "sensitivity"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name}: must be > 0")
        if self.n_bits < 1:
            raise ConfigError("n_bits: must be >= 1")


@dataclass
class Series:
    """A uniformly sampled channel with an explicit unit."""

    values: np.ndarray
    rate: float
    unit: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.rate <= 0:
            raise ConfigError(f"rate: must be > 0, got {self.rate}")
        if self.unit not in UNITS:
            raise ConfigError(f"unit: must be one of {UNITS}, got {self.unit!r}")
        if self.values.size and not np.all(np.isfinite(self.values)):
            raise DataError("series contains non-finite values")

    def __len__(self):
        return self.values.size

    def with_values(self, values: np.ndarray, unit: str | None = None) -> "Series":
        return Series(values, self.rate, unit or self.unit)


class Peak(NamedTuple):
    index: int
    amplitude: float  # trough-to-peak rise, uS


@dataclass
class Decomposition:
    tonic: Series
    phasic: Series
    peaks: list[Peak]


def analog_to_digital(p_analog: float, scale_map: ScaleMap) -> int:
    """Quantize a slider voltage to counts: round(v / p_ref * (2^n - 1)).

    Half counts round up, and the result is clamped to the ADC range.
    """
    if not 0.0 <= p_analog <= scale_map.p_ref:
        raise DataError(
            f"p_analog: {p_analog} outside [0, {scale_map.p_ref}] V"
        )
    full = (1 << scale_map.n_bits) - 1
    counts = int(np.floor(p_analog / scale_map.p_ref * full + 0.5))
    return min(max(counts, 0), full)


def digital_to_scale(p_digital, scale_map: ScaleMap, strict: bool = False):
    """Affine map counts -> cm, exact at both gad_min and gad_max anchors.

    Out-of-range counts clamp by default (slider hardware can rail at the
    stops); strict mode raises instead. Accepts scalars or arrays.
    """
    d = np.asarray(p_digital, dtype=np.float64)
    below = d < scale_map.gad_min
    above = d > scale_map.gad_max
    if strict and (below.any() or above.any()):
        raise DataError(
            f"p_digital outside [{scale_map.gad_min}, {scale_map.gad_max}]"
        )
    d = np.clip(d, scale_map.gad_min, scale_map.gad_max)
    frac = (d - scale_map.gad_min) / (scale_map.gad_max - scale_map.gad_min)
    out = scale_map.scale_min * (1.0 - frac) + scale_map.scale_max * frac
    if np.isscalar(p_digital):
        return float(out)
    return out


def scale_series(series: Series, scale_map: ScaleMap,
                 strict: bool = False) -> Series:
    if series.unit != "counts":
        raise ConfigError(f"expected a counts series, got unit {series.unit!r}")
    return series.with_values(
        digital_to_scale(series.values, scale_map, strict=strict), unit="cm"
    )


def counts_to_conductance(series: Series, cmap: ConductanceMap) -> Series:
    """Sensor transfer function: (counts / 2^n * vcc) / sensitivity, in uS."""
    if series.unit != "counts":
        raise ConfigError(f"expected a counts series, got unit {series.unit!r}")
    denom = float(1 << cmap.n_bits)
    uS = series.values / denom * cmap.vcc / cmap.sensitivity
    return series.with_values(uS, unit="uS")


def trim_baseline(series: Series, n_samples: int = 120) -> Series:
    """Drop the leading baseline samples."""
    if n_samples < 0:
        raise ConfigError(f"n_samples: must be >= 0, got {n_samples}")
    if len(series) <= n_samples and n_samples > 0:
        raise DataError(
            f"series of length {len(series)} too short to trim {n_samples} samples"
        )
    return series.with_values(series.values[n_samples:])


def median_filter(series: Series, half_window_s: float = 10.0) -> Series:
    """Centered running median over +/- half_window_s, truncated at edges.

    Even-sized edge windows use the mean of the two central values (the
    numpy median convention).
    """
    if half_window_s < 0:
        raise ConfigError("half_window_s: must be >= 0")
    half = int(round(half_window_s * series.rate))
    v = series.values
    n = v.size
    if n == 0 or half == 0:
        return series.with_values(v.copy())
    out = np.empty(n)
    for i in range(n):
        lo = max(0, i - half)
        hi = min(n, i + half + 1)
        out[i] = np.median(v[lo:hi])
    return series.with_values(out)


def decompose(sc: Series, tonic_window_s: float = 20.0,
              peak_threshold: float = 0.01) -> Decomposition:
    """Split conductance into tonic/phasic and detect phasic peaks.

    Tonic is a centered moving median spanning ``tonic_window_s`` seconds
    (robust to SCR spikes); phasic is the pointwise remainder, so the two
    always reconstruct the input exactly up to float arithmetic.
    """
    if sc.unit != "uS":
        raise ConfigError(f"expected a uS series, got unit {sc.unit!r}")
    if len(sc) < 2:
        raise DataError("decompose needs at least 2 samples")
    tonic = median_filter(sc, half_window_s=tonic_window_s / 2.0)
    phasic = sc.with_values(sc.values - tonic.values)
    peaks = detect_peaks(phasic, threshold=peak_threshold)
    return Decomposition(tonic=tonic, phasic=phasic, peaks=peaks)


def detect_peaks(phasic: Series, threshold: float = 0.01) -> list[Peak]:
    """Find local maxima whose rise from the preceding trough >= threshold.

    Plateaus collapse to their first sample. Endpoints are never peaks.
    The amplitude recorded is the trough-to-peak rise, which makes the
    result invariant to any constant offset.
    """
    if threshold <= 0:
        raise ConfigError(f"threshold: must be > 0, got {threshold}")
    v = phasic.values
    n = v.size
    if n < 3:
        return []

    # Collapse runs of equal values, remembering each run's first index.
    keep = np.empty(n, dtype=bool)
    keep[0] = True
    keep[1:] = v[1:] != v[:-1]
    idx = np.flatnonzero(keep)
    c = v[idx]
    m = c.size
    if m < 3:
        return []

    peaks: list[Peak] = []
    trough = c[0]
    for j in range(1, m - 1):
        if c[j - 1] < c[j] > c[j + 1]:
            rise = c[j] - trough
            if rise >= threshold:
                peaks.append(Peak(index=int(idx[j]), amplitude=float(rise)))
            trough = c[j]  # reset; next trough tracked from here
        trough = min(trough, c[j])
    return peaks


# ---------------------------------------------------------------------------
# Per-session processing pipeline


@dataclass
class ProcessedSession:
    """All series a session contributes to the feature stage."""

    config: SessionConfig
    t_ms: np.ndarray              # timestamps of the post-trim samples
    conductance: Series           # uS
    tonic: Series
    phasic: Series
    peaks: list[Peak]
    psm_cm: Series                # scaled, trimmed, unfiltered
    psm_filtered_cm: Series       # scaled, filtered, trimmed


def session_series(record: SessionRecord) -> tuple[Series, Series, np.ndarray]:
    """Split a session record into raw counts series plus timestamps."""
    rate = record.config.sample_rate
    eda = np.array([f.eda_counts for f in record.frames], dtype=np.float64)
    psm = np.array([f.psm_counts for f in record.frames], dtype=np.float64)
    t_ms = np.array([f.t_ms for f in record.frames], dtype=np.int64)
    return Series(eda, rate, "counts"), Series(psm, rate, "counts"), t_ms


def load_session(session_dir: str | Path) -> SessionRecord:
    """Import a session directory written by the acquisition store."""
    return read_session_dir(session_dir)


def process_session(record: SessionRecord,
                    scale_map: ScaleMap | None = None,
                    cond_map: ConductanceMap | None = None,
                    baseline_samples: int = 120,
                    psm_half_window_s: float = 10.0,
                    tonic_window_s: float = 20.0,
                    peak_threshold: float = 0.01) -> ProcessedSession:
    """Run the full conditioning chain on one session.

    EDA: trim the annotated baseline, convert to conductance, decompose.
    PSM: convert counts to the 0-10 cm scale, median-filter the scaled
    trace (ripples occur during baseline and experiment alike), then trim
    to restore equal vector length with the conductance channel.
    """
    scale_map = scale_map or ScaleMap(n_bits=record.config.n_bits)
    cond_map = cond_map or ConductanceMap(n_bits=record.config.n_bits)
    eda_counts, psm_counts, t_ms = session_series(record)

    sc = counts_to_conductance(trim_baseline(eda_counts, baseline_samples), cond_map)
    deco = decompose(sc, tonic_window_s=tonic_window_s,
                     peak_threshold=peak_threshold)

    psm_scaled = scale_series(psm_counts, scale_map)
    psm_filtered = trim_baseline(
        median_filter(psm_scaled, psm_half_window_s), baseline_samples
    )
    psm_trimmed = trim_baseline(psm_scaled, baseline_samples)

    return ProcessedSession(
        config=record.config,
        t_ms=t_ms[baseline_samples:],
        conductance=sc,
        tonic=deco.tonic,
        phasic=deco.phasic,
        peaks=deco.peaks,
        psm_cm=psm_trimmed,
        psm_filtered_cm=psm_filtered,
    )
