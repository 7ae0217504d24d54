"""Windowed feature/label matrix: 11 objective features + 3 ground truths.

Every 10 s non-overlapping window of the phasic conductance yields the
statistical and peak-derived features of the feature vector, the
experiment parameters copied from the session config, and the three
label columns: the windowed mean and maximum of the in-session slider
trace plus the single post-session VAS score broadcast over the session.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .acquisition import SessionConfig
from .errors import ConfigError, DataError
from .signal import Peak, ProcessedSession, Series

FEATURE_COLUMNS = [
    "sum_peaks", "mean", "max_peak", "n_peaks", "mean_abs", "rms",
    "min_peak", "std_dev", "force", "occlusion_pressure", "muscle_tension",
]
LABEL_COLUMNS = ["psm_mean", "psm_mode", "vas"]
COLUMNS = FEATURE_COLUMNS + LABEL_COLUMNS

CSV_HEADER = ["subject", "window"] + COLUMNS


def window_indices(length: int, rate: float, window_s: float = 10.0
                   ) -> list[tuple[int, int]]:
    """Contiguous, non-overlapping [start, stop) ranges of one window each.

    A trailing partial window is discarded.
    """
    w = rate * window_s
    if abs(w - round(w)) > 1e-9 or round(w) < 1:
        raise ConfigError(
            f"rate * window_s must be an integer >= 1, got {w}"
        )
    w = int(round(w))
    return [(i, i + w) for i in range(0, length - w + 1, w)]


def extract_window_features(phasic: Series, peaks: list[Peak],
                            rng: tuple[int, int],
                            config: SessionConfig) -> np.ndarray:
    """The 11-entry feature vector for one window.

    Statistics are taken over the phasic samples in the window (std_dev
    with the n-1 denominator); peak statistics over the trough-to-peak
    amplitudes of peaks whose index lies in the window, zeros when the
    window has none.
    """
    start, stop = rng
    if not (0 <= start < stop <= len(phasic)):
        raise DataError(f"window [{start}, {stop}) outside series")
    x = phasic.values[start:stop]
    amps = np.array([p.amplitude for p in peaks if start <= p.index < stop])

    mean = float(np.mean(x))
    mean_abs = float(np.mean(np.abs(x)))
    rms = float(np.sqrt(np.mean(x * x)))
    std_dev = float(np.std(x, ddof=1)) if x.size > 1 else 0.0

    if amps.size:
        sum_peaks = float(np.sum(amps))
        max_peak = float(np.max(amps))
        min_peak = float(np.min(amps))
    else:
        sum_peaks = max_peak = min_peak = 0.0

    return np.array([
        sum_peaks, mean, max_peak, float(amps.size), mean_abs, rms,
        min_peak, std_dev, config.mvc_force, config.occlusion_pressure,
        config.stretch_force,
    ])


def fuse_labels(psm: Series, rng: tuple[int, int],
                vas_post: float) -> tuple[float, float, float]:
    """(windowed mean, windowed maximum, broadcast VAS) for one window.

    The mean is the window integral normalized by its length, keeping the
    0-10 cm unit shared with the maximum and the VAS.
    """
    start, stop = rng
    if not (0 <= start < stop <= len(psm)):
        raise DataError(f"window [{start}, {stop}) outside series")
    x = psm.values[start:stop]
    return float(np.mean(x)), float(np.max(x)), float(vas_post)


@dataclass
class DatasetMatrix:
    """Feature/label rows with per-row subject provenance."""

    subjects: list[str]
    windows: np.ndarray   # per-row window index within the subject
    values: np.ndarray    # (n_rows, 14) in COLUMNS order

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.windows = np.asarray(self.windows, dtype=np.int64)
        if self.values.ndim != 2 or self.values.shape[1] != len(COLUMNS):
            raise DataError(
                f"dataset must have {len(COLUMNS)} columns, "
                f"got shape {self.values.shape}"
            )
        if len(self.subjects) != self.values.shape[0] \
                or self.windows.size != self.values.shape[0]:
            raise DataError("provenance length does not match row count")

    def __len__(self):
        return self.values.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, COLUMNS.index(name)]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_HEADER)
            for subj, win, row in zip(self.subjects, self.windows, self.values):
                writer.writerow([subj, int(win)] + [repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path: str | Path) -> "DatasetMatrix":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != CSV_HEADER:
                raise DataError(f"unexpected dataset header: {header}")
            subjects, windows, rows = [], [], []
            for rec in reader:
                if not rec:
                    continue
                subjects.append(rec[0])
                windows.append(int(rec[1]))
                rows.append([float(v) for v in rec[2:]])
        values = np.array(rows, dtype=np.float64) if rows \
            else np.empty((0, len(COLUMNS)))
        return cls(subjects=subjects, windows=np.array(windows, dtype=np.int64),
                   values=values)


def subject_rows(processed: ProcessedSession,
                 window_s: float = 10.0) -> np.ndarray:
    """All (14,) rows for one processed session, in window order."""
    rate = processed.phasic.rate
    if abs(rate - processed.psm_filtered_cm.rate) > 1e-12:
        raise ConfigError("phasic and PSM series must share a sample rate")
    n = min(len(processed.phasic), len(processed.psm_filtered_cm))
    ranges = window_indices(n, rate, window_s)
    rows = np.empty((len(ranges), len(COLUMNS)))
    for i, rng in enumerate(ranges):
        feats = extract_window_features(
            processed.phasic, processed.peaks, rng, processed.config
        )
        labels = fuse_labels(processed.psm_filtered_cm, rng,
                             processed.config.vas_post)
        rows[i, :len(FEATURE_COLUMNS)] = feats
        rows[i, len(FEATURE_COLUMNS):] = labels
    return rows


def assemble_dataset(sessions: list[ProcessedSession],
                     window_s: float = 10.0) -> DatasetMatrix:
    """Concatenate per-window rows across subjects, provenance retained."""
    rates = {s.phasic.rate for s in sessions}
    if len(rates) > 1:
        raise ConfigError(f"sessions disagree on sample rate: {sorted(rates)}")
    subjects: list[str] = []
    windows: list[int] = []
    blocks: list[np.ndarray] = []
    for session in sessions:
        rows = subject_rows(session, window_s)
        blocks.append(rows)
        subjects += [session.config.subject_id] * rows.shape[0]
        windows += list(range(rows.shape[0]))
    values = np.vstack(blocks) if blocks else np.empty((0, len(COLUMNS)))
    return DatasetMatrix(subjects=subjects,
                         windows=np.array(windows, dtype=np.int64),
                         values=values)
