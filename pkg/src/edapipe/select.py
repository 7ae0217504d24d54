"""Min-max normalization, 3-class label encoding, and filter feature ranking.

The label columns are normalized alongside the features and then cut
into equal-width thirds (low / medium / high). Features are ranked by
the p-value of a one-way ANOVA F-test of the feature grouped by the
encoded target class; small p means the feature separates the classes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np
from scipy import stats

from .errors import ConfigError, DataError
from .features import COLUMNS, FEATURE_COLUMNS, LABEL_COLUMNS

LOW_EDGE = 0.333333333
MEDIUM_EDGE = 0.666666666

P_CUTOFF_DEFAULT = 0.05


class ClassLabel(IntEnum):
    LOW = 0
    MEDIUM = 1
    HIGH = 2


@dataclass
class NormalizedMatrix:
    """Column-wise min-max normalized values plus inversion parameters."""

    values: np.ndarray        # (n, 14) in [0, 1]
    column_mins: np.ndarray
    column_maxs: np.ndarray
    zero_range: np.ndarray    # bool per column
    columns: list[str] = field(default_factory=lambda: list(COLUMNS))

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.columns.index(name)]

    def invert(self) -> np.ndarray:
        """Reconstruct the raw values from normalized ones."""
        span = self.column_maxs - self.column_mins
        return self.values * span + self.column_mins


def min_max_normalize(values: np.ndarray,
                      columns: list[str] | None = None) -> NormalizedMatrix:
    """Per-column (x - min) / (max - min); zero-range columns map to 0."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ConfigError(f"expected a 2-D matrix, got shape {values.shape}")
    if values.shape[0] < 2:
        raise DataError("min-max normalization needs at least 2 rows")
    mins = values.min(axis=0)
    maxs = values.max(axis=0)
    span = maxs - mins
    zero_range = span == 0
    safe = np.where(zero_range, 1.0, span)
    normed = (values - mins) / safe
    normed[:, zero_range] = 0.0
    return NormalizedMatrix(
        values=normed,
        column_mins=mins,
        column_maxs=maxs,
        zero_range=zero_range,
        columns=list(columns) if columns is not None else list(COLUMNS),
    )


def transform_with(values: np.ndarray, fitted: NormalizedMatrix,
                   clip: bool = True) -> np.ndarray:
    """Apply a fitted normalization to new rows (per-fold mode)."""
    span = fitted.column_maxs - fitted.column_mins
    safe = np.where(fitted.zero_range, 1.0, span)
    normed = (np.asarray(values, dtype=np.float64) - fitted.column_mins) / safe
    normed[:, fitted.zero_range] = 0.0
    return np.clip(normed, 0.0, 1.0) if clip else normed


def encode_class(normalized_label):
    """Cut a normalized label into LOW (<= 1/3), MEDIUM (<= 2/3), HIGH.

    Accepts scalars or arrays; values must lie in [0, 1].
    """
    v = np.asarray(normalized_label, dtype=np.float64)
    if np.any(v < 0.0) or np.any(v > 1.0):
        raise DataError("normalized label outside [0, 1]")
    codes = np.where(v <= LOW_EDGE, ClassLabel.LOW,
                     np.where(v <= MEDIUM_EDGE, ClassLabel.MEDIUM,
                              ClassLabel.HIGH)).astype(np.int64)
    if np.isscalar(normalized_label):
        return ClassLabel(int(codes))
    return codes


@dataclass
class FeatureRanking:
    """Features ordered by ascending p-value of the filter test."""

    order: list[int]              # feature indices, best first
    names: list[str]              # names in ranked order
    p_values: np.ndarray          # aligned with ``order``
    degenerate: np.ndarray        # bool, aligned with ``order``
    cutoff: float
    target: str

    @property
    def removable(self) -> list[str]:
        """Features whose p-value exceeds the cutoff."""
        return [n for n, p in zip(self.names, self.p_values) if p > self.cutoff]


def anova_p_value(feature: np.ndarray, classes: np.ndarray) -> tuple[float, bool]:
    """One-way ANOVA F-test p-value of feature grouped by class.

    Returns (p, degenerate). Degenerate cases (a present class with fewer
    than 2 rows, or no between-group variance) report p = 1.
    """
    groups = [feature[classes == c] for c in np.unique(classes)]
    if len(groups) < 2 or any(g.size < 2 for g in groups):
        return 1.0, True

    n = feature.size
    k = len(groups)
    grand = feature.mean()
    ss_between = sum(g.size * (g.mean() - grand) ** 2 for g in groups)
    ss_within = sum(float(np.sum((g - g.mean()) ** 2)) for g in groups)
    if ss_between <= 0.0:
        return 1.0, True
    if ss_within <= 0.0:
        # Perfect separation: the statistic diverges.
        return 0.0, False
    f_stat = (ss_between / (k - 1)) / (ss_within / (n - k))
    return float(stats.f.sf(f_stat, k - 1, n - k)), False


def rank_features(normalized: NormalizedMatrix, target: str,
                  cutoff: float = P_CUTOFF_DEFAULT) -> FeatureRanking:
    """Rank the 11 features against one encoded ground-truth column.

    Ties in p-value break toward the earlier feature-vector column, so
    ranking runs are deterministic.
    """
    if target not in LABEL_COLUMNS:
        raise ConfigError(f"target: must be one of {LABEL_COLUMNS}, got {target!r}")
    classes = encode_class(normalized.column(target))
    if np.unique(classes).size < 2:
        raise DataError(f"target {target} encodes into a single class")

    p_values = np.empty(len(FEATURE_COLUMNS))
    degenerate = np.zeros(len(FEATURE_COLUMNS), dtype=bool)
    for j, name in enumerate(FEATURE_COLUMNS):
        col = normalized.column(name)
        if normalized.zero_range[normalized.columns.index(name)]:
            p_values[j], degenerate[j] = 1.0, True
            continue
        p_values[j], degenerate[j] = anova_p_value(col, classes)

    order = sorted(range(len(FEATURE_COLUMNS)), key=lambda j: (p_values[j], j))
    return FeatureRanking(
        order=order,
        names=[FEATURE_COLUMNS[j] for j in order],
        p_values=p_values[order],
        degenerate=degenerate[order],
        cutoff=cutoff,
        target=target,
    )


def select_top_k(ranking: FeatureRanking, k: int) -> list[int]:
    """The first k ranked feature indices (feature-vector positions)."""
    if not 1 <= k <= len(ranking.order):
        raise ConfigError(
            f"k: must be in [1, {len(ranking.order)}], got {k}"
        )
    return ranking.order[:k]
