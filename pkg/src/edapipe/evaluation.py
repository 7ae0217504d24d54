"""Stratified cross-validation and imbalance-aware confusion-matrix metrics.

All fold predictions are pooled into a single 3x3 confusion matrix
(rows = actual, columns = predicted) before any metric is computed. The
headline metrics are the prevalence-weighted true-positive rate (equal
to overall accuracy) and the macro-averaged geometric mean of per-class
sensitivity and specificity, which stays honest under class imbalance.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .features import DatasetMatrix, FEATURE_COLUMNS
from .models import MlpConfig, RfConfig, predict_batch, train_mlp, train_rf
from .select import (encode_class, min_max_normalize, rank_features,
                     select_top_k, transform_with)

N_CLASSES = 3
CLASS_NAMES = ["low", "medium", "high"]


def _check_cm(cm: np.ndarray) -> np.ndarray:
    cm = np.asarray(cm)
    if cm.shape != (N_CLASSES, N_CLASSES):
        raise DataError(f"confusion matrix must be 3x3, got {cm.shape}")
    if np.any(cm < 0) or not np.issubdtype(cm.dtype, np.integer):
        if not np.all(cm == np.floor(cm)) or np.any(cm < 0):
            raise DataError("confusion matrix must hold nonnegative integers")
    cm = cm.astype(np.int64)
    if cm.sum() == 0:
        raise DataError("confusion matrix is empty")
    return cm


def confusion_matrix(y_true: np.ndarray, y_pred: np.ndarray) -> np.ndarray:
    """Counts of actual (rows) versus predicted (columns)."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise DataError("y_true and y_pred disagree on length")
    cm = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def load_cm_csv(path: str | Path) -> np.ndarray:
    """Read a 3x3 confusion matrix from CSV (optional header row/column)."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.reader(fh):
            cells = [c.strip() for c in rec if c.strip() != ""]
            if not cells:
                continue
            try:
                rows.append([int(c) for c in cells[-N_CLASSES:]])
            except ValueError:
                continue  # header row
    if len(rows) != N_CLASSES:
        raise DataError(f"expected {N_CLASSES} integer rows in {path}")
    return _check_cm(np.array(rows))


def weighted_tpr(cm: np.ndarray) -> float:
    """Prevalence-weighted mean of per-class TPR = trace / total."""
    cm = _check_cm(cm)
    return float(np.trace(cm) / cm.sum())


@dataclass
class GmeanDetail:
    sensitivity: np.ndarray
    specificity: np.ndarray
    per_class: np.ndarray     # sqrt(sens * spec), degenerate classes 0
    degenerate: list[str] = field(default_factory=list)


def macro_gmean_detail(cm: np.ndarray) -> GmeanDetail:
    cm = _check_cm(cm)
    total = cm.sum()
    sens = np.zeros(N_CLASSES)
    spec = np.zeros(N_CLASSES)
    per_class = np.zeros(N_CLASSES)
    flags = []
    for i in range(N_CLASSES):
        rowsum = cm[i].sum()
        colsum = cm[:, i].sum()
        if rowsum == 0:
            flags.append(f"{CLASS_NAMES[i]}: no actual rows")
            continue
        if total == rowsum:
            flags.append(f"{CLASS_NAMES[i]}: empty complement")
            continue
        sens[i] = cm[i, i] / rowsum
        spec[i] = 1.0 - (colsum - cm[i, i]) / (total - rowsum)
        per_class[i] = np.sqrt(sens[i] * spec[i])
    return GmeanDetail(sensitivity=sens, specificity=spec,
                       per_class=per_class, degenerate=flags)


def macro_gmean(cm: np.ndarray) -> float:
    """Mean over classes of sqrt(sensitivity x specificity)."""
    return float(macro_gmean_detail(cm).per_class.mean())


def roc_auc_ovr(y_true: np.ndarray, scores: np.ndarray,
                positive: int) -> float:
    """One-vs-rest ROC area by trapezoidal sweep over score thresholds."""
    y = (np.asarray(y_true, dtype=np.int64) == positive)
    s = np.asarray(scores, dtype=np.float64)[:, positive]
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("ROC area needs both positive and negative rows")
    order = np.argsort(-s, kind="stable")
    y_sorted = y[order]
    s_sorted = s[order]
    # Cumulative counts at each distinct threshold (ties grouped).
    boundary = np.append(np.flatnonzero(np.diff(s_sorted) != 0), s.size - 1)
    tp = np.cumsum(y_sorted)[boundary]
    fp = np.cumsum(~y_sorted)[boundary]
    tpr = np.concatenate([[0.0], tp / n_pos])
    fpr = np.concatenate([[0.0], fp / n_neg])
    return float(np.trapezoid(tpr, fpr))


@dataclass
class ClassReport:
    """Per-class rates in class order low, medium, high."""

    tp_rate: np.ndarray
    fp_rate: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f_measure: np.ndarray
    roc_area: np.ndarray | None = None   # absent without score outputs
    flags: list[str] = field(default_factory=list)


def class_report(cm: np.ndarray, y_true: np.ndarray | None = None,
                 scores: np.ndarray | None = None) -> ClassReport:
    """Per-class TPR/FPR/precision/recall/F1, plus ROC area when scores
    for the evaluated rows are supplied."""
    cm = _check_cm(cm)
    total = cm.sum()
    tp_rate = np.zeros(N_CLASSES)
    fp_rate = np.zeros(N_CLASSES)
    precision = np.zeros(N_CLASSES)
    f_measure = np.zeros(N_CLASSES)
    flags = []
    for i in range(N_CLASSES):
        rowsum = cm[i].sum()
        colsum = cm[:, i].sum()
        tp = cm[i, i]
        if rowsum > 0:
            tp_rate[i] = tp / rowsum
        else:
            flags.append(f"{CLASS_NAMES[i]}: no actual rows")
        if total > rowsum:
            fp_rate[i] = (colsum - tp) / (total - rowsum)
        if colsum > 0:
            precision[i] = tp / colsum
        else:
            flags.append(f"{CLASS_NAMES[i]}: no predicted rows, precision "
                         "undefined (reported 0)")
        denom = precision[i] + tp_rate[i]
        f_measure[i] = 2 * precision[i] * tp_rate[i] / denom if denom > 0 else 0.0

    roc = None
    if scores is not None:
        if y_true is None:
            raise ConfigError("ROC area needs y_true alongside scores")
        roc = np.array([
            roc_auc_ovr(y_true, scores, positive=i) for i in range(N_CLASSES)
        ])
    return ClassReport(tp_rate=tp_rate, fp_rate=fp_rate, precision=precision,
                       recall=tp_rate.copy(), f_measure=f_measure,
                       roc_area=roc, flags=flags)


# ---------------------------------------------------------------------------
# Stratified folds


@dataclass
class FoldPlan:
    k: int
    folds: list[np.ndarray]   # row indices per fold
    seed: int
    warnings: list[str] = field(default_factory=list)

    def train_test(self, fold: int) -> tuple[np.ndarray, np.ndarray]:
        test = self.folds[fold]
        train = np.concatenate([f for i, f in enumerate(self.folds) if i != fold])
        return np.sort(train), np.sort(test)


def stratified_folds(labels: np.ndarray, k: int = 10, seed: int = 0) -> FoldPlan:
    """Seeded shuffle within each class, then round-robin fold assignment.

    Per-class fold counts differ by at most one; classes with fewer than
    k rows are flagged (some folds will miss them).
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise DataError("empty label set")
    if k < 2:
        raise ConfigError("k: must be >= 2")
    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    warnings = []
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        if idx.size < k:
            warnings.append(
                f"class {int(cls)} has {idx.size} rows for {k} folds"
            )
        idx = rng.permutation(idx)
        for pos, row in enumerate(idx):
            folds[pos % k].append(int(row))
    return FoldPlan(
        k=k,
        folds=[np.array(sorted(f), dtype=np.int64) for f in folds],
        seed=seed,
        warnings=warnings,
    )


# ---------------------------------------------------------------------------
# Cross-validated pipeline evaluation


@dataclass
class CvResult:
    target: str
    model_kind: str
    top_k: int
    selected_features: list[str]
    cm: np.ndarray
    weighted_tpr: float
    macro_gmean: float
    report: ClassReport
    fold_plan: FoldPlan
    warnings: list[str] = field(default_factory=list)


def _train_predict(model_config, X_train, y_train, X_test):
    if hasattr(model_config, "train_predict"):
        return model_config.train_predict(X_train, y_train, X_test)
    if isinstance(model_config, MlpConfig):
        model = train_mlp(X_train, y_train, model_config)
    elif isinstance(model_config, RfConfig):
        model = train_rf(X_train, y_train, model_config)
    else:
        raise ConfigError(f"unknown model config: {type(model_config).__name__}")
    return predict_batch(model, X_test)


def run_cv(dataset: DatasetMatrix, target: str, model_config,
           top_k: int | None = None, k_folds: int = 10, seed: int = 0,
           normalization: str = "full") -> CvResult:
    """Stratified k-fold evaluation of one model configuration.

    ``normalization="full"`` fits min-max on the whole matrix before the
    folds are formed (the pipeline's documented order of operations);
    ``"per_fold"`` refits feature normalization on each training split
    and clips the held-out rows into [0, 1], removing that leak. Class
    encoding always derives from the full-matrix normalization so every
    fold predicts the same three classes.
    """
    if normalization not in ("full", "per_fold"):
        raise ConfigError(f"normalization: unknown mode {normalization!r}")
    if len(dataset) < k_folds:
        raise DataError("dataset has fewer rows than folds")

    normalized = min_max_normalize(dataset.values)
    y = encode_class(normalized.column(target))
    ranking = rank_features(normalized, target)
    if top_k is None:
        top_k = len(FEATURE_COLUMNS)
    feat_idx = select_top_k(ranking, top_k)
    selected = [FEATURE_COLUMNS[j] for j in feat_idx]

    if isinstance(model_config, MlpConfig) \
            and model_config.input_dim != top_k:
        raise ConfigError(
            f"MlpConfig.input_dim {model_config.input_dim} != top_k {top_k}"
        )

    plan = stratified_folds(y, k=k_folds, seed=seed)
    warnings = list(plan.warnings)

    feature_block = dataset.values[:, :len(FEATURE_COLUMNS)]
    X_full = normalized.values[:, :len(FEATURE_COLUMNS)][:, feat_idx]

    cm = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    all_scores = np.zeros((len(dataset), N_CLASSES))
    for fold in range(k_folds):
        train_idx, test_idx = plan.train_test(fold)
        if np.unique(y[train_idx]).size < N_CLASSES:
            warnings.append(f"fold {fold}: training split misses a class")
        if normalization == "full":
            X_train, X_test = X_full[train_idx], X_full[test_idx]
        else:
            fitted = min_max_normalize(feature_block[train_idx])
            X_train = fitted.values[:, feat_idx]
            X_test = transform_with(feature_block[test_idx], fitted)[:, feat_idx]
        preds, scores = _train_predict(model_config, X_train, y[train_idx],
                                       X_test)
        cm += confusion_matrix(y[test_idx], preds)
        all_scores[test_idx] = scores

    if isinstance(model_config, MlpConfig):
        kind = "mlp"
    elif isinstance(model_config, RfConfig):
        kind = "rf"
    else:
        kind = getattr(model_config, "kind", "stub")

    report = class_report(cm, y_true=y, scores=all_scores)
    return CvResult(
        target=target,
        model_kind=kind,
        top_k=top_k,
        selected_features=selected,
        cm=cm,
        weighted_tpr=weighted_tpr(cm),
        macro_gmean=macro_gmean(cm),
        report=report,
        fold_plan=plan,
        warnings=warnings,
    )


# ---------------------------------------------------------------------------
# Configuration grids


MLP_FEATURE_GRID = (3, 4, 7)
MLP_HIDDEN_GRID = (10, 50, 100)

# (top_k, bag_percent) pairs evaluated per target, keyed by target.
RF_GRID = {
    "psm_mean": [(3, 17), (3, 23), (4, 23), (7, 23)],
    "psm_mode": [(3, 17), (3, 23), (3, 28), (4, 23), (7, 23)],
    "vas": [(3, 17), (3, 23), (3, 28), (4, 17), (7, 23)],
}


def grid_configs(target: str, family: str, seed: int = 0):
    """(top_k, model config) pairs of the standard sweep for one target."""
    if family == "mlp":
        return [
            (k, MlpConfig(input_dim=k, hidden_nodes=h, seed=seed))
            for k in MLP_FEATURE_GRID for h in MLP_HIDDEN_GRID
        ]
    if family == "rf":
        return [
            (k, RfConfig(bag_percent=float(bag), seed=seed))
            for k, bag in RF_GRID[target]
        ]
    raise ConfigError(f"family: must be mlp or rf, got {family!r}")
