"""Golden confusion matrices with independently verified metric values.

These three pooled 10-fold confusion matrices come from the selected
random-forest configurations (one per ground-truth modality) and anchor
the metric implementations: the expected weighted TPR values are exact
rationals, the geometric-mean and per-class values were recomputed with
exact rational arithmetic and 30-digit decimal square roots.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .evaluation import class_report, macro_gmean, weighted_tpr


@dataclass(frozen=True)
class GoldenCase:
    name: str
    target: str
    top_k: int
    bag_percent: int
    cm: tuple            # rows = actual (low, medium, high)
    wtpr: float          # exact diagonal / total
    wtpr_reported: float
    gmean: float         # brute-force oracle value
    gmean_reported: float
    tp_rate: tuple       # reported per-class values, 2 dp
    fp_rate: tuple
    precision: tuple
    f_measure: tuple


GOLDEN_CASES = (
    GoldenCase(
        name="rf_psm_mean_k3_bag23",
        target="psm_mean", top_k=3, bag_percent=23,
        cm=((152, 50, 31), (32, 99, 23), (14, 10, 143)),
        wtpr=394 / 554, wtpr_reported=0.7111,
        gmean=0.781720594114066, gmean_reported=0.783,
        tp_rate=(0.65, 0.64, 0.85),
        fp_rate=(0.14, 0.15, 0.14),
        precision=(0.76, 0.62, 0.72),
        f_measure=(0.70, 0.63, 0.78),
    ),
    GoldenCase(
        name="rf_psm_mode_k3_bag28",
        target="psm_mode", top_k=3, bag_percent=28,
        cm=((152, 50, 32), (34, 100, 18), (17, 10, 141)),
        wtpr=393 / 554, wtpr_reported=0.7093,
        gmean=0.780605261637190, gmean_reported=0.779,
        tp_rate=(0.65, 0.65, 0.83),
        fp_rate=(0.15, 0.14, 0.13),
        precision=(0.74, 0.62, 0.73),
        f_measure=(0.69, 0.64, 0.78),
    ),
    GoldenCase(
        name="rf_vas_k4_bag17",
        target="vas", top_k=4, bag_percent=17,
        cm=((71, 15, 27), (7, 83, 58), (13, 28, 252)),
        wtpr=406 / 554, wtpr_reported=0.7328,
        gmean=0.748048745313229, gmean_reported=0.746,
        tp_rate=(0.62, 0.56, 0.86),
        fp_rate=(0.04, 0.10, 0.32),
        precision=(0.78, 0.65, 0.74),
        f_measure=(0.69, 0.60, 0.80),
    ),
)

WTPR_TOL = 1e-4          # 0.01 percentage points against the exact rational
GMEAN_ORACLE_TOL = 1e-9  # against the recomputed oracle value
GMEAN_REPORTED_TOL = 0.005   # 0.5 percentage points against reported scores
RATE_TOL = 0.01          # per-class rates are reported to 2 dp


@dataclass
class GoldenCheck:
    case: str
    metric: str
    got: float
    want: float
    tol: float

    @property
    def ok(self) -> bool:
        return abs(self.got - self.want) <= self.tol


def run_golden_checks() -> list[GoldenCheck]:
    """Recompute every golden metric; returns one check per comparison."""
    checks = []
    for case in GOLDEN_CASES:
        cm = np.array(case.cm, dtype=np.int64)
        wtpr = weighted_tpr(cm)
        checks.append(GoldenCheck(case.name, "weighted_tpr", wtpr,
                                  case.wtpr, WTPR_TOL))
        gm = macro_gmean(cm)
        checks.append(GoldenCheck(case.name, "macro_gmean[oracle]", gm,
                                  case.gmean, GMEAN_ORACLE_TOL))
        checks.append(GoldenCheck(case.name, "macro_gmean[reported]", gm,
                                  case.gmean_reported, GMEAN_REPORTED_TOL))
        report = class_report(cm)
        for cls, cls_name in enumerate(("low", "medium", "high")):
            pairs = [
                ("tp_rate", report.tp_rate[cls], case.tp_rate[cls]),
                ("fp_rate", report.fp_rate[cls], case.fp_rate[cls]),
                ("precision", report.precision[cls], case.precision[cls]),
                ("f_measure", report.f_measure[cls], case.f_measure[cls]),
            ]
            for metric, got, want in pairs:
                checks.append(GoldenCheck(
                    case.name, f"{metric}[{cls_name}]", got, want, RATE_TOL
                ))
    return checks
