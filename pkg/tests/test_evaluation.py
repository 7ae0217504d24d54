import numpy as np
import pytest

from edapipe.errors import ConfigError, DataError
from edapipe.evaluation import (class_report, confusion_matrix,
                                grid_configs, load_cm_csv, macro_gmean,
                                macro_gmean_detail, roc_auc_ovr, run_cv,
                                stratified_folds, weighted_tpr)
from edapipe.goldens import GOLDEN_CASES
from edapipe.models import RfConfig
from edapipe.select import encode_class

CM_PSM_MEAN = np.array([[152, 50, 31], [32, 99, 23], [14, 10, 143]])
CM_PSM_MODE = np.array([[152, 50, 32], [34, 100, 18], [17, 10, 141]])
CM_VAS = np.array([[71, 15, 27], [7, 83, 58], [13, 28, 252]])


def brute_gmean(cm):
    """Direct per-class sensitivity/specificity from first principles."""
    cm = np.asarray(cm, dtype=float)
    total = cm.sum()
    acc = 0.0
    for i in range(3):
        tp = cm[i, i]
        fn = cm[i].sum() - tp
        fp = cm[:, i].sum() - tp
        tn = total - tp - fn - fp
        sens = tp / (tp + fn) if tp + fn else 0.0
        spec = tn / (tn + fp) if tn + fp else 0.0
        acc += np.sqrt(sens * spec)
    return acc / 3


class TestWeightedTpr:
    def test_golden_psm_mean(self):
        assert weighted_tpr(CM_PSM_MEAN) == pytest.approx(394 / 554, abs=1e-12)
        assert f"{weighted_tpr(CM_PSM_MEAN):.4f}" == "0.7112"

    def test_golden_vas(self):
        assert weighted_tpr(CM_VAS) == pytest.approx(406 / 554, abs=1e-12)
        assert f"{weighted_tpr(CM_VAS):.4f}" == "0.7329"

    def test_identity_diag(self):
        assert weighted_tpr(np.diag([10, 10, 10])) == 1.0

    def test_equals_trace_over_total(self, rng):
        for _ in range(50):
            cm = rng.integers(0, 40, (3, 3))
            if cm.sum() == 0:
                continue
            assert weighted_tpr(cm) == pytest.approx(
                np.trace(cm) / cm.sum(), abs=1e-15)

    def test_empty_matrix_rejected(self):
        with pytest.raises(DataError):
            weighted_tpr(np.zeros((3, 3), dtype=int))


class TestMacroGmean:
    def test_golden_values_match_brute_force(self):
        for cm, expected in [(CM_PSM_MEAN, 0.781720594114066),
                             (CM_PSM_MODE, 0.780605261637190),
                             (CM_VAS, 0.748048745313229)]:
            got = macro_gmean(cm)
            assert got == pytest.approx(expected, abs=1e-12)
            assert got == pytest.approx(brute_gmean(cm), abs=1e-12)

    def test_reported_scores_within_half_point(self):
        assert macro_gmean(CM_PSM_MEAN) == pytest.approx(0.783, abs=0.005)
        assert macro_gmean(CM_PSM_MODE) == pytest.approx(0.779, abs=0.005)
        assert macro_gmean(CM_VAS) == pytest.approx(0.746, abs=0.005)

    def test_perfect_diagonal_is_one(self):
        assert macro_gmean(np.diag([5, 9, 2])) == 1.0

    def test_scale_invariance(self, rng):
        for _ in range(20):
            cm = rng.integers(1, 30, (3, 3))
            assert macro_gmean(cm * 7) == pytest.approx(macro_gmean(cm),
                                                        abs=1e-12)

    def test_at_most_one_iff_diagonal(self, rng):
        for _ in range(50):
            cm = rng.integers(0, 30, (3, 3))
            np.fill_diagonal(cm, cm.diagonal() + 1)
            g = macro_gmean(cm)
            assert g <= 1.0 + 1e-12
            off_diag = cm.sum() - np.trace(cm)
            if off_diag == 0:
                assert g == pytest.approx(1.0, abs=1e-12)
            else:
                assert g < 1.0

    def test_degenerate_empty_row_contributes_zero(self):
        cm = np.array([[0, 0, 0], [0, 10, 0], [0, 0, 10]])
        detail = macro_gmean_detail(cm)
        assert detail.per_class[0] == 0.0
        assert any("no actual rows" in f for f in detail.degenerate)
        assert macro_gmean(cm) == pytest.approx(
            (0 + detail.per_class[1] + detail.per_class[2]) / 3, abs=1e-12)


class TestClassReport:
    @pytest.mark.parametrize("cm,tp,fp", [
        (CM_PSM_MEAN, (0.65, 0.64, 0.85), (0.14, 0.15, 0.14)),
        (CM_PSM_MODE, (0.65, 0.65, 0.83), (0.15, 0.14, 0.13)),
        (CM_VAS, (0.62, 0.56, 0.86), (0.04, 0.10, 0.32)),
    ])
    def test_golden_rates(self, cm, tp, fp):
        report = class_report(cm)
        for i in range(3):
            assert report.tp_rate[i] == pytest.approx(tp[i], abs=0.01)
            assert report.fp_rate[i] == pytest.approx(fp[i], abs=0.01)

    def test_recall_equals_tp_rate(self, rng):
        for _ in range(20):
            cm = rng.integers(0, 25, (3, 3))
            if cm.sum() == 0:
                continue
            report = class_report(cm)
            assert np.array_equal(report.recall, report.tp_rate)

    def test_zero_predicted_positive_flags_precision(self):
        cm = np.array([[5, 0, 5], [5, 0, 5], [0, 0, 10]])
        report = class_report(cm)
        assert report.precision[1] == 0.0
        assert any("no predicted rows" in f for f in report.flags)

    def test_roc_absent_without_scores(self):
        assert class_report(CM_VAS).roc_area is None

    def test_perfectly_separable_scores_auc_one(self):
        y = np.array([0, 0, 1, 1, 2, 2])
        scores = np.eye(3)[y] * 0.8 + 0.1
        report = class_report(confusion_matrix(y, y), y_true=y, scores=scores)
        assert np.allclose(report.roc_area, 1.0)

    def test_constant_scores_auc_half(self):
        y = np.array([0, 1, 2, 0, 1, 2])
        scores = np.full((6, 3), 1 / 3)
        assert roc_auc_ovr(y, scores, 0) == pytest.approx(0.5)

    def test_reversed_scores_auc_zero(self):
        y = np.array([0, 0, 1, 1])
        scores = np.array([[0.1, 0.9, 0], [0.2, 0.8, 0],
                           [0.8, 0.2, 0], [0.9, 0.1, 0]])
        assert roc_auc_ovr(y, scores, 0) == pytest.approx(0.0)


class TestLoadCmCsv:
    def test_plain_and_labeled(self, tmp_path):
        plain = tmp_path / "plain.csv"
        plain.write_text("152,50,31\n32,99,23\n14,10,143\n")
        assert np.array_equal(load_cm_csv(plain), CM_PSM_MEAN)
        labeled = tmp_path / "labeled.csv"
        labeled.write_text("actual,low,medium,high\n"
                           "low,152,50,31\nmedium,32,99,23\nhigh,14,10,143\n")
        assert np.array_equal(load_cm_csv(labeled), CM_PSM_MEAN)

    def test_wrong_shape_rejected(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("1,2\n3,4\n")
        with pytest.raises(DataError):
            load_cm_csv(bad)


class TestStratifiedFolds:
    def test_exact_divisibility(self):
        labels = np.array([0] * 100 + [1] * 50)
        plan = stratified_folds(labels, k=10, seed=1)
        for fold in plan.folds:
            assert np.sum(labels[fold] == 0) == 10
            assert np.sum(labels[fold] == 1) == 5

    def test_pigeonhole_23_rows(self):
        labels = np.zeros(23, dtype=int)
        labels[:5] = 1  # second class so the plan is non-trivial
        plan = stratified_folds(labels, k=10, seed=3)
        counts = [int(np.sum(labels[f] == 0)) for f in plan.folds]
        assert set(counts) <= {1, 2}
        assert sum(counts) == 18
        # brute-force: max difference of per-class counts across folds <= 1
        assert max(counts) - min(counts) <= 1

    def test_deterministic(self):
        labels = np.array([0, 1, 2] * 40)
        a = stratified_folds(labels, k=10, seed=5)
        b = stratified_folds(labels, k=10, seed=5)
        assert all(np.array_equal(x, y) for x, y in zip(a.folds, b.folds))

    def test_disjoint_union_complete(self, rng):
        labels = rng.integers(0, 3, 157)
        plan = stratified_folds(labels, k=10, seed=2)
        allidx = np.concatenate(plan.folds)
        assert len(allidx) == 157
        assert len(set(allidx.tolist())) == 157

    def test_small_class_warns(self):
        labels = np.array([0] * 50 + [1] * 4)
        plan = stratified_folds(labels, k=10, seed=0)
        assert any("4 rows" in w for w in plan.warnings)

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            stratified_folds(np.array([]), k=10, seed=0)

    def test_train_test_partition(self):
        labels = np.array([0, 1, 2] * 20)
        plan = stratified_folds(labels, k=5, seed=7)
        train, test = plan.train_test(2)
        assert set(train) | set(test) == set(range(60))
        assert set(train) & set(test) == set()


class _PerfectOracle:
    """Recovers the encoded class from the (top-ranked) label-clone feature."""

    kind = "stub"

    def train_predict(self, X_train, y_train, X_test):
        preds = encode_class(np.clip(X_test[:, 0], 0.0, 1.0))
        return preds, np.eye(3)[preds]


class _ConstantStub:
    kind = "stub"

    def __init__(self, cls):
        self.cls = cls

    def train_predict(self, X_train, y_train, X_test):
        preds = np.full(len(X_test), self.cls, dtype=np.int64)
        return preds, np.eye(3)[preds]


def oracle_dataset(cohort15_dataset):
    """Dataset whose rms feature exactly copies the psm_mean label."""
    from edapipe.features import COLUMNS, DatasetMatrix
    values = cohort15_dataset.values.copy()
    values[:, COLUMNS.index("rms")] = values[:, COLUMNS.index("psm_mean")]
    return DatasetMatrix(subjects=list(cohort15_dataset.subjects),
                         windows=cohort15_dataset.windows.copy(),
                         values=values)


class TestRunCv:
    def test_perfect_oracle_scores_one(self, cohort15_dataset):
        ds = oracle_dataset(cohort15_dataset)
        result = run_cv(ds, "psm_mean", _PerfectOracle(), top_k=3, seed=1)
        assert result.selected_features[0] == "rms"
        assert result.weighted_tpr == 1.0
        assert result.macro_gmean == pytest.approx(1.0, abs=1e-12)

    def test_constant_stub_degenerates(self, cohort15_dataset):
        result = run_cv(cohort15_dataset, "psm_mean", _ConstantStub(1),
                        top_k=3, seed=1)
        detail = macro_gmean_detail(result.cm)
        assert detail.sensitivity[1] == 1.0
        assert detail.sensitivity[0] == detail.sensitivity[2] == 0.0
        assert result.macro_gmean == pytest.approx(0.0, abs=1e-12)

    def test_pooled_matrix_totals(self, cohort15_dataset):
        result = run_cv(cohort15_dataset, "psm_mode", _ConstantStub(0),
                        top_k=3, seed=1)
        assert result.cm.sum() == len(cohort15_dataset)

    def test_rf_deterministic(self, cohort15_dataset):
        cfg = RfConfig(n_trees=30, bag_percent=23.0, seed=5)
        a = run_cv(cohort15_dataset, "psm_mean", cfg, top_k=3, seed=5)
        b = run_cv(cohort15_dataset, "psm_mean", cfg, top_k=3, seed=5)
        assert np.array_equal(a.cm, b.cm)
        assert a.weighted_tpr == b.weighted_tpr

    def test_per_fold_normalization_mode(self, cohort15_dataset):
        cfg = RfConfig(n_trees=20, bag_percent=23.0, seed=5)
        result = run_cv(cohort15_dataset, "psm_mean", cfg, top_k=3, seed=5,
                        normalization="per_fold")
        assert result.cm.sum() == len(cohort15_dataset)
        assert 0.0 < result.weighted_tpr <= 1.0

    def test_unknown_normalization_rejected(self, cohort15_dataset):
        with pytest.raises(ConfigError):
            run_cv(cohort15_dataset, "vas", _ConstantStub(0), top_k=3,
                   normalization="weird")

    def test_mlp_input_dim_checked(self, cohort15_dataset):
        from edapipe.models import MlpConfig
        with pytest.raises(ConfigError):
            run_cv(cohort15_dataset, "vas", MlpConfig(input_dim=5, epochs=1),
                   top_k=3, seed=1)


class TestGrids:
    def test_mlp_grid_is_nine_configs(self):
        configs = grid_configs("psm_mean", "mlp", seed=1)
        assert len(configs) == 9
        assert {(k, c.hidden_nodes) for k, c in configs} == {
            (k, h) for k in (3, 4, 7) for h in (10, 50, 100)
        }

    def test_rf_grid_matches_reported_cells(self):
        assert len(grid_configs("psm_mean", "rf")) == 4
        assert len(grid_configs("psm_mode", "rf")) == 5
        assert len(grid_configs("vas", "rf")) == 5

    def test_golden_configs_present_in_grid(self):
        for case in GOLDEN_CASES:
            pairs = [(k, c.bag_percent) for k, c in
                     grid_configs(case.target, "rf")]
            assert (case.top_k, float(case.bag_percent)) in pairs
