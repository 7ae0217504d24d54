import numpy as np
import pytest

from edapipe.errors import ConfigError, DataError
from edapipe.features import COLUMNS, FEATURE_COLUMNS
from edapipe.select import (ClassLabel, anova_p_value, encode_class,
                            min_max_normalize, rank_features, select_top_k,
                            transform_with)


def matrix_with(feature_cols: dict, labels: dict, n: int, rng) -> np.ndarray:
    """A 14-column matrix with given columns, noise elsewhere."""
    values = rng.uniform(0.5, 1.5, (n, len(COLUMNS)))
    for name, col in {**feature_cols, **labels}.items():
        values[:, COLUMNS.index(name)] = col
    return values


class TestMinMaxNormalize:
    def test_basic_column(self):
        m = np.array([[0.0], [5.0], [10.0]])
        out = min_max_normalize(m, columns=["x"])
        assert list(out.values[:, 0]) == [0.0, 0.5, 1.0]

    def test_uneven_column(self):
        m = np.array([[2.0], [4.0], [10.0]])
        out = min_max_normalize(m, columns=["x"])
        assert list(out.values[:, 0]) == [0.0, 0.25, 1.0]

    def test_constant_column_flagged(self):
        m = np.array([[3.0, 1.0], [3.0, 2.0], [3.0, 3.0]])
        out = min_max_normalize(m, columns=["c", "x"])
        assert list(out.values[:, 0]) == [0.0, 0.0, 0.0]
        assert out.zero_range.tolist() == [True, False]

    def test_single_row_rejected(self):
        with pytest.raises(DataError):
            min_max_normalize(np.array([[1.0, 2.0]]), columns=["a", "b"])

    def test_round_trip_inversion(self, rng):
        m = rng.uniform(-3, 40, (50, 6))
        out = min_max_normalize(m, columns=list("abcdef"))
        assert np.max(np.abs(out.invert() - m)) < 1e-12

    def test_values_in_unit_interval(self, rng):
        m = rng.normal(0, 100, (30, 4))
        out = min_max_normalize(m, columns=list("abcd"))
        assert out.values.min() >= 0.0 and out.values.max() <= 1.0

    def test_transform_with_clips_new_rows(self):
        m = np.array([[0.0], [10.0]])
        fitted = min_max_normalize(m, columns=["x"])
        new = transform_with(np.array([[-5.0], [5.0], [15.0]]), fitted)
        assert list(new[:, 0]) == [0.0, 0.5, 1.0]


class TestEncodeClass:
    @pytest.mark.parametrize("value,expected", [
        (0.0, ClassLabel.LOW),
        (0.333333333, ClassLabel.LOW),
        (0.333333334, ClassLabel.MEDIUM),
        (0.5, ClassLabel.MEDIUM),
        (0.666666666, ClassLabel.MEDIUM),
        (0.666666667, ClassLabel.HIGH),
        (1.0, ClassLabel.HIGH),
    ])
    def test_band_edges(self, value, expected):
        assert encode_class(value) is expected

    def test_array_form(self):
        out = encode_class(np.array([0.1, 0.5, 0.9]))
        assert out.tolist() == [0, 1, 2]

    def test_out_of_range(self):
        with pytest.raises(DataError):
            encode_class(1.0001)
        with pytest.raises(DataError):
            encode_class(-0.0001)

    def test_affine_invariance_through_normalization(self, rng):
        raw = rng.uniform(2, 9, 40)
        scaled = 3.7 * raw - 11.0
        a = encode_class(min_max_normalize(raw[:, None], ["x"]).values[:, 0])
        b = encode_class(min_max_normalize(scaled[:, None], ["x"]).values[:, 0])
        assert np.array_equal(a, b)


class TestAnovaPValue:
    def test_separating_feature_tiny_p(self, rng):
        classes = np.repeat([0, 1, 2], 20)
        feature = classes + rng.normal(0, 0.05, 60)
        p, degenerate = anova_p_value(feature, classes)
        assert not degenerate
        assert p < 1e-12

    def test_perfect_separation_p_zero(self):
        classes = np.repeat([0, 1, 2], 5)
        p, degenerate = anova_p_value(classes.astype(float), classes)
        assert p == 0.0 and not degenerate

    def test_tiny_class_degenerate(self, rng):
        classes = np.array([0] * 10 + [1])
        p, degenerate = anova_p_value(rng.normal(0, 1, 11), classes)
        assert p == 1.0 and degenerate

    def test_monte_carlo_calibration(self):
        # Independent noise should reject at roughly the nominal 5% rate.
        rng = np.random.default_rng(2024)
        classes = np.repeat([0, 1, 2], 20)
        hits = 0
        trials = 200
        for _ in range(trials):
            p, _ = anova_p_value(rng.normal(0, 1, 60), classes)
            if p < 0.05:
                hits += 1
        assert hits <= 0.10 * trials


class TestRankFeatures:
    def test_label_clone_ranked_first(self, rng):
        n = 90
        label = rng.uniform(0, 10, n)
        values = matrix_with({"rms": label.copy()}, {"psm_mean": label}, n, rng)
        ranking = rank_features(min_max_normalize(values), "psm_mean")
        assert ranking.names[0] == "rms"
        assert ranking.p_values[0] < 1e-30

    def test_constant_feature_flagged_last(self, rng):
        n = 60
        label = np.linspace(0, 10, n)
        values = matrix_with({"force": np.full(n, 5.0)}, {"psm_mean": label},
                             n, rng)
        ranking = rank_features(min_max_normalize(values), "psm_mean")
        pos = ranking.names.index("force")
        assert ranking.p_values[pos] == 1.0
        assert ranking.degenerate[pos]
        assert "force" in ranking.removable

    def test_p_values_sorted_ascending(self, rng):
        values = matrix_with({}, {"psm_mode": rng.uniform(0, 10, 80)}, 80, rng)
        ranking = rank_features(min_max_normalize(values), "psm_mode")
        assert np.all(np.diff(ranking.p_values) >= 0)

    def test_tie_break_by_column_order(self, rng):
        n = 60
        label = np.linspace(0, 10, n)
        clone = label.copy()
        values = matrix_with({"mean": clone, "std_dev": clone.copy()},
                             {"vas": label}, n, rng)
        ranking = rank_features(min_max_normalize(values), "vas")
        i_mean = ranking.names.index("mean")
        i_std = ranking.names.index("std_dev")
        assert ranking.p_values[i_mean] == ranking.p_values[i_std]
        assert i_mean < i_std  # "mean" is the earlier feature column

    def test_ranking_invariant_to_feature_rescale(self, rng):
        n = 100
        label = rng.uniform(0, 10, n)
        base = matrix_with({}, {"psm_mean": label}, n, rng)
        scaled = base.copy()
        j = COLUMNS.index("mean_abs")
        scaled[:, j] = 5.0 * scaled[:, j] + 2.0
        a = rank_features(min_max_normalize(base), "psm_mean")
        b = rank_features(min_max_normalize(scaled), "psm_mean")
        assert a.names == b.names

    def test_single_class_target_rejected(self, rng):
        # a zero-range label column normalizes to all zeros, one class
        values = matrix_with({}, {"vas": np.full(30, 0.1)}, 30, rng)
        with pytest.raises(DataError):
            rank_features(min_max_normalize(values), "vas")

    def test_unknown_target_rejected(self, rng):
        values = matrix_with({}, {}, 30, rng)
        with pytest.raises(ConfigError):
            rank_features(min_max_normalize(values), "rms")


class TestSelectTopK:
    def _ranking(self, rng):
        values = matrix_with({}, {"psm_mean": rng.uniform(0, 10, 60)}, 60, rng)
        return rank_features(min_max_normalize(values), "psm_mean")

    def test_k_equal_feature_count(self, rng):
        ranking = self._ranking(rng)
        assert sorted(select_top_k(ranking, 11)) == list(range(11))

    def test_k3_is_prefix(self, rng):
        ranking = self._ranking(rng)
        assert select_top_k(ranking, 3) == ranking.order[:3]

    def test_k_too_large(self, rng):
        with pytest.raises(ConfigError):
            select_top_k(self._ranking(rng), 12)

    @pytest.mark.parametrize("k", [3, 4, 7])
    def test_standard_grid_sizes(self, rng, k):
        names = [FEATURE_COLUMNS[j] for j in select_top_k(self._ranking(rng), k)]
        assert len(names) == k == len(set(names))
