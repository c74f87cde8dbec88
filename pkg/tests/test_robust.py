import numpy as np
import pytest

from relieve.robust import MAD_EPS, weighted_median, wmad_normalize, wmad_stats


class TestWeightedMedian:
    def test_ordinary_median(self):
        assert weighted_median([1, 2, 3], [1, 1, 1]) == 2

    def test_heavy_tail_pulls_median(self):
        # total weight 7, half 3.5, crossed at the last value
        assert weighted_median([1, 2, 3], [1, 1, 5]) == 3

    def test_single_element(self):
        assert weighted_median([5], [0.3]) == 5

    def test_lower_median_for_even_counts(self):
        assert weighted_median([1, 2, 3, 4], [1, 1, 1, 1]) == 2

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            weighted_median([], [])

    def test_rejects_zero_total_weight(self):
        with pytest.raises(ValueError):
            weighted_median([1, 2], [0, 0])

    def test_rejects_negative_weight(self):
        with pytest.raises(ValueError):
            weighted_median([1, 2], [1, -1])

    def test_output_is_input_value(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            n = int(rng.integers(1, 40))
            v = rng.normal(size=n)
            w = rng.uniform(0, 1, size=n)
            w[rng.integers(n)] += 0.5  # ensure positive total
            assert weighted_median(v, w) in v

    def test_permutation_invariant(self):
        rng = np.random.default_rng(6)
        v = rng.normal(size=25)
        w = rng.uniform(0.1, 1, size=25)
        m = weighted_median(v, w)
        for _ in range(10):
            perm = rng.permutation(25)
            assert weighted_median(v[perm], w[perm]) == m


class TestWmadNormalize:
    def test_equal_weight_example(self):
        # sorted-list medians give m=3, s=1
        out = wmad_normalize([1, 2, 3, 4, 5], np.ones(5))
        assert np.allclose(out, [-2, -1, 0, 1, 2])

    def test_constant_map_guarded(self):
        out = wmad_normalize([4.0, 4.0, 4.0], [1.0, 2.0, 0.5])
        assert np.allclose(out, 0.0)

    def test_affine_invariance_examples(self):
        rng = np.random.default_rng(9)
        v = rng.uniform(1, 10, size=64).reshape(8, 8)
        w = rng.uniform(0.1, 2, size=(8, 8))
        base = wmad_normalize(v, w)
        for a, b in [(2.0, 0.0), (0.5, 3.0), (7.25, -1.5)]:
            assert np.max(np.abs(wmad_normalize(a * v + b, w) - base)) < 1e-12

    def test_affine_invariance_random(self):
        # depth-like draws: positive values with non-degenerate spread
        rng = np.random.default_rng(10)
        for _ in range(300):
            n = int(rng.integers(4, 50))
            v = rng.uniform(0.5, 10.0, size=n)
            w = rng.uniform(0.05, 2, size=n)
            a = 10.0 ** rng.uniform(-1, 1)
            b = rng.uniform(-0.5, 0.5) * float(v.mean())
            d = np.max(np.abs(wmad_normalize(a * v + b, w) - wmad_normalize(v, w)))
            assert d < 1e-12

    def test_output_weighted_median_zero(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            v = rng.uniform(1, 10, size=30)
            w = rng.uniform(0.1, 1, size=30)
            out = wmad_normalize(v, w)
            assert abs(weighted_median(out, w)) < 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            wmad_normalize(np.ones((2, 3)), np.ones((3, 2)))

    def test_stats_floor(self):
        m, s = wmad_stats(np.full(10, 2.5), np.ones(10))
        assert m == 2.5
        assert s == MAD_EPS
