"""Region-feature transform tests with a brute-force pooling oracle."""
import math

import numpy as np
import pytest

from oblique_fewshot import errors
from oblique_fewshot.pyramid import (
    encode_kqv,
    pyramid_pool,
    region_features,
    self_attend,
)


def pool_oracle(arr, levels):
    """Window-by-window max pooling, written as plain loops."""
    n, h, w = arr.shape
    out = []
    for i in range(1, levels + 1):
        sh, sw = h // i, w // i
        kh, kw = h - (i - 1) * sh, w - (i - 1) * sw
        level = np.zeros((n, i, i))
        for ch in range(n):
            for a in range(i):
                for b in range(i):
                    best = -math.inf
                    for r in range(a * sh, a * sh + kh):
                        for c in range(b * sw, b * sw + kw):
                            best = max(best, arr[ch, r, c])
                    level[ch, a, b] = best
        out.append(level)
    return out


class TestPyramidPool:
    def test_frozen_4x4(self):
        arr = np.arange(1.0, 17.0).reshape(1, 4, 4)
        levels = pyramid_pool(arr, 2)
        assert levels[0].shape == (1, 1, 1) and levels[0][0, 0, 0] == 16.0
        assert np.array_equal(levels[1][0], [[6.0, 8.0], [14.0, 16.0]])

    def test_constant_map(self):
        arr = np.full((3, 5, 5), 2.5)
        for level in pyramid_pool(arr, 4):
            assert np.all(level == 2.5)

    def test_matches_oracle(self):
        rng = np.random.default_rng(20)
        for _ in range(5):
            arr = rng.standard_normal((4, 7, 9))
            got = pyramid_pool(arr, 6)
            want = pool_oracle(arr, 6)
            for g, w in zip(got, want):
                assert np.array_equal(g, w)

    def test_level_shapes(self):
        arr = np.zeros((2, 12, 12))
        levels = pyramid_pool(arr, 11)
        for i, level in enumerate(levels, start=1):
            assert level.shape == (2, i, i)

    def test_too_deep(self):
        with pytest.raises(errors.PyramidTooDeep):
            pyramid_pool(np.zeros((1, 4, 4)), 5)
        # depth equal to the spatial size is admitted
        assert len(pyramid_pool(np.zeros((1, 4, 4)), 4)) == 4

    def test_bad_inputs(self):
        with pytest.raises(errors.OutOfRange):
            pyramid_pool(np.zeros((1, 4, 4)), 0)
        with pytest.raises(errors.ShapeMismatch):
            pyramid_pool(np.zeros((4, 4)), 2)
        with pytest.raises(errors.NonFinite):
            pyramid_pool(np.full((1, 2, 2), np.nan), 1)


class TestEncodeKqv:
    def test_constant_levels(self):
        levels = [np.full((3, i, i), 2.0) for i in range(1, 4)]
        keys, values, query = encode_kqv(levels)
        assert np.allclose(values, 2.0) and np.allclose(query, 2.0)
        assert np.allclose(keys, 4.0)  # c*c/c + c

    def test_single_level(self):
        level = np.arange(8.0).reshape(2, 2, 2)
        keys, values, query = encode_kqv([level])
        gap = level.mean(axis=(1, 2))
        assert np.allclose(values[0], gap) and np.allclose(query, gap)
        assert np.allclose(keys[0], 2.0 * gap)

    def test_frozen_two_level(self):
        lvl1 = np.array([1.0, 2.0]).reshape(2, 1, 1)
        lvl2 = np.stack([np.full((2, 2), 3.0), np.full((2, 2), 4.0)])
        keys, values, query = encode_kqv([lvl1, lvl2])
        assert np.allclose(keys[0], [4.0, 6.0])
        assert np.allclose(keys[1], [12.0, 12.0])
        assert np.allclose(values[0], [1.0, 2.0]) and np.allclose(query, [3.0, 4.0])

    def test_zero_denominator_guarded(self):
        lvl1 = np.zeros((2, 1, 1))
        lvl2 = np.ones((2, 2, 2))
        keys, _, _ = encode_kqv([lvl1, lvl2])
        assert np.all(np.isfinite(keys))


class TestSelfAttend:
    def test_single_region_doubles(self):
        v = np.array([[1.0, -2.0, 3.0]])
        out = self_attend(v.copy(), v, v[0], 3)
        assert np.allclose(out[:, 0], 2.0 * v[0])

    def test_equal_logits(self):
        values = np.array([[1.0, 2.0], [3.0, 4.0]])
        keys = np.array([[1.0, 1.0], [1.0, 1.0]])
        query = np.array([2.0, 3.0])
        out = self_attend(keys, values, query, 2)
        assert np.allclose(out[:, 0], 1.5 * values[0])
        assert np.allclose(out[:, 1], 1.5 * values[1])

    def test_dominant_logit(self):
        n = 2
        gap = 50.0 * math.sqrt(n)  # logit gap of 50 after the 1/sqrt(n) scale
        keys = np.array([[gap, 0.0], [0.0, 0.0]])
        values = np.array([[1.0, 2.0], [3.0, 4.0]])
        query = np.array([1.0, 0.0])
        out = self_attend(keys, values, query, n)
        assert np.allclose(out[:, 0], 2.0 * values[0], atol=1e-12)
        assert np.allclose(out[:, 1], values[1], atol=1e-12)

    def test_shape_validation(self):
        with pytest.raises(errors.ShapeMismatch):
            self_attend(np.ones((2, 3)), np.ones((2, 3)), np.ones(4), 3)


class TestComposite:
    def test_output_shape(self):
        rng = np.random.default_rng(21)
        arr = np.abs(rng.standard_normal((64, 12, 12)))
        assert region_features(arr, 11).shape == (64, 11)

    def test_constant_map_identical_columns(self):
        out = region_features(np.full((5, 6, 6), 1.5), 4)
        assert out.shape == (5, 4)
        for j in range(1, 4):
            assert np.array_equal(out[:, 0], out[:, j])

    def test_single_level_doubles_gap(self):
        rng = np.random.default_rng(22)
        arr = np.abs(rng.standard_normal((6, 5, 5)))
        out = region_features(arr, 1)
        # level 1 is the 1x1 max-pooled map, so its spatial average is the
        # per-channel global max; the single region gets weight 1 + 1
        assert np.allclose(out[:, 0], 2.0 * arr.max(axis=(1, 2)))

    def test_nonnegative_closure(self):
        rng = np.random.default_rng(23)
        arr = np.abs(rng.standard_normal((8, 9, 9)))
        assert region_features(arr, 7).min() >= 0.0

    def test_channel_permutation_equivariance_exact(self):
        rng = np.random.default_rng(24)
        for _ in range(10):
            arr = np.abs(rng.standard_normal((10, 8, 8)))
            perm = rng.permutation(10)
            base = region_features(arr, 6)
            permuted = region_features(arr[perm], 6)
            assert np.array_equal(permuted, base[perm])

    def test_positive_scaling_scales_values(self):
        rng = np.random.default_rng(25)
        arr = np.abs(rng.standard_normal((4, 6, 6))) + 0.1
        _, values, query = encode_kqv(pyramid_pool(arr, 3))
        _, values2, query2 = encode_kqv(pyramid_pool(3.0 * arr, 3))
        assert np.allclose(values2, 3.0 * values)
        assert np.allclose(query2, 3.0 * query)

    def test_deterministic(self):
        rng = np.random.default_rng(26)
        arr = np.abs(rng.standard_normal((6, 7, 7)))
        assert np.array_equal(region_features(arr, 5), region_features(arr, 5))
