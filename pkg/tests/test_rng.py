"""Deterministic random stream behavior."""

from __future__ import annotations

import numpy as np
import pytest

from gapbridge.errors import ValidationError
from gapbridge.rng import SeededRng


class TestDeterminism:
    def test_same_seed_same_stream(self):
        a = SeededRng(123)
        b = SeededRng(123)
        np.testing.assert_array_equal(a.normal((10, 4)), b.normal((10, 4)))
        np.testing.assert_array_equal(a.uniform(100), b.uniform(100))
        np.testing.assert_array_equal(a.permutation(50), b.permutation(50))
        np.testing.assert_array_equal(
            a.integers(0, 10, size=20), b.integers(0, 10, size=20)
        )

    def test_different_seeds_differ(self):
        a = SeededRng(1).normal(64)
        b = SeededRng(2).normal(64)
        assert not np.array_equal(a, b)

    def test_seed_validation(self):
        with pytest.raises(ValidationError):
            SeededRng(-1)
        with pytest.raises(ValidationError):
            SeededRng(2**64)
        with pytest.raises(ValidationError):
            SeededRng(1.5)


class TestDistributions:
    """Sample moments of the generators against their analytic values."""

    def test_normal_moments(self):
        x = SeededRng(7).normal(200_000)
        assert abs(float(x.mean())) < 0.01
        assert abs(float(x.var()) - 1.0) < 0.02
        # Fourth standardized moment of N(0,1) is 3.
        assert abs(float((x**4).mean()) - 3.0) < 0.1

    def test_normal_is_finite_and_shaped(self):
        x = SeededRng(3).normal((7, 5, 3))
        assert x.shape == (7, 5, 3)
        assert np.isfinite(x).all()

    def test_uniform_range_and_mean(self):
        x = SeededRng(11).uniform(100_000)
        assert float(x.min()) >= 0.0
        assert float(x.max()) < 1.0
        assert abs(float(x.mean()) - 0.5) < 0.01

    def test_scalar_shapes(self):
        assert SeededRng(0).uniform(()).shape == ()
        assert SeededRng(0).normal(()).shape == ()

    def test_integers_bounds(self):
        x = SeededRng(5).integers(3, 9, size=10_000)
        assert x.min() >= 3
        assert x.max() <= 8
        assert set(np.unique(x)) == set(range(3, 9))

    def test_permutation_is_permutation(self):
        for seed in range(10):
            p = SeededRng(seed).permutation(100)
            assert sorted(p.tolist()) == list(range(100))
