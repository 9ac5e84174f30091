import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy import integrate

from densdiff.basis import GaussianBasis, analytic_gram, build_basis, eval_basis, median_heuristic
from densdiff.data import DataError

from oracles import trapezoid_gram_1d


class TestBuildBasis:
    def test_all_samples_in_order(self):
        rng = np.random.default_rng(0)
        Xp, Xq = rng.normal(size=(40, 2)), rng.normal(size=(40, 2))
        B = build_basis(Xp, Xq, 1.0)
        assert B.size == 80
        assert_array_equal(B.centers, np.vstack([Xp, Xq]))

    def test_subsample_when_over_cap(self):
        rng = np.random.default_rng(1)
        Xp, Xq = rng.normal(size=(300, 2)), rng.normal(size=(300, 2))
        B = build_basis(Xp, Xq, 1.0, max_centers=200, seed=3)
        assert B.size == 200
        pooled = {tuple(r) for r in np.vstack([Xp, Xq])}
        assert all(tuple(c) in pooled for c in B.centers)
        assert_array_equal(B.centers, build_basis(Xp, Xq, 1.0, 200, seed=3).centers)
        assert len({tuple(c) for c in B.centers}) == 200

    @pytest.mark.parametrize("sigma", [0.0, -1.0, np.inf])
    def test_bad_sigma(self, sigma):
        with pytest.raises(ValueError):
            build_basis(np.zeros((2, 1)), np.ones((2, 1)), sigma)

    def test_dimension_mismatch(self):
        with pytest.raises(DataError):
            build_basis(np.zeros((2, 1)), np.ones((2, 2)), 1.0)


class TestEvalBasis:
    def test_unit_at_center(self):
        B = GaussianBasis(np.array([[0.3, -1.0]]), 0.7)
        assert eval_basis(B, [[0.3, -1.0]])[0, 0] == 1.0

    def test_half_height(self):
        sigma = 1.3
        B = GaussianBasis(np.array([[sigma * np.sqrt(2 * np.log(2))]]), sigma)
        assert_allclose(eval_basis(B, [[0.0]])[0, 0], 0.5, rtol=1e-14)

    def test_monotone_in_distance(self):
        B = GaussianBasis(np.zeros((1, 1)), 1.0)
        v = eval_basis(B, np.linspace(0, 6, 20)[:, None])[:, 0]
        assert np.all(np.diff(v) < 0)

    def test_entries_in_unit_interval_and_unit_diagonal(self):
        rng = np.random.default_rng(2)
        C = rng.normal(size=(15, 3))
        B = GaussianBasis(C, 0.8)
        Phi = eval_basis(B, C)
        assert np.all((Phi > 0) & (Phi <= 1))
        assert_array_equal(np.diag(Phi), 1.0)

    def test_dimension_mismatch(self):
        with pytest.raises(DataError):
            eval_basis(GaussianBasis(np.zeros((1, 2)), 1.0), np.zeros((3, 1)))


class TestAnalyticGram:
    def test_self_overlap_1d(self):
        H = analytic_gram(GaussianBasis(np.array([[0.4]]), 1.0))
        val, _ = integrate.quad(lambda x: np.exp(-(x - 0.4) ** 2), -np.inf, np.inf)
        assert_allclose(H[0, 0], val, rtol=1e-10)
        assert_allclose(H[0, 0], np.sqrt(np.pi), rtol=1e-15)

    def test_two_dimensional_pair(self):
        H = analytic_gram(GaussianBasis(np.array([[0.0, 0.0], [1.0, 0.0]]), 0.5))
        s2 = 0.25

        def f(y, x):
            return np.exp(-(x ** 2 + y ** 2) / (2 * s2)) * np.exp(-((x - 1) ** 2 + y ** 2) / (2 * s2))

        val, _ = integrate.dblquad(f, -5, 6, -5, 5, epsabs=1e-12)
        assert_allclose(H[0, 1], val, rtol=1e-8)
        assert_allclose(H[0, 1], 0.25 * np.pi * np.exp(-1.0), rtol=1e-14)
        assert_allclose(H[0, 1], 0.288932, atol=5e-7)

    def test_exactly_symmetric(self):
        C = np.random.default_rng(3).normal(size=(30, 4))
        H = analytic_gram(GaussianBasis(C, 0.9))
        assert_array_equal(H, H.T)

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_quadrature_1d(self, seed):
        rng = np.random.default_rng(seed)
        c = rng.uniform(-3, 3, size=2)
        sigma = rng.uniform(0.2, 2.0)
        H = analytic_gram(GaussianBasis(c[:, None], sigma))
        assert_allclose(H[0, 1], trapezoid_gram_1d(c[0], c[1], sigma), rtol=1e-6)

    @pytest.mark.parametrize("seed", range(10))
    def test_positive_semidefinite(self, seed):
        rng = np.random.default_rng(seed)
        b = rng.integers(2, 51)
        H = analytic_gram(GaussianBasis(rng.normal(size=(b, rng.integers(1, 4))), rng.uniform(0.1, 3)))
        ev = np.linalg.eigvalsh(H)
        assert ev.min() >= -1e-8 * ev.max()


class TestMedianHeuristic:
    def test_single_pair(self):
        assert median_heuristic([[0.0]], [[2.0]]) == 2.0

    def test_three_points(self):
        assert median_heuristic([[0.0], [1.0]], [[2.0]]) == 1.0

    def test_degenerate(self):
        with pytest.raises(DataError, match="degenerate data"):
            median_heuristic([[1.0, 1.0]], [[1.0, 1.0]])

    def test_subsample_is_seeded(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(800, 2))
        a = median_heuristic(X[:600], X[600:], seed=1, max_points=500)
        assert a == median_heuristic(X[:600], X[600:], seed=1, max_points=500)
        assert abs(a - median_heuristic(X[:600], X[600:])) < 0.1
