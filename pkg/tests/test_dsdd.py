import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from densdiff.basis import GaussianBasis, build_basis, eval_basis, median_heuristic
from densdiff.data import sample_hinge_example, sample_mixture, toy1_spec
from densdiff.dsdd import (BoundVars, CccpConfig, cccp, DsddModel, cccp_fit, concave_bound, hinge, hinge_relaxed_fit,
                           objective, plus_hinge, plus_hinge_conjugate, predict_sign, ramp, ramp_linear_fit,
                           split_objective, tighten_bound)

from oracles import brute_force_bound, hinge_grid_search

finite = st.floats(-50, 50, allow_nan=False)


def small_instance(rng, b=None, n=None, nq=None):
    b = b or rng.integers(1, 6)
    n = n or rng.integers(1, 7)
    nq = nq or rng.integers(1, 7)
    PhiQ = rng.uniform(0, 1, size=(nq, b))
    PhiP = rng.uniform(0, 1, size=(n, b))
    alpha = rng.normal(scale=3.0, size=b)
    return alpha, PhiQ, PhiP


class TestPointwise:
    def test_ramp_values(self):
        assert_array_equal(ramp([0.5, 3.0, -3.0, 1.0, -1.0]), [0.5, 1.0, -1.0, 1.0, -1.0])

    def test_ramp_as_hinge_difference(self):
        z = np.linspace(-4, 4, 100)
        assert_array_equal(ramp(z), plus_hinge(-1, z) - plus_hinge(1, z) - 1)

    def test_plus_hinge(self):
        assert plus_hinge(1, 2) == 1
        assert plus_hinge(-1, 0) == 1
        assert plus_hinge(1, 0) == 0

    def test_ramp_through_hinges(self):
        z = np.linspace(-4, 4, 100)
        assert_allclose(ramp(z) + 1, hinge(1, -z) - hinge(-1, -z), atol=1e-15)
        assert_allclose(ramp(z), -hinge(1, z) + hinge(-1, z) + 1, atol=1e-15)

    @given(finite)
    def test_ramp_range(self, z):
        assert -1 <= ramp(z) <= 1

    @pytest.mark.parametrize("eps", [-1.0, 1.0, 0.3])
    def test_conjugate_matches_grid_supremum(self, eps):
        y = np.linspace(-10, 10, 200_001)
        for z in np.linspace(0, 1, 11):
            sup = np.max(y * z - plus_hinge(eps, y))
            assert sup <= plus_hinge_conjugate(eps, z) + 1e-12
            assert_allclose(sup, plus_hinge_conjugate(eps, z), atol=1e-4)

    @pytest.mark.parametrize("z", [-0.5, 1.5])
    def test_conjugate_infinite_outside_unit_interval(self, z):
        assert plus_hinge_conjugate(1.0, z) == np.inf
        y = np.linspace(-1e3, 1e3, 11)
        assert np.max(y * z - plus_hinge(1.0, y)) > 100


class TestObjective:
    def test_zero_coefficients(self):
        rng = np.random.default_rng(0)
        _, PhiQ, PhiP = small_instance(rng)
        assert objective(np.zeros(PhiQ.shape[1]), PhiQ, PhiP, 0.3) == 0.0

    def test_identical_datasets_leave_ridge(self):
        rng = np.random.default_rng(1)
        alpha, PhiQ, _ = small_instance(rng)
        assert_allclose(objective(alpha, PhiQ, PhiQ, 0.7), 0.35 * alpha @ alpha, rtol=1e-15)

    def test_one_basis_hand_value(self):
        lam = 0.37
        assert_allclose(objective([2.0], [[1.0]], [[1.0]], lam), 2 * lam)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            objective(np.zeros(3), np.ones((2, 2)), np.ones((2, 2)), 1.0)

    def test_split_at_zero(self):
        vex, cave = split_objective(np.zeros(2), np.ones((3, 2)), np.ones((4, 2)), 1.0)
        assert (vex, cave) == (1.0, -1.0)

    @pytest.mark.parametrize("seed", range(20))
    def test_split_sums_to_objective(self, seed):
        rng = np.random.default_rng(seed)
        alpha, PhiQ, PhiP = small_instance(rng)
        vex, cave = split_objective(alpha, PhiQ, PhiP, 0.1)
        assert abs(vex + cave - objective(alpha, PhiQ, PhiP, 0.1)) <= 1e-12

    def test_convex_part_midpoint(self):
        rng = np.random.default_rng(5)
        _, PhiQ, PhiP = small_instance(rng, b=4)
        for _ in range(50):
            a1, a2 = rng.normal(scale=3, size=(2, 4))
            mid = split_objective((a1 + a2) / 2, PhiQ, PhiP, 0.2)[0]
            ends = (split_objective(a1, PhiQ, PhiP, 0.2)[0] + split_objective(a2, PhiQ, PhiP, 0.2)[0]) / 2
            assert mid <= ends + 1e-12

    @pytest.mark.parametrize("seed", range(10))
    def test_data_terms_bounded(self, seed):
        rng = np.random.default_rng(seed)
        alpha, PhiQ, PhiP = small_instance(rng)
        alpha *= 100
        assert abs(ramp(PhiQ @ alpha).mean()) <= 1
        assert abs(ramp(PhiP @ alpha).mean()) <= 1


class TestBound:
    def test_threshold_examples(self):
        bound = tighten_bound([1.0], [[0.5], [1.5], [1.0]], [[-2.0], [0.0], [-1.0]])
        assert_array_equal(bound.b, [0, 1, 1])
        assert_array_equal(bound.c, [0, 1, 1])

    def test_zero_bound_value(self):
        rng = np.random.default_rng(0)
        alpha, PhiQ, PhiP = small_instance(rng)
        zero = BoundVars(np.zeros(PhiQ.shape[0]), np.zeros(PhiP.shape[0]))
        assert concave_bound(alpha, zero, PhiQ, PhiP) == 0.0

    def test_rejects_out_of_box(self):
        with pytest.raises(ValueError):
            BoundVars([1.2], [0.0])

    @pytest.mark.parametrize("seed", range(30))
    def test_tight_after_tightening(self, seed):
        rng = np.random.default_rng(seed)
        alpha, PhiQ, PhiP = small_instance(rng)
        _, cave = split_objective(alpha, PhiQ, PhiP, 0.0)
        assert abs(concave_bound(alpha, tighten_bound(alpha, PhiQ, PhiP), PhiQ, PhiP) - cave) <= 1e-12

    @pytest.mark.parametrize("seed", range(30))
    def test_majorizes_for_any_feasible_bound(self, seed):
        rng = np.random.default_rng(seed)
        alpha, PhiQ, PhiP = small_instance(rng)
        _, cave = split_objective(alpha, PhiQ, PhiP, 0.0)
        for _ in range(100):
            bound = BoundVars(rng.uniform(size=PhiQ.shape[0]), rng.uniform(size=PhiP.shape[0]))
            assert concave_bound(alpha, bound, PhiQ, PhiP) >= cave - 1e-12

    @pytest.mark.parametrize("seed", range(30))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        alpha, PhiQ, PhiP = small_instance(rng, n=rng.integers(1, 5), nq=rng.integers(1, 5))
        best, argmins = brute_force_bound(PhiQ @ alpha, PhiP @ alpha)
        bound = tighten_bound(alpha, PhiQ, PhiP)
        assert abs(concave_bound(alpha, bound, PhiQ, PhiP) - best) <= 1e-12
        if len(argmins) == 1:
            assert_array_equal(bound.b, argmins[0][0])
            assert_array_equal(bound.c, argmins[0][1])


def toy1_pair(seed, n=30):
    P = sample_mixture(toy1_spec(), n, 0.3, seed)
    Q = sample_mixture(toy1_spec(), n, 0.7, seed + 10_000)
    return P, Q


class TestCccpFit:
    def test_toy1_monotone_and_converged(self):
        P, Q = toy1_pair(0)
        basis = build_basis(P.samples, Q.samples, median_heuristic(P.samples, Q.samples))
        model = cccp_fit(P.samples, Q.samples, basis, CccpConfig(0.1))
        assert model.converged and model.iterations <= 100
        assert np.all(np.diff(model.objective_trace) <= 1e-9)

    def test_identical_datasets_stationary_at_zero(self):
        P, _ = toy1_pair(1)
        Phi = eval_basis(build_basis(P.samples, P.samples, 1.0), P.samples)
        res = cccp(Phi, Phi, CccpConfig(0.1), init=(np.zeros(Phi.shape[1]), 0.0))
        assert res.converged
        assert np.linalg.norm(res.alpha) <= 1e-6

    def test_huge_ridge(self):
        P, Q = toy1_pair(2)
        basis = build_basis(P.samples, Q.samples, 1.0)
        model = cccp_fit(P.samples, Q.samples, basis, CccpConfig(1e6))
        assert np.linalg.norm(model.alpha) <= 1e-3

    def test_trace_matches_objective(self):
        P, Q = toy1_pair(3)
        basis = build_basis(P.samples, Q.samples, 1.5)
        model = cccp_fit(P.samples, Q.samples, basis, CccpConfig(0.01))
        J = objective(model.alpha, eval_basis(basis, Q.samples), eval_basis(basis, P.samples), 0.01)
        assert_allclose(model.objective_trace[-1], J, rtol=1e-12)

    def test_beats_initial_point(self):
        P, Q = toy1_pair(4)
        basis = build_basis(P.samples, Q.samples, 1.5)
        model = cccp_fit(P.samples, Q.samples, basis, CccpConfig(0.01))
        assert model.objective_trace[-1] < model.objective_trace[0]

    @pytest.mark.parametrize("kw", [dict(lam=0.0), dict(lam=1.0, stop_E=0.0), dict(lam=1.0, max_outer=0)])
    def test_config_validation(self, kw):
        with pytest.raises(ValueError):
            CccpConfig(**kw)

    def test_rejects_dimension_mismatch(self):
        with pytest.raises(ValueError):
            cccp_fit(np.zeros((3, 2)), np.ones((3, 2)), GaussianBasis(np.zeros((1, 3)), 1.0), CccpConfig(1.0))


class TestPrediction:
    def model(self, alpha):
        return DsddModel(GaussianBasis(np.array([[0.0], [1.0]]), 1.0), alpha, 0.1)

    def test_signs_and_tie(self):
        m = self.model([1.0, -1.0])
        g = m.decision_function([[-5.0], [0.5], [6.0]])
        assert g[0] > 0 and g[2] < 0
        assert_allclose(g[1], 0.0, atol=1e-15)
        assert_array_equal(predict_sign(self.model([0.0, 0.0]), [[0.0], [3.0]]), [1, 1])

    def test_positive_and_negative(self):
        m = self.model([0.7, 0.0])
        assert predict_sign(m, [[0.0]])[0] == 1
        assert predict_sign(m.negated(), [[0.0]])[0] == -1

    def test_negation_flips(self):
        rng = np.random.default_rng(0)
        m = self.model(rng.normal(size=2))
        X = rng.normal(size=(50, 1))
        assert_array_equal(predict_sign(m.negated(), X), -predict_sign(m, X))

    def test_json_round_trip(self):
        m = DsddModel(GaussianBasis(np.array([[0.1, 0.2]]), 0.3), [1 / 3], 0.1, (0.5, 0.25), 2, True,
                      np.array([1.0, 2.0]), np.array([3.0, 4.0]))
        doc = json.loads(m.to_json())
        assert set(doc) >= {"sigma", "centers", "alpha", "lambda"}
        back = DsddModel.from_json(m.to_json())
        assert back.alpha[0] == 1 / 3
        assert_array_equal(back.feature_scale, [3.0, 4.0])
        X = np.array([[2.0, 5.0]])
        assert back.decision_function(X)[0] == m.decision_function(X)[0]


class TestLinearComparison:
    def test_separable_1d(self):
        Xp, Xq = np.array([[-5.0]]), np.array([[5.0]])
        w, b = hinge_relaxed_fit(Xp, Xq, 1e-3)
        assert np.sign(w[0] * -5 + b) == 1 and np.sign(w[0] * 5 + b) == -1
        data = hinge(1, Xp @ w + b).mean() + hinge(1, -(Xq @ w + b)).mean()
        assert data <= 1e-3
        J = data + 0.5e-3 * w @ w
        grid_J, _, _ = hinge_grid_search(Xp, Xq, 1e-3, np.linspace(-1, 1, 2001), np.linspace(-2, 2, 401))
        assert J <= grid_J + 1e-12

    def test_identical_sets_give_zero_slope(self):
        X = np.random.default_rng(0).normal(size=(20, 2))
        w, _ = hinge_relaxed_fit(X, X, 0.1)
        assert np.linalg.norm(w) <= 1e-4

    def test_ramp_fit_monotone(self):
        P = sample_hinge_example(100, 0.2, 0, overlapping=True)
        Q = sample_hinge_example(100, 0.8, 1, overlapping=True)
        model = ramp_linear_fit(P.samples, Q.samples, CccpConfig(1e-3))
        assert np.all(np.diff(model.objective_trace) <= 1e-9)
        J = objective(model.w, Q.samples, P.samples, 1e-3, model.b)
        assert_allclose(J, model.objective_trace[-1], rtol=1e-12)

    def test_separated_ramp_and_hinge_agree(self):
        P = sample_hinge_example(100, 0.2, 5, overlapping=False)
        Q = sample_hinge_example(100, 0.8, 6, overlapping=False)
        X = np.vstack([P.samples, Q.samples])
        w, b = hinge_relaxed_fit(P.samples, Q.samples, 1e-3)
        model = ramp_linear_fit(P.samples, Q.samples, CccpConfig(1e-3))
        assert np.mean(np.sign(X @ w + b) == model.predict(X)) >= 0.9
