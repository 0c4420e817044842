import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adasamp.model import draw_samples
from adasamp.problems import make_basic_example
from adasamp.risk import (
    ExtendedProblem,
    RiskSpec,
    cvar_empirical,
    extend_problem,
    quantile_solve,
    smooth_plus,
    smooth_plus_deriv,
    smoothed_cvar,
    var_empirical,
)
from oracles import central_diff, rel_err

RNG = np.random.default_rng(99)

value_lists = st.lists(
    st.floats(min_value=-50, max_value=50, allow_nan=False), min_size=1, max_size=40
)


class TestSmoothPlus:
    def test_at_zero(self):
        assert smooth_plus(0.0, 0.1) == pytest.approx(0.1 * math.log(2.0))

    def test_positive_asymptote(self):
        assert smooth_plus(10.0, 0.1) == pytest.approx(10.0, abs=1e-15)

    def test_negative_asymptote_uses_safe_branch(self):
        out = smooth_plus(-10.0, 0.1)
        assert 0.0 <= out <= 1e-40

    def test_no_overflow_far_out(self):
        assert np.isfinite(smooth_plus(-1e6, 0.01))
        assert smooth_plus(1e6, 0.01) == pytest.approx(1e6)

    def test_vectorized(self):
        y = np.array([-1.0, 0.0, 2.0])
        out = smooth_plus(y, 0.5)
        assert out.shape == y.shape

    def test_rejects_bad_epsilon(self):
        with pytest.raises(ValueError):
            smooth_plus(1.0, 0.0)


class TestSmoothPlusDeriv:
    def test_logistic_symmetry_at_zero(self):
        assert smooth_plus_deriv(0.0, 0.3) == 0.5

    def test_matches_finite_differences(self):
        for y in (-1.0, 0.3, 2.0):
            fd = (smooth_plus(y + 1e-6, 0.25) - smooth_plus(y - 1e-6, 0.25)) / 2e-6
            assert abs(fd - smooth_plus_deriv(y, 0.25)) / abs(fd) <= 1e-7

    def test_saturates(self):
        eps = 0.1
        assert smooth_plus_deriv(30 * eps, eps) == pytest.approx(1.0, abs=1e-12)
        assert 0.0 < smooth_plus_deriv(-30 * eps, eps) < 1e-12


@settings(max_examples=100, deadline=None)
@given(y=st.floats(min_value=-100, max_value=100), eps=st.floats(min_value=1e-3, max_value=10))
def test_smoothing_envelope(y, eps):
    plus = max(y, 0.0)
    val = smooth_plus(y, eps)
    assert plus <= val <= plus + eps * math.log(2.0) + 1e-12


class TestVarEmpirical:
    def test_four_values_median_quantile(self):
        assert var_empirical([1.0, 2.0, 3.0, 4.0], 0.5) == 2.0

    def test_beta_zero_is_minimum(self):
        vals = RNG.normal(size=17)
        assert var_empirical(vals, 0.0) == vals.min()

    def test_constant_list(self):
        for beta in (0.0, 0.3, 0.9):
            assert var_empirical([2.5] * 6, beta) == 2.5

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            var_empirical([], 0.5)


class TestCvarEmpirical:
    def test_beta_zero_is_mean(self):
        vals = RNG.normal(size=23)
        assert cvar_empirical(vals, 0.0) == pytest.approx(vals.mean())

    def test_two_point_list(self):
        # piecewise-linear dual objective minimized by hand: t + 2*mean((v-t)+)
        # equals 1 on both breakpoints of {0, 1}
        assert cvar_empirical([0.0, 1.0], 0.5) == pytest.approx(1.0)

    def test_dominates_var(self):
        for _ in range(100):
            vals = RNG.normal(size=int(RNG.integers(1, 30))) * RNG.uniform(0.5, 3)
            for beta in (0.5, 0.9):
                assert cvar_empirical(vals, beta) >= var_empirical(vals, beta) - 1e-12

    def test_matches_slow_scan(self):
        # independent re-evaluation of the dual objective on a dense t grid
        vals = RNG.normal(size=40)
        beta = 0.7
        grid = np.sort(vals)
        slow = min(
            float(t + np.mean(np.maximum(vals - t, 0.0)) / (1.0 - beta)) for t in grid
        )
        assert cvar_empirical(vals, beta) == pytest.approx(slow, rel=1e-12)


@settings(max_examples=80, deadline=None)
@given(values=value_lists, c=st.floats(min_value=-10, max_value=10), lam=st.floats(min_value=0.1, max_value=5))
def test_cvar_coherence_slice(values, c, lam):
    vals = np.array(values)
    base = cvar_empirical(vals, 0.5)
    # monotone nondecreasing in beta
    assert cvar_empirical(vals, 0.9) >= base - 1e-9
    # translation equivariance and positive homogeneity
    assert cvar_empirical(vals + c, 0.5) == pytest.approx(base + c, abs=1e-9)
    assert cvar_empirical(lam * vals, 0.5) == pytest.approx(lam * base, rel=1e-9, abs=1e-9)


class TestQuantileSolve:
    def test_constant_list_beta_half(self):
        assert quantile_solve([3.0] * 5, 0.5, 0.2) == pytest.approx(3.0, abs=1e-10)

    def test_constant_list_closed_form(self):
        c, beta, eps = 1.7, 0.8, 0.05
        want = c - eps * math.log((1 - beta) / beta)
        assert quantile_solve([c] * 4, beta, eps) == pytest.approx(want, abs=1e-8)

    def test_root_residual(self):
        from scipy.special import expit

        for _ in range(25):
            vals = RNG.normal(size=int(RNG.integers(2, 200))) * 3
            beta = float(RNG.uniform(0.05, 0.95))
            eps = float(RNG.choice([0.1, 0.01]))
            t = quantile_solve(vals, beta, eps)
            resid = abs(float(np.mean(expit((vals - t) / eps))) - (1 - beta))
            assert resid <= 1e-10

    def test_normal_quantile(self):
        vals = np.random.default_rng(12345).standard_normal(100_000)
        t = quantile_solve(vals, 0.9, 0.01)
        assert abs(t - 1.2815515655446004) <= 0.02

    def test_rejects_boundary_beta(self):
        with pytest.raises(ValueError):
            quantile_solve([1.0, 2.0], 0.0, 0.1)


class TestSmoothedCvar:
    def test_constant_list_within_bound(self):
        for beta in (0.3, 0.5, 0.9):
            eps = 0.1
            out = smoothed_cvar([4.0] * 6, beta, eps)
            assert abs(out - 4.0) <= eps * math.log(2.0) / (1.0 - beta) + 1e-12

    def test_small_epsilon_limits_to_exact_cvar(self):
        assert smoothed_cvar([0.0, 1.0], 0.5, 1e-6) == pytest.approx(1.0, abs=1e-5)

    def test_bound_on_random_lists(self):
        for _ in range(100):
            vals = RNG.normal(size=int(RNG.integers(1, 60))) * RNG.uniform(0.2, 4)
            for beta in (0.5, 0.9):
                for eps in (0.1, 0.01):
                    gap = abs(smoothed_cvar(vals, beta, eps) - cvar_empirical(vals, beta))
                    assert gap <= eps * math.log(2.0) / (1.0 - beta) + 1e-10


class TestRiskSpec:
    def test_expectation_default(self):
        assert RiskSpec().kind == "expectation"

    def test_validates_beta(self):
        with pytest.raises(ValueError):
            RiskSpec(kind="smoothed-cvar", beta=1.0, epsilon=0.1)

    def test_validates_epsilon(self):
        with pytest.raises(ValueError):
            RiskSpec(kind="smoothed-cvar", beta=0.5, epsilon=0.0)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            RiskSpec(kind="entropic")


@pytest.fixture(scope="module")
def extended():
    problem, _ = make_basic_example(7)
    return extend_problem(problem, 0.5, 0.1)


class TestExtendProblem:
    def test_value_when_f_equals_t(self, extended):
        xi = np.full(20, 0.5)
        x = extended.base.known_optimum + 0.1
        t = extended.base.value(x, xi)
        z = np.concatenate([x, [t]])
        want = t + 0.1 * math.log(2.0) / (1.0 - 0.5)
        assert extended.value(z, xi) == pytest.approx(want)

    def test_gradient_matches_finite_differences(self, extended):
        problem = extended.base
        s = draw_samples(problem, 12, 0, 5)
        rng = np.random.default_rng(8)
        for _ in range(5):
            z = np.concatenate([np.abs(rng.normal(size=20)), [rng.normal()]])
            grads = extended.grad_many(z, s.realizations)
            mean_grad = grads.mean(axis=0)
            fd = central_diff(
                lambda w: float(np.mean(extended.value_many(w, s.realizations))), z
            )
            assert rel_err(fd, mean_grad) <= 1e-6

    def test_t_derivative_saturates(self, extended):
        xi = np.full(20, 0.5)
        x = np.ones(20)
        f = extended.base.value(x, xi)
        z = np.concatenate([x, [f - 100.0]])  # f >> t
        g = extended.grad(z, xi)
        assert g[-1] == pytest.approx(1.0 - 1.0 / (1.0 - 0.5), abs=1e-12)

    def test_dim_and_validation(self, extended):
        assert extended.dim == 21
        with pytest.raises(ValueError):
            ExtendedProblem(extended.base, 1.0, 0.1)
        with pytest.raises(ValueError):
            ExtendedProblem(extended.base, 0.5, 0.0)

    def test_grad_many_agrees_with_per_sample(self, extended):
        s = draw_samples(extended.base, 4, 0, 5)
        z = np.concatenate([np.full(20, 0.3), [0.8]])
        many = extended.grad_many(z, s.realizations)
        single = np.array([extended.grad(z, xi) for xi in s.realizations])
        np.testing.assert_allclose(many, single, rtol=1e-12)
