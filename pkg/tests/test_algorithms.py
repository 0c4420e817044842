import math

import numpy as np
import pytest

from adasamp.algorithms import (
    EqualityConstraint,
    OptimizerConfig,
    run_cvar_extended,
    run_nested_quantile,
    run_spgd_adaptive,
    run_sqp_adaptive,
    spgd_step,
    sqp_direction,
)
from adasamp.geometry import feasibility_residual, full_space, project
from adasamp.model import StochasticProblem, draw_samples
from adasamp.problems import make_basic_example, make_portfolio
from adasamp.risk import extend_problem
from adasamp.sizing import TestConfig
from oracles import central_diff, kkt_sqp_oracle, rel_err

RNG = np.random.default_rng(515)


@pytest.fixture(scope="module")
def basic():
    return make_basic_example(7)


@pytest.fixture(scope="module")
def portfolio():
    return make_portfolio(11)


def quadratic_deterministic(c):
    """f(x; xi) = ||x - c||^2 / 2, independent of the sample."""
    c = np.asarray(c, dtype=float)
    return StochasticProblem(
        dim=c.size,
        sampler=lambda rng, n: rng.random((n, 1)),
        value=lambda x, xi: 0.5 * float((x - c) @ (x - c)),
        grad=lambda x, xi: np.asarray(x - c, dtype=float),
    )


def noisy_linear(c, spread):
    """f(x; xi) = -<xi, x> with xi ~ N(c, spread^2 I)."""
    c = np.asarray(c, dtype=float)
    return StochasticProblem(
        dim=c.size,
        sampler=lambda rng, n: c + spread * rng.standard_normal((n, c.size)),
        value=lambda x, xi: float(-(xi @ x)),
        grad=lambda x, xi: -np.asarray(xi, dtype=float),
        value_many=lambda x, xis: -(xis @ x),
        grad_many=lambda x, xis: -xis,
    )


def cfg(alpha=0.025, iters=40, theta=0.5, s0=10, seed=0, **kw):
    return OptimizerConfig(
        alpha=alpha,
        max_iters=iters,
        test=TestConfig(theta=theta, **kw.pop("test_kw", {})),
        initial_sample_size=s0,
        seed=seed,
        **kw,
    )


class TestSpgdStep:
    def test_unconstrained_step_is_gradient_step(self, basic):
        problem, _ = basic
        s = draw_samples(problem, 20, 0, 1)
        x = np.full(20, 0.7)
        alpha = 0.025
        x_next, reduced, stats = spgd_step(problem, full_space(20), x, s, alpha)
        np.testing.assert_allclose(x_next, x - alpha * stats.mean_grad, rtol=1e-12)
        np.testing.assert_allclose(reduced, stats.mean_grad, rtol=1e-9, atol=1e-12)

    def test_zero_gradient_is_fixed_point(self):
        problem = quadratic_deterministic(np.zeros(3))
        s = draw_samples(problem, 5, 0, 0)
        x_next, reduced, _ = spgd_step(problem, full_space(3), np.zeros(3), s, 0.1)
        np.testing.assert_array_equal(x_next, np.zeros(3))
        np.testing.assert_array_equal(reduced, np.zeros(3))

    def test_hand_computed_single_sample_step(self, basic):
        problem, cset = basic
        a, b = problem.params["a"], problem.params["b"]
        s = draw_samples(problem, 1, 0, 9)
        xi = s.realizations[0]
        alpha = 0.025
        x0 = np.zeros(20)
        x_next, reduced, _ = spgd_step(problem, cset, x0, s, alpha)
        # by hand: grad at 0 is -2 a b xi, clamp the step at the orthant
        manual_next = np.maximum(0.0, 2.0 * alpha * a * b * xi)
        np.testing.assert_allclose(x_next, manual_next, atol=1e-12)
        np.testing.assert_allclose(reduced, (x0 - manual_next) / alpha, atol=1e-12)


class TestRunSpgdAdaptive:
    def test_error_decays_and_sizes_ratchet(self, basic):
        problem, cset = basic
        res = run_spgd_adaptive(problem, cset, cfg(iters=80), np.ones(20))
        errs = [r.error_norm for r in res.records]
        sizes = [r.sample_size for r in res.records]
        assert errs[-1] < 0.1 * errs[0]
        assert all(b >= a for a, b in zip(sizes, sizes[1:]))
        assert res.status == "completed"

    def test_iterates_stay_feasible(self, basic):
        problem, cset = basic
        res = run_spgd_adaptive(problem, cset, cfg(iters=30), -np.ones(20))
        for x in res.iterates + [res.state.x]:
            assert feasibility_residual(cset, x) <= 1e-10

    def test_infeasible_start_projected_once(self, basic):
        problem, cset = basic
        res = run_spgd_adaptive(problem, cset, cfg(iters=3), -np.ones(20))
        np.testing.assert_array_equal(res.iterates[0], np.zeros(20))

    def test_gradient_eval_accounting(self, basic):
        problem, cset = basic
        res = run_spgd_adaptive(problem, cset, cfg(iters=60), np.ones(20))
        assert res.records[-1].cumulative_grad_evals == sum(
            r.sample_size for r in res.records
        )

    def test_fixed_mode_keeps_size_and_leaves_rho_empty(self, basic):
        problem, cset = basic
        res = run_spgd_adaptive(problem, cset, cfg(iters=25, adaptive=False), np.ones(20))
        assert {r.sample_size for r in res.records} == {10}
        assert all(r.rho is None for r in res.records)

    def test_tiny_theta_explodes_to_cap(self, basic):
        problem, cset = basic
        c = cfg(iters=10, theta=1e-6, test_kw={"max_sample_size": 5000})
        res = run_spgd_adaptive(problem, cset, c, np.ones(20))
        sizes = [r.sample_size for r in res.records]
        assert 5000 in sizes[:4]

    def test_stationary_stop_on_constant_objective(self):
        problem = quadratic_deterministic(np.zeros(3))
        res = run_spgd_adaptive(problem, full_space(3), cfg(iters=50), np.zeros(3))
        assert res.status == "stationary"
        assert len(res.records) == 1

    def test_grad_eval_budget_stops_run(self, basic):
        problem, cset = basic
        res = run_spgd_adaptive(
            problem, cset, cfg(iters=50, grad_eval_budget=25), np.ones(20)
        )
        assert res.status == "budget-exhausted"
        assert res.records[-1].cumulative_grad_evals >= 25
        assert len(res.records) == 3

    def test_q_linear_slope_negative_for_moderate_theta(self, basic):
        # log-error slope over iterations 10..150 stays negative at theta = 1.0
        # as well, not just at the tighter 0.5 setting
        problem, cset = basic
        c = cfg(iters=150, theta=1.0, test_kw={"max_sample_size": 100_000})
        res = run_spgd_adaptive(problem, cset, c, np.ones(20))
        ks = np.array([r.iteration for r in res.records])
        errs = np.array([r.error_norm for r in res.records])
        window = ks >= 10
        slope = np.polyfit(ks[window], np.log(errs[window]), 1)[0]
        assert slope < 0


class TestSqpDirection:
    def test_parallel_gradients_give_zero_direction(self):
        g = np.array([1.0, -2.0, 0.5])
        d = sqp_direction(3.0 * g, g, 0.0, 0.1)
        np.testing.assert_allclose(d, np.zeros(3), atol=1e-15)

    def test_coordinate_constraint_zeroes_first_component(self):
        grad_F = np.array([4.0, -1.0, 2.0])
        d = sqp_direction(grad_F, np.array([1.0, 0.0, 0.0]), 0.0, 0.2)
        np.testing.assert_allclose(d, -0.2 * np.array([0.0, -1.0, 2.0]), atol=1e-14)

    def test_matches_kkt_oracle(self):
        for _ in range(100):
            dim = int(RNG.integers(2, 8))
            grad_F = RNG.normal(size=dim) * 3
            grad_G = RNG.normal(size=dim)
            grad_G[0] += np.sign(grad_G[0] or 1.0)
            G_val = float(RNG.normal())
            alpha = float(RNG.uniform(0.01, 1.0))
            d = sqp_direction(grad_F, grad_G, G_val, alpha)
            want = kkt_sqp_oracle(grad_F, grad_G, G_val, alpha)
            assert np.linalg.norm(d - want) <= 1e-10
            assert abs(grad_G @ d + G_val) <= 1e-10

    def test_zero_constraint_gradient_rejected_when_inconsistent(self):
        with pytest.raises(ValueError):
            sqp_direction(np.ones(2), np.zeros(2), 1.0, 0.1)

    def test_vacuous_constraint_gives_unconstrained_step(self):
        d = sqp_direction(np.array([2.0, -4.0]), np.zeros(2), 0.0, 0.1)
        np.testing.assert_allclose(d, [-0.2, 0.4])


class TestRunSqpAdaptive:
    def test_deterministic_affine_matches_lagrange_closed_form(self):
        c = np.array([2.0, -1.0, 0.5, 1.5])
        a = np.array([1.0, 1.0, -1.0, 2.0])
        b = 1.5
        problem = quadratic_deterministic(c)
        constraint = EqualityConstraint(
            value=lambda x: float(a @ x) - b, grad=lambda x: a
        )
        res = run_sqp_adaptive(problem, constraint, cfg(alpha=0.1, iters=200, s0=4), np.zeros(4))
        x_star = c - ((a @ c - b) / (a @ a)) * a
        assert np.linalg.norm(res.state.x - x_star) <= 1e-6
        assert len(res.records) <= 200
        # identical per-sample gradients: the test passes with rho = 0 and
        # never augments
        assert sum(res.extras["augment_rounds"]) == 0
        assert all(r.rho in (0.0, None) for r in res.records)
        assert {r.sample_size for r in res.records} == {4}

    def test_sphere_constraint_with_stochastic_linear_objective(self):
        c = np.array([1.0, 0.5, -0.3, 0.8, 0.2])
        problem = noisy_linear(c, 0.05)
        sphere = EqualityConstraint(
            value=lambda x: float(x @ x) - 1.0, grad=lambda x: 2.0 * np.asarray(x, float)
        )
        run_cfg = cfg(
            alpha=0.1, iters=120, theta=1.0, s0=8, seed=2,
            test_kw={"max_sample_size": 20000},
        )
        res = run_sqp_adaptive(problem, sphere, run_cfg, np.full(5, 0.7))
        g_vals = np.abs(res.extras["constraint_values"])
        assert abs(sphere.value(res.state.x)) <= 1e-3
        assert abs(sphere.value(res.state.x)) < g_vals[0]
        assert np.median(g_vals[-10:]) < np.median(g_vals[:10])
        # the linearized constraint holds exactly at every accepted step
        assert max(res.extras["lin_residuals"]) <= 1e-10
        # high beta-free noise at small theta makes it augment along the way
        assert sum(res.extras["augment_rounds"]) > 0
        # within-iteration augmentation appends to the same set: accounting
        # still matches the final sizes exactly
        assert res.records[-1].cumulative_grad_evals == sum(
            r.sample_size for r in res.records
        )

    def test_sample_cap_exhaustion_terminates_with_status(self):
        problem = noisy_linear(np.array([1.0, 0.4]), 1.0)
        sphere = EqualityConstraint(
            value=lambda x: float(x @ x) - 1.0, grad=lambda x: 2.0 * np.asarray(x, float)
        )
        run_cfg = cfg(
            alpha=0.1, iters=400, theta=0.05, s0=4, seed=3,
            test_kw={"max_sample_size": 64},
        )
        res = run_sqp_adaptive(problem, sphere, run_cfg, np.array([0.9, 0.1]))
        assert res.status == "sample-budget-exhausted"
        assert res.records[-1].sample_size == 64


class TestRunCvarExtended:
    def test_beta_zero_dispatches_to_risk_neutral(self, basic):
        import dataclasses

        problem, cset = basic
        c = cfg(iters=15)
        plain = run_spgd_adaptive(problem, cset, c, np.ones(20))
        via_cvar = run_cvar_extended(problem, cset, 0.0, 0.1, c, np.ones(20))
        strip = lambda rs: [dataclasses.replace(r, wall_time_ms=0.0) for r in rs]
        assert strip(plain.records) == strip(via_cvar.records)

    def test_t_recorded_and_t0_is_initial_sample_mean(self, basic):
        problem, cset = basic
        c = cfg(iters=10, theta=2.0, seed=4)
        res = run_cvar_extended(problem, cset, 0.5, 0.1, c, np.ones(20))
        s0 = draw_samples(problem, 10, 0, 4)
        x0 = project(cset, np.ones(20)).point
        t0 = float(np.mean([problem.value(x0, xi) for xi in s0.realizations]))
        assert res.extras["t0"] == pytest.approx(t0, rel=1e-12)
        assert res.records[0].t_aux == pytest.approx(t0, rel=1e-12)
        assert all(r.t_aux is not None for r in res.records)
        assert res.state.t is not None

    def test_x_iterates_stay_feasible_and_t_free(self, portfolio):
        problem, cset = portfolio
        c = cfg(alpha=0.02, iters=15, theta=1.5, seed=5)
        res = run_cvar_extended(problem, cset, 0.9, 0.1, c, np.full(100, 0.01))
        for z in res.iterates:
            assert feasibility_residual(cset, z[:-1], tol=1e-9) <= 1e-8
        assert res.state.x.shape == (100,)
        sizes = [r.sample_size for r in res.records]
        assert all(b >= a for a, b in zip(sizes, sizes[1:]))

    def test_extended_gradient_matches_finite_differences_mid_run(self, portfolio):
        problem, cset = portfolio
        c = cfg(alpha=0.02, iters=12, theta=1.5, seed=5)
        res = run_cvar_extended(problem, cset, 0.9, 0.1, c, np.full(100, 0.01))
        z = res.iterates[6]
        extended = extend_problem(problem, 0.9, 0.1)
        s = draw_samples(extended, 40, 6, 5)
        fd = central_diff(
            lambda w: float(np.mean(extended.value_many(w, s.realizations))), z
        )
        mean_grad = extended.grad_many(z, s.realizations).mean(axis=0)
        assert rel_err(fd, mean_grad) <= 1e-6

    def test_error_norm_empty_for_risk_averse_run(self, basic):
        problem, cset = basic
        res = run_cvar_extended(problem, cset, 0.5, 0.1, cfg(iters=5, theta=2.0), np.ones(20))
        assert all(r.error_norm is None for r in res.records)


class TestRunNestedQuantile:
    def test_deterministic_samples_reduce_to_scaled_gradient_step(self):
        beta, eps, alpha = 0.8, 0.1, 0.5
        x0 = np.array([1.0, -2.0])
        problem = StochasticProblem(
            dim=2,
            sampler=lambda rng, n: rng.random((n, 1)),
            value=lambda x, xi: 0.5 * float(x @ x) + 3.0,
            grad=lambda x, xi: np.asarray(x, dtype=float),
        )
        c = OptimizerConfig(
            alpha=alpha, max_iters=2, test=TestConfig(theta=1.0),
            initial_sample_size=6, seed=1,
        )
        res = run_nested_quantile(problem, full_space(2), beta, eps, c, x0)
        f0 = problem.value(x0, None)
        t_want = f0 - eps * math.log((1.0 - beta) / beta)
        assert res.records[0].t_aux == pytest.approx(t_want, abs=1e-8)
        # all sample values equal: the weight is sigma(ln((1-b)/b)) = 1 - beta
        np.testing.assert_allclose(
            res.iterates[1], x0 - alpha * (1.0 - beta) * x0, atol=1e-9
        )
        assert all(r.rho == 0.0 for r in res.records)

    def test_sample_sizes_ratchet_on_portfolio(self, portfolio):
        problem, cset = portfolio
        c = cfg(alpha=0.2, iters=40, theta=4.0, seed=5)
        res = run_nested_quantile(problem, cset, 0.9, 0.1, c, np.full(100, 0.01))
        sizes = [r.sample_size for r in res.records]
        assert all(b >= a for a, b in zip(sizes, sizes[1:]))
        assert res.records[-1].cumulative_grad_evals == sum(sizes)
        assert all(r.t_aux is not None for r in res.records)

    def test_rejects_bad_beta_and_epsilon(self, basic):
        problem, cset = basic
        with pytest.raises(ValueError):
            run_nested_quantile(problem, cset, 0.0, 0.1, cfg(iters=2), np.ones(20))
        with pytest.raises(ValueError):
            run_nested_quantile(problem, cset, 0.5, 0.0, cfg(iters=2), np.ones(20))


class TestOptimizerConfigValidation:
    def test_rejects_bad_alpha(self):
        with pytest.raises(ValueError):
            cfg(alpha=0.0)

    def test_rejects_single_sample_start_when_adaptive(self):
        with pytest.raises(ValueError):
            cfg(s0=1)

    def test_fixed_mode_allows_single_sample(self):
        assert cfg(s0=1, adaptive=False).initial_sample_size == 1
