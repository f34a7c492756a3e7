import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import small_deblur
from flexbcpg.blockspace import (BlockLayout, BlockVector, Problem, SmoothTerm, objective,
                                 zero_regularizer)
from flexbcpg.prox import l1_regularizer, prox_l1
from flexbcpg.schedule import cyclic, flex_hierarchical, full, periodic, random_single_block
from flexbcpg.solver import (TRACE_HEADER, DecreaseWarning, NumericalAbort, ScheduleNotCertified,
                             SolverConfig, StepBoundError, StepPolicy, bc_fb_iterate,
                             cycle_decrease_slack, decrease_tolerance, run, subgradient_residual)


def lsq_problem(A, b, dims, regs=None, weights=None):
    """f(x) = 0.5 ||A x - b||^2 with exact per-block constants ||A_l^T A_j||."""
    layout = BlockLayout(tuple(dims))
    L = layout.L
    cols = [A[:, layout.slice(i)] for i in range(L)]
    beta = np.array([[np.linalg.norm(cols[i].T @ cols[j], 2) for j in range(L)]
                     for i in range(L)])

    def value(x):
        r = A @ x.data - b
        return 0.5 * float(r @ r)

    def block_grad(x, ell):
        return cols[ell].T @ (A @ x.data - b)

    f = SmoothTerm(value, block_grad, beta)
    return Problem(layout, f, regs or [l1_regularizer()] * L, weights)


@pytest.fixture
def lasso(rng):
    A = rng.standard_normal((30, 12))
    b = rng.standard_normal(30)
    return lsq_problem(A, b, (3, 3, 3, 3), weights=[0.3] * 4)


class TestIterate:
    def test_zero_reg_full_mask_is_gradient_step(self, rng):
        A = rng.standard_normal((8, 4))
        b = rng.standard_normal(8)
        p = lsq_problem(A, b, (2, 2), [zero_regularizer()] * 2)
        x = BlockVector(p.layout, rng.standard_normal(4))
        tau = 0.5 / np.sqrt(np.sum(p.beta ** 2))
        out = bc_fb_iterate(p, x, [1, 1], tau)
        assert np.allclose(out.data, x.data - tau * A.T @ (A @ x.data - b), atol=1e-14)

    def test_empty_mask(self, lasso, rng):
        x = BlockVector(lasso.layout, rng.standard_normal(12))
        assert np.array_equal(bc_fb_iterate(lasso, x, [0] * 4, 1e-3).data, x.data)

    def test_scalar_soft_threshold(self):
        # threshold tau * lam = 0.05 on the gradient point 1 - 0.5 * 1
        p = lsq_problem(np.eye(1), np.zeros(1), (1,), [l1_regularizer()], [0.1])
        out = bc_fb_iterate(p, BlockVector(p.layout, [1.0]), [1], 0.5)
        assert out.data[0] == pytest.approx(0.45, abs=1e-15)

    def test_inactive_blocks_bit_identical(self, lasso, rng):
        x = BlockVector(lasso.layout, rng.standard_normal(12))
        out = bc_fb_iterate(lasso, x, [1, 0, 1, 0], 1e-3)
        assert np.array_equal(out[1], x[1]) and np.array_equal(out[3], x[3])

    def test_step_bound_rejected(self, lasso, rng):
        x = BlockVector(lasso.layout, rng.standard_normal(12))
        with pytest.raises(StepBoundError):
            bc_fb_iterate(lasso, x, [1, 1, 1, 1], 10.0)
        bc_fb_iterate(lasso, x, [1, 1, 1, 1], 10.0, acknowledge_unsafe=True)

    def test_gradients_from_pre_iteration_state(self, lasso, rng):
        # any serial order of block updates, with gradients frozen at x^n, gives the same result
        x = BlockVector(lasso.layout, rng.standard_normal(12))
        tau = 0.9 / np.sqrt(np.sum(lasso.beta ** 2))
        ref = bc_fb_iterate(lasso, x, [1, 1, 1, 1], tau)
        g = lasso.f.grads(x, range(4))
        for order in ([3, 1, 0, 2], [0, 1, 2, 3], [2, 3, 1, 0]):
            y = x.copy()
            for ell in order:
                y[ell] = prox_l1(x[ell] - tau * g[ell], tau * 0.3)
            assert np.array_equal(y.data, ref.data)


class TestPolicy:
    def test_nonconvex_tau(self):
        beta = np.full((4, 4), 2.0)
        taus = StepPolicy("nonconvex", 0.5).taus(beta, [1, 1, 0, 0])
        assert taus[0] == pytest.approx(0.5 / (np.sqrt(8) * 2.0))

    def test_convex_tau(self):
        beta = np.full((2, 2), 1.0)
        assert StepPolicy("convex_g", 0.9).taus(beta, [1, 1])[0] == pytest.approx(0.9)

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            StepPolicy("other")

    @pytest.mark.parametrize("s", [0.0, -1.0])
    def test_bad_safety(self, s):
        with pytest.raises(ValueError):
            StepPolicy(safety=s)


class TestRun:
    def test_fb_matches_reference_loop(self):
        dp = small_deblur()
        x0 = dp.coefficients(dp.z)
        x, tr = run(dp.problem, full(4), StepPolicy(), SolverConfig(20, 0.0), x0)
        tau = 0.99 / (4 * dp.beta_f)
        y = x0.data.copy()
        w = dp.problem.weights
        for _ in range(20):
            g = dp.frame.analyze(dp.blur.A_c.T @ (dp.blur.A_c @ dp.frame.synthesize(y)
                                                  @ dp.blur.A_r.T - dp.z) @ dp.blur.A_r)
            v = y - tau * g
            for ell in range(4):
                sl = dp.layout.slice(ell)
                y[sl] = dp.problem.regs[ell].prox(v[sl], tau * w[ell])
        assert np.max(np.abs(x.data - y)) <= 1e-14

    def test_convex_cyclic_converges(self, lasso):
        x0 = BlockVector(lasso.layout, np.ones(12))
        _, tr = run(lasso, cyclic(4), StepPolicy("convex_g"), SolverConfig(500, 0.0), x0)
        assert np.all(np.diff(tr.cycle_psi) <= 1e-12 * (1 + np.abs(tr.cycle_psi[:-1])))
        assert tr.cycles[-1].displacement < 1e-8

    def test_stationary_start(self, rng):
        A = rng.standard_normal((10, 4))
        b = 1e-3 * rng.standard_normal(10)
        # lambda above ||A^T b||_inf makes 0 a minimiser
        lam = 2 * np.max(np.abs(A.T @ b))
        p = lsq_problem(A, b, (2, 2), weights=[lam, lam])
        _, tr = run(p, cyclic(2), StepPolicy(), SolverConfig(5, 0.0),
                    BlockVector(p.layout))
        assert all(c.displacement == 0 and abs(c.slack) <= 1e-15 for c in tr.cycles)

    @pytest.mark.parametrize("sched", [full(4), cyclic(4, [1, 3, 0, 2]), flex_hierarchical(5),
                                       flex_hierarchical(3, "coarse_then_rest")])
    def test_deblur_certified_slack(self, sched):
        dp = small_deblur()
        with warnings.catch_warnings():
            warnings.simplefilter("error", DecreaseWarning)
            _, tr = run(dp.problem, sched, StepPolicy(), SolverConfig(30, 0.0),
                        dp.coefficients(dp.z))
        for k, c in enumerate(tr.cycles):
            assert cycle_decrease_slack(tr, k) >= -decrease_tolerance(c.psi_start)
        assert not tr.violations and tr.guaranteed

    def test_oversized_tau_detector(self):
        dp = small_deblur()
        bound = 1.0 / (4 * dp.beta_f)
        pol = StepPolicy(fixed_tau=2 * bound)
        with pytest.raises(StepBoundError):
            run(dp.problem, full(4), pol, SolverConfig(3, 0.0), dp.coefficients(dp.z))
        pol = StepPolicy(fixed_tau=2 * bound, acknowledge_unsafe=True)
        _, tr = run(dp.problem, full(4), pol, SolverConfig(3, 0.0), dp.coefficients(dp.z))
        assert not tr.guaranteed
        assert tr.violations == [0, 1, 2]
        assert not any(r.within_bound for r in tr.iterations)

    def test_divergent_tau_detector(self):
        # f = 0.5 ||x||^2, g = 0: tau = 3 flips and amplifies the iterate so psi increases
        lay = BlockLayout((2,))
        f = SmoothTerm(lambda x: 0.5 * float(x.data @ x.data), lambda x, l: x[l].copy(), 1.0)
        p = Problem(lay, f, [zero_regularizer()])
        _, tr = run(p, full(1), StepPolicy(fixed_tau=3.0, acknowledge_unsafe=True),
                    SolverConfig(2, 0.0), BlockVector(lay, [1.0, 1.0]))
        assert all(c.psi > c.psi_start for c in tr.cycles) and tr.violations == [0, 1]

    def test_uncertified_schedule(self, lasso):
        s = periodic([[1, 1, 1, 0]])
        x0 = BlockVector(lasso.layout, np.ones(12))
        with pytest.raises(ScheduleNotCertified):
            run(lasso, s, StepPolicy(), SolverConfig(2), x0)
        _, tr = run(lasso, s, StepPolicy(), SolverConfig(2, guarantee_free=True), x0)
        assert not tr.certified and not tr.guaranteed

    def test_random_is_guarantee_free(self, lasso):
        x0 = BlockVector(lasso.layout, np.ones(12))
        with pytest.raises(ScheduleNotCertified):
            run(lasso, random_single_block(4, 0), StepPolicy(), SolverConfig(2), x0)

    def test_non_finite_start(self, lasso):
        from flexbcpg.blockspace import Regularizer
        box = Regularizer(lambda v: 0.0 if np.all(v >= 0) else np.inf, lambda v, t: np.maximum(v, 0), True)
        p = Problem(lasso.layout, lasso.f, [box] * 4)
        with pytest.raises(NumericalAbort):
            run(p, full(4), StepPolicy(), SolverConfig(1), BlockVector(p.layout, -np.ones(12)))

    def test_non_finite_objective_aborts(self):
        lay = BlockLayout((1,))
        f = SmoothTerm(lambda x: float(np.exp(x.data[0] ** 2)), lambda x, l: np.array([-1e300]), 1.0)
        p = Problem(lay, f, [zero_regularizer()])
        with pytest.raises(NumericalAbort) as exc, np.errstate(over="ignore"):
            run(p, full(1), StepPolicy(), SolverConfig(3), BlockVector(lay, [0.0]))
        assert exc.value.trace is not None

    def test_stops_on_displacement(self, lasso):
        x0 = BlockVector(lasso.layout, np.ones(12))
        _, tr = run(lasso, full(4), StepPolicy(), SolverConfig(10_000, 1e-6), x0)
        assert tr.stop_reason == "displacement tolerance" and tr.cycles[-1].displacement < 1e-6

    def test_triangle_bound(self):
        dp = small_deblur()
        _, tr = run(dp.problem, flex_hierarchical(8), StepPolicy(), SolverConfig(20, 0.0),
                    dp.coefficients(dp.z))
        for c in tr.cycles:
            assert c.displacement <= c.step_norm_sum * (1 + 1e-12)

    def test_summability(self, lasso):
        pol = StepPolicy()
        x0 = BlockVector(lasso.layout, np.ones(12))
        _, tr = run(lasso, cyclic(4), pol, SolverConfig(200, 0.0), x0)
        psi_min = min(tr.cycle_psi)
        coef = min(pol.decrease_coef(t, r.beta_n) for r in tr.iterations for t in r.taus)
        partial = np.cumsum([r.step_sq for r in tr.iterations])
        assert np.all(np.diff(partial) >= 0)
        assert partial[-1] <= (tr.psi0 - psi_min) / coef * (1 + 1e-9)

    def test_block_descent_lemma(self, rng):
        dp = small_deblur()
        pol = StepPolicy()
        x = dp.coefficients(dp.z)
        for n in range(40):
            mask = rng.random(4) < 0.5
            if not mask.any():
                continue
            taus = pol.taus(dp.problem.beta, mask)
            y = bc_fb_iterate(dp.problem, x, mask, taus)
            beta_n = np.sqrt(np.sum(dp.problem.beta[:, mask] ** 2))
            d = np.sum((x.data - y.data) ** 2)
            lhs = objective(dp.problem, y) + 0.5 * (1 / taus[0] - beta_n) * d
            assert lhs <= objective(dp.problem, x) + 1e-12 * (1 + abs(objective(dp.problem, x)))
            x = y


class TestResidual:
    def test_smooth_k1_collapses_to_gradient(self, rng):
        A = rng.standard_normal((8, 4))
        b = rng.standard_normal(8)
        p = lsq_problem(A, b, (2, 2), [zero_regularizer()] * 2)
        x, tr = run(p, full(2), StepPolicy(), SolverConfig(3, 0.0, record_residual=True),
                    BlockVector(p.layout, np.zeros(4)))
        g = A.T @ (A @ x.data - b)
        assert tr.cycles[-1].residual == pytest.approx(np.linalg.norm(g), rel=1e-12)

    def test_zero_at_fixed_point(self, rng):
        A = rng.standard_normal((10, 4))
        b = 1e-3 * rng.standard_normal(10)
        lam = 2 * np.max(np.abs(A.T @ b))
        p = lsq_problem(A, b, (2, 2), weights=[lam, lam])
        _, tr = run(p, cyclic(2), StepPolicy(), SolverConfig(3, 0.0, record_residual=True),
                    BlockVector(p.layout))
        assert all(c.residual == 0.0 for c in tr.cycles)

    def test_residual_needs_cache(self, lasso):
        with pytest.raises(ValueError):
            subgradient_residual(lasso, BlockVector(lasso.layout), None)

    def test_nan_when_not_recorded(self, lasso):
        _, tr = run(lasso, full(4), StepPolicy(), SolverConfig(2, 0.0),
                    BlockVector(lasso.layout, np.ones(12)))
        assert np.isnan(tr.cycles[0].residual)


class TestTrace:
    def test_csv_layout(self, lasso):
        _, tr = run(lasso, flex_hierarchical(8), StepPolicy(), SolverConfig(3, 0.0),
                    BlockVector(lasso.layout, np.ones(12)))
        lines = tr.to_csv().strip().split("\n")
        assert tuple(lines[0].split(",")) == TRACE_HEADER
        rows = [ln.split(",") for ln in lines[1:]]
        assert len(rows) == 30
        cycle_rows = [i for i, r in enumerate(rows) if r[6]]
        assert cycle_rows == [9, 19, 29]
        assert rows[0][2] == "1000" and rows[9][2] == "1111"

    def test_curve_and_cost(self, lasso):
        _, tr = run(lasso, flex_hierarchical(8), StepPolicy(), SolverConfig(2, 0.0),
                    BlockVector(lasso.layout, np.ones(12)))
        cost, psi = tr.curve()
        assert cost[0] == 0 and cost[-1] == 2 * (8 + 2 * 4)
        assert psi[0] == tr.psi0 and psi[-1] == tr.cycle_psi[-1]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(1, 9), st.sampled_from(["nonconvex", "convex_g"]))
def test_monotone_cycles_property(seed, m, mode):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((20, 8))
    p = lsq_problem(A, rng.standard_normal(20), (2, 2, 2, 2), weights=[0.1] * 4)
    _, tr = run(p, flex_hierarchical(m), StepPolicy(mode), SolverConfig(10, 0.0),
                BlockVector(p.layout, rng.standard_normal(8)))
    assert not tr.violations
