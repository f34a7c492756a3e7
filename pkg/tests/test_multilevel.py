import numpy as np
import pytest

from flexbcpg.blockspace import BlockVector, objective
from flexbcpg.blur import SeparableBlur, gaussian_kernel
from flexbcpg.multilevel import (TwoLevelModel, bcd_iterates, coarse_step,
                                 coherence_by_definition, equivalence_check, fine_step,
                                 first_order_coherence, two_level_run)
from flexbcpg.solver import StepBoundError, bc_fb_iterate
from flexbcpg.wavelet import HaarFrame


def model(side=16, levels=1, seed=0, grouping="single", blur=None, z=None, lam=(1e-3, 1e-2)):
    rng = np.random.default_rng(seed)
    frame = HaarFrame(side, levels)
    blur = blur or SeparableBlur(gaussian_kernel(5, 1.0), gaussian_kernel(7, 1.5), side)
    z = rng.random((side, side)) if z is None else z
    return TwoLevelModel(frame, blur, z, lam[0], lam[1], 1e-2, grouping=grouping), rng


def rel(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300)


class TestCoherence:
    def test_zero_when_no_details_and_z_in_v(self, rng):
        fr = HaarFrame(16, 1)
        z = fr.synth_v(rng.standard_normal((8, 8)))
        m, _ = model(z=z)
        v = first_order_coherence(m, np.zeros((8, 8)), np.zeros(fr.n_details))
        assert np.max(np.abs(v)) <= 1e-13

    def test_identity_blur_zero_z(self, rng):
        m, _ = model(blur=SeparableBlur.identity(16), z=np.zeros((16, 16)))
        v = first_order_coherence(m, rng.standard_normal((8, 8)),
                                  rng.standard_normal(m.frame.n_details))
        assert np.max(np.abs(v)) <= 1e-13

    @pytest.mark.parametrize("mu", [1e-1, 1e-3, 1e-6])
    @pytest.mark.parametrize("levels", [1, 2])
    def test_matches_definition(self, mu, levels):
        m, rng = model(levels=levels, seed=int(mu * 1e6) + levels)
        a = rng.standard_normal(m.approx_shape)
        d = rng.standard_normal(m.frame.n_details)
        assert rel(coherence_by_definition(m, a, d, mu), first_order_coherence(m, a, d)) <= 1e-10

    def test_independent_of_a(self, rng):
        m, _ = model()
        d = rng.standard_normal(m.frame.n_details)
        v1 = first_order_coherence(m, rng.standard_normal((8, 8)), d)
        v2 = first_order_coherence(m, rng.standard_normal((8, 8)), d)
        assert np.array_equal(v1, v2)

    def test_shape_mismatch(self):
        m, _ = model()
        with pytest.raises(ValueError):
            first_order_coherence(m, np.zeros((4, 4)), np.zeros(m.frame.n_details))


class TestCoarseStep:
    def test_coarse_gradient_fast_vs_full(self, rng):
        m, _ = model(levels=2)
        a = rng.standard_normal(m.approx_shape)
        assert rel(m.coarse_gradient(a, True), m.coarse_gradient(a, False)) <= 1e-10

    def test_equals_masked_block_iterate(self, rng):
        m, _ = model()
        a = rng.standard_normal((8, 8))
        d = rng.standard_normal(m.frame.n_details)
        tau = 0.5 / m.beta_f
        got = coarse_step(m, a, first_order_coherence(m, a, d), tau)
        ref = bc_fb_iterate(m.fine.problem, m.join(a, d), [1, 0], tau)
        assert np.max(np.abs(got.ravel() - ref[0])) <= 1e-12

    def test_stationary_point_unchanged(self, rng):
        # with a = 0 and a gradient inside the prox dead zone the step stays at 0
        m, _ = model(lam=(1e3, 1e-2))
        a = np.zeros((8, 8))
        d = rng.standard_normal(m.frame.n_details)
        out = coarse_step(m, a, first_order_coherence(m, a, d), 0.5 / m.beta_f)
        assert not out.any()

    def test_fast_flag_same_result(self, rng):
        m, _ = model(levels=2)
        a = rng.standard_normal(m.approx_shape)
        v = rng.standard_normal(m.approx_shape)
        tau = 0.5 / m.beta_f
        assert np.max(np.abs(coarse_step(m, a, v, tau, fast=True)
                             - coarse_step(m, a, v, tau, fast=False))) <= 1e-12

    @pytest.mark.parametrize("factor,mode", [(1.0, "nonconvex"), (2.0, "convex_g")])
    def test_step_bound(self, factor, mode):
        m, _ = model()
        with pytest.raises(StepBoundError):
            coarse_step(m, np.zeros((8, 8)), np.zeros((8, 8)), factor / m.beta_f, mode)
        coarse_step(m, np.zeros((8, 8)), np.zeros((8, 8)), 0.99 * factor / m.beta_f, mode)

    def test_objective_decreases(self, rng):
        m, _ = model()
        a = rng.standard_normal((8, 8))
        v = first_order_coherence(m, a, rng.standard_normal(m.frame.n_details))
        new = coarse_step(m, a, v, 0.9 / m.beta_f)
        assert m.coarse_objective(new, v) <= m.coarse_objective(a, v) + 1e-12


class TestFineStep:
    def test_equals_full_mask_iterate(self, rng):
        m, _ = model(grouping="orientation", levels=2)
        a = rng.standard_normal(m.approx_shape)
        d = rng.standard_normal(m.frame.n_details)
        tau = 0.2 / m.beta_f
        a2, d2 = fine_step(m, a, d, tau)
        ref = bc_fb_iterate(m.fine.problem, m.join(a, d), [1, 1, 1, 1], tau)
        assert np.max(np.abs(np.concatenate([a2.ravel(), d2]) - ref.data)) <= 1e-12


class TestEquivalence:
    def test_one_outer_8x8_four_blocks(self, rng):
        m, _ = model(side=8, grouping="orientation")
        x0 = m.join(rng.standard_normal((4, 4)), rng.standard_normal(48))
        rep = equivalence_check(m, 1, x0)
        assert rep.deviations.size == 2 and rep.max_deviation <= 1e-12

    def test_fifty_steps(self):
        m, _ = model()
        x0 = m.join(m.frame.project_v(m.z), m.frame.project_w(m.z))
        rep = equivalence_check(m, 50, x0)
        assert rep.passed and rep.deviations.size == 100

    def test_several_coarse_iterations(self, rng):
        m, _ = model(levels=2)
        x0 = m.join(rng.standard_normal(m.approx_shape), rng.standard_normal(m.frame.n_details))
        assert equivalence_check(m, 10, x0, coarse_iters=3).max_deviation <= 1e-10

    def test_zero_steps(self):
        m, _ = model()
        rep = equivalence_check(m, 0, np.zeros(256))
        assert rep.passed and rep.deviations.size == 0

    def test_mismatched_tau_detected(self):
        m, _ = model()
        x0 = m.join(m.frame.project_v(m.z), m.frame.project_w(m.z))
        tau = 0.4 / m.beta_f
        assert not equivalence_check(m, 5, x0, tau=tau, tau_bcd=0.9 * tau).passed

    def test_bcd_trace_monotone(self, rng):
        m, _ = model()
        x0 = m.join(m.frame.project_v(m.z), m.frame.project_w(m.z))
        xs = bcd_iterates(m, x0, 20, 0.99 / (2 * m.beta_f))
        psi = [objective(m.fine.problem, BlockVector(m.fine.layout, x)) for x in xs]
        assert np.all(np.diff(psi) <= 1e-12 * (1 + np.abs(psi[:-1])))

    def test_two_level_run_shape(self):
        m, _ = model()
        out = two_level_run(m, np.zeros(256), 3, 0.1 / m.beta_f, coarse_iters=2)
        assert len(out) == 9 and all(x.shape == (256,) for x in out)
