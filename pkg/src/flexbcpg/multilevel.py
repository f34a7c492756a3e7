"""Two-level proximal gradient on wavelet coefficients and its block-coordinate twin.

The coarse model lives on the approximation space ``V``:

    Psi_H(a) = 0.5 ||A Pi_V^* a - Pi_V^* Pi_V z||^2 + lam_a g(a) + <v_H, a>

where the first-order coherence term ``v_H`` carries the detail
contribution of the fine gradient down to the coarse level.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .blockspace import BlockVector
from .blur import (CoarseOperatorCache, SeparableBlur, adjoint_blur, apply_blur,
                   coarse_gradient_fast)
from .imaging import DeblurProblem
from .prox import SmoothedReg, log_sum_regularizer
from .schedule import hierarchical
from .solver import SolverConfig, StepBoundError, StepPolicy, run
from .wavelet import HaarFrame


class TwoLevelModel:
    """Fine problem over ``(a, d)`` plus its coarse model.

    ``grouping`` sets the block layout of the fine problem seen by the
    block-coordinate solver: the details as one block (``single``) or one block
    per orientation. ``mu`` is only used by :func:`coherence_by_definition`;
    the optimisation path never smooths anything.
    """

    def __init__(self, frame: HaarFrame, blur: SeparableBlur, z, lambda_a: float,
                 lambda_d: float, eps: float, mu: float = 1e-3, grouping: str = "single"):
        self.frame = frame
        self.blur = blur
        self.z = np.asarray(z, dtype=float)
        self.lambda_a = lambda_a
        self.lambda_d = lambda_d
        self.eps = eps
        self.mu = mu
        self.fine = DeblurProblem(frame, blur, self.z, lambda_a, lambda_d, eps,
                                  grouping=grouping, fast_coarse=False)
        self.cache = CoarseOperatorCache.build(blur, frame.R, self.z)
        self.reg = log_sum_regularizer(eps)
        self.beta_f = self.fine.beta_f
        self.zv = frame.synth_v(frame.project_v(self.z))   # Pi_V^* Pi_V z
        self.zw = frame.synth_w(frame.project_w(self.z))   # Pi_W^* Pi_W z

    @property
    def approx_shape(self):
        return self.frame.approx_shape

    def split(self, x):
        x = np.asarray(x.data if isinstance(x, BlockVector) else x, dtype=float)
        n = self.frame.n_approx
        return x[:n].reshape(self.approx_shape), x[n:]

    def join(self, a, d) -> BlockVector:
        return BlockVector(self.fine.layout, np.concatenate([np.ravel(a), np.ravel(d)]))

    def coarse_operator(self, a) -> np.ndarray:
        """``A_H a = A Pi_V^* a``, an image in the fine space."""
        return apply_blur(self.blur, self.frame.synth_v(a))

    def coarse_objective(self, a, v_H) -> float:
        r = self.coarse_operator(a) - self.zv
        return (0.5 * float(np.sum(r * r)) + self.lambda_a * self.reg.value(np.ravel(a))
                + float(np.sum(np.asarray(v_H) * a)))

    def coarse_gradient(self, a, fast: bool = True) -> np.ndarray:
        """``A_H^* (A_H a - Pi_V^* Pi_V z)``."""
        if fast:
            return coarse_gradient_fast(self.cache, a)
        r = self.coarse_operator(a) - self.zv
        return self.frame.project_v(adjoint_blur(self.blur, r))


def first_order_coherence(model: TwoLevelModel, a, d) -> np.ndarray:
    """Closed form ``v_H = Pi_V A^* (A Pi_W^* d - Pi_W^* Pi_W z)``; ``a`` and the
    smoothing parameter play no role."""
    a = np.asarray(a)
    d = np.asarray(d, dtype=float).ravel()
    if a.shape != model.approx_shape or d.size != model.frame.n_details:
        raise ValueError("coefficient shapes do not match the model")
    r = apply_blur(model.blur, model.frame.synth_w(d)) - model.zw
    return model.frame.project_v(adjoint_blur(model.blur, r))


def coherence_by_definition(model: TwoLevelModel, a, d, mu: float = None,
                            base: str = "log_sum") -> np.ndarray:
    """``R_V grad Psi_mu(a, d) - grad Psi_{H,mu}(a)`` with both gradients formed
    from dense matrices and Moreau-envelope smoothing of the penalty."""
    mu = model.mu if mu is None else mu
    fr = model.frame
    side = fr.side
    N = side * side
    # dense operators on row-major vec(U)
    A = np.kron(model.blur.A_c, model.blur.A_r)
    eye = np.eye(N)
    P_v = np.array([fr.project_v(e.reshape(side, side)).ravel() for e in eye]).T
    P_w = np.array([fr.project_w(e.reshape(side, side)) for e in eye]).T
    a = np.asarray(a, dtype=float).ravel()
    d = np.asarray(d, dtype=float).ravel()
    z = model.z.ravel()
    sm = SmoothedReg(mu, base, model.eps)

    u = P_v.T @ a + P_w.T @ d
    fine_a = P_v @ (A.T @ (A @ u - z)) + model.lambda_a * sm.grad(a)
    A_H = A @ P_v.T
    zv = P_v.T @ (P_v @ z)
    coarse = A_H.T @ (A_H @ a - zv) + model.lambda_a * sm.grad(a)
    return (fine_a - coarse).reshape(model.approx_shape)


def _check_tau(model: TwoLevelModel, tau: float, mode: str) -> None:
    factor = 1.0 if mode == "nonconvex" else 2.0
    if not 0 < tau * model.beta_f < factor:
        raise StepBoundError(f"tau={tau:.6g} violates tau < {factor}/||A^*A||")


def coarse_step(model: TwoLevelModel, a, v_H, tau: float, mode: str = "nonconvex",
                fast: bool = True) -> np.ndarray:
    """One prox-gradient step on the coarse model."""
    _check_tau(model, tau, mode)
    a = np.asarray(a, dtype=float)
    v = a - tau * model.coarse_gradient(a, fast) - tau * np.asarray(v_H)
    return model.reg.prox(v.ravel(), tau * model.lambda_a).reshape(a.shape)


def fine_step(model: TwoLevelModel, a, d, tau: float):
    """Forward-backward update of both ``a`` and ``d`` from ``(a, d)``."""
    fr = model.frame
    r = apply_blur(model.blur, fr.synth_v(a) + fr.synth_w(d)) - model.z
    back = adjoint_blur(model.blur, r)
    ga = fr.project_v(back)
    gd = fr.project_w(back)
    a_new = model.reg.prox((a - tau * ga).ravel(), tau * model.lambda_a).reshape(a.shape)
    d_new = model.reg.prox(d - tau * gd, tau * model.lambda_d)
    return a_new, d_new


def two_level_run(model: TwoLevelModel, x0, n_outer: int, tau: float,
                  coarse_iters: int = 1, mode: str = "nonconvex", fast: bool = True) -> list:
    """Iterate: ``coarse_iters`` coarse steps from ``a^n`` with ``v_H`` taken at
    ``(a^n, d^n)``, then a fine update of ``(a, d)``.

    Returns the flat iterates after every coarse and every fine step.
    """
    _check_tau(model, tau, mode)
    a, d = model.split(x0)
    a = a.copy()
    d = d.copy()
    out = []
    for _ in range(n_outer):
        v_H = first_order_coherence(model, a, d)
        for _ in range(coarse_iters):
            a = coarse_step(model, a, v_H, tau, mode, fast)
            out.append(np.concatenate([a.ravel(), d]))
        a, d = fine_step(model, a, d, tau)
        out.append(np.concatenate([a.ravel(), d]))
    return out


@dataclass
class EquivalenceReport:
    deviations: np.ndarray = field(default_factory=lambda: np.zeros(0))
    tol: float = 1e-10

    @property
    def max_deviation(self) -> float:
        return float(self.deviations.max()) if self.deviations.size else 0.0

    @property
    def passed(self) -> bool:
        return self.max_deviation <= self.tol


def bcd_iterates(model: TwoLevelModel, x0, n_outer: int, tau: float,
                 coarse_iters: int = 1, mode: str = "nonconvex",
                 acknowledge_unsafe: bool = False) -> list:
    """Block-coordinate run with ``coarse_iters`` approximation-only masks then
    one full mask per cycle."""
    sched = hierarchical(model.fine.layout.L, coarse_iters)
    policy = StepPolicy(mode, fixed_tau=tau, acknowledge_unsafe=acknowledge_unsafe)
    out = []
    x0 = x0 if isinstance(x0, BlockVector) else BlockVector(model.fine.layout, x0)
    run(model.fine.problem, sched, policy, SolverConfig(n_outer, 0.0), x0,
        callback=lambda n, x: out.append(x.data.copy()))
    return out


def equivalence_check(model: TwoLevelModel, steps: int, x0, tol: float = 1e-10,
                      tau: float = None, tau_bcd: float = None, coarse_iters: int = 1,
                      mode: str = "nonconvex") -> EquivalenceReport:
    """Run both algorithms from ``x0`` and report the max coordinate gap per iterate.

    The default step ``0.99 / (L ||A^*A||)`` satisfies the block-coordinate
    bound for the full ``L``-block mask.
    """
    if steps == 0:
        return EquivalenceReport(np.zeros(0), tol)
    if tau is None:
        tau = 0.99 / (model.fine.layout.L * model.beta_f)
    tau_bcd = tau if tau_bcd is None else tau_bcd
    ml = two_level_run(model, x0, steps, tau, coarse_iters, mode)
    bc = bcd_iterates(model, x0, steps, tau_bcd, coarse_iters, mode)
    dev = np.array([np.max(np.abs(p - q)) for p, q in zip(ml, bc)])
    return EquivalenceReport(dev, tol)
