"""Flexible block-coordinate proximal-gradient iteration with cycle diagnostics."""

from __future__ import annotations

import csv
import io
import logging
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .blockspace import (BlockVector, Problem, aggregate_lipschitz, as_mask,
                         check_layout, mask_to_str, objective)
from .schedule import Schedule, validate_essentially_cyclic

log = logging.getLogger(__name__)

TRACE_HEADER = ("n", "k", "mask", "tau", "psi", "step_sq", "cycle_psi", "slack",
                "residual", "displacement")


class StepBoundError(ValueError):
    """A step size exceeds the bound that guarantees sufficient decrease."""


class NumericalAbort(RuntimeError):
    """The objective became non-finite; ``trace`` holds the rows so far."""

    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace


class ScheduleNotCertified(ValueError):
    pass


class DecreaseWarning(RuntimeWarning):
    pass


@dataclass
class StepPolicy:
    """Step sizes ``tau = safety / beta_n`` (``nonconvex``) or
    ``2 * safety / beta_n`` (``convex_g``), with ``beta_n`` the aggregate
    Lipschitz constant of the current mask.

    ``fixed_tau`` (scalar or per block) overrides the rule. A ``safety`` of 1
    or more, or a ``fixed_tau`` beyond the bound, is rejected at the first
    step unless ``acknowledge_unsafe`` is set.
    """

    mode: str = "nonconvex"
    safety: float = 0.99
    fixed_tau: Optional[object] = None
    acknowledge_unsafe: bool = False

    def __post_init__(self):
        if self.mode not in ("nonconvex", "convex_g"):
            raise ValueError(f"unknown step mode {self.mode!r}")
        if self.safety <= 0:
            raise ValueError("safety must be positive")

    @property
    def factor(self) -> float:
        return 1.0 if self.mode == "nonconvex" else 2.0

    def taus(self, beta: np.ndarray, mask) -> np.ndarray:
        L = beta.shape[0]
        if self.fixed_tau is not None:
            return np.broadcast_to(np.asarray(self.fixed_tau, dtype=float), (L,)).copy()
        b = aggregate_lipschitz(beta, mask)
        if b == 0:
            return np.full(L, np.inf)
        return np.full(L, self.factor * self.safety / b)

    def decrease_coef(self, tau: float, beta_n: float) -> float:
        if self.mode == "nonconvex":
            return 0.5 * (1.0 / tau - beta_n)
        return 1.0 / tau - 0.5 * beta_n


def check_step_bound(taus, beta_n: float, mask, factor: float = 1.0) -> None:
    active = np.asarray(mask, dtype=bool)
    t = np.asarray(taus, dtype=float)[active]
    if t.size == 0:
        return
    if np.any(t <= 0) or np.any(t * beta_n >= factor):
        raise StepBoundError(
            f"step sizes {t.max():.6g} violate tau < {factor}/beta_n = {factor / beta_n:.6g}"
        )


def _fb_step(problem: Problem, x: BlockVector, mask: np.ndarray, taus: np.ndarray):
    active = [int(i) for i in np.flatnonzero(mask)]
    out = x.copy()
    if not active:
        return out, {}
    grads = problem.f.grads(x, active)
    for ell in active:
        t = taus[ell]
        v = x[ell] - t * grads[ell]
        out[ell] = problem.regs[ell].prox(v, t * problem.weights[ell])
    return out, grads


def bc_fb_iterate(problem: Problem, x: BlockVector, mask, taus, mode: str = "nonconvex",
                  acknowledge_unsafe: bool = False) -> BlockVector:
    """One block forward-backward iteration.

    Every active block takes a prox-gradient step from the same point ``x``;
    inactive blocks are copied unchanged.
    """
    check_layout(x, problem.layout)
    m = as_mask(mask, problem.L)
    taus = np.broadcast_to(np.asarray(taus, dtype=float), (problem.L,))
    if not acknowledge_unsafe:
        factor = 1.0 if mode == "nonconvex" else 2.0
        check_step_bound(taus, aggregate_lipschitz(problem.beta, m), m, factor)
    return _fb_step(problem, x, m, taus)[0]


@dataclass
class SolverConfig:
    max_cycles: int = 100
    tol_displacement: float = 1e-9
    record_residual: bool = False
    guarantee_free: bool = False
    certify_horizon: Optional[int] = None

    def __post_init__(self):
        if self.max_cycles < 1:
            raise ValueError("max_cycles must be >= 1")
        if self.tol_displacement < 0:
            raise ValueError("tol_displacement must be >= 0")


@dataclass
class IterRecord:
    n: int
    k: int
    mask: str
    taus: np.ndarray          # steps of the active blocks
    psi: float                # objective before the iteration
    step_sq: float            # sum_l ||x_l^n - x_l^{n+1}||^2
    step_norm: float          # sum_l ||x_l^n - x_l^{n+1}||
    beta_n: float
    decrease_term: float      # sum over active blocks of coef * ||delta_l||^2
    psi_next: float
    within_bound: bool = True
    elapsed: float = 0.0      # seconds since the run started

    @property
    def cost(self) -> int:
        return self.mask.count("1")

    @property
    def slack(self) -> float:
        return self.psi - self.psi_next - self.decrease_term


@dataclass
class CycleRecord:
    k: int
    n_end: int
    psi_start: float
    psi: float
    slack: float
    residual: float
    displacement: float
    step_norm_sum: float
    decrease_ok: bool


@dataclass
class LastUpdate:
    n: int
    pre: np.ndarray
    post: np.ndarray
    grad: np.ndarray
    tau: float


@dataclass
class SolverTrace:
    K: int
    kind: str
    certified: bool
    mode: str
    guaranteed: bool = True
    iterations: list = field(default_factory=list)
    cycles: list = field(default_factory=list)
    psi0: float = np.nan
    stop_reason: str = ""
    wall_time: float = 0.0

    @property
    def cycle_psi(self) -> np.ndarray:
        return np.array([self.psi0] + [c.psi for c in self.cycles])

    @property
    def violations(self) -> list:
        return [c.k for c in self.cycles if not c.decrease_ok]

    @property
    def cumulative_cost(self) -> np.ndarray:
        return np.cumsum([r.cost for r in self.iterations])

    def curve(self) -> tuple:
        """Objective after each iteration against cumulative block-unit cost,
        starting at ``(0, psi0)``."""
        cost = np.concatenate([[0], self.cumulative_cost])
        psi = np.concatenate([[self.psi0], [r.psi_next for r in self.iterations]])
        return cost, psi

    def rows(self):
        cyc = {c.n_end: c for c in self.cycles}
        for r in self.iterations:
            taus = np.unique(r.taus)
            tau = ";".join(f"{t:.17g}" for t in taus) if taus.size else ""
            c = cyc.get(r.n)
            yield [r.n, r.k, r.mask, tau, f"{r.psi:.17g}", f"{r.step_sq:.17g}",
                   "" if c is None else f"{c.psi:.17g}",
                   "" if c is None else f"{c.slack:.17g}",
                   "" if c is None or np.isnan(c.residual) else f"{c.residual:.17g}",
                   "" if c is None else f"{c.displacement:.17g}"]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        w.writerows(self.rows())
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def cycle_decrease_slack(trace: SolverTrace, k: int) -> float:
    """``Psi(xbar^k) - Psi(xbar^{k+1}) - sum coef * ||delta||^2`` over cycle ``k``."""
    return trace.cycles[k].slack


def decrease_tolerance(psi: float) -> float:
    return 1e-12 * (1.0 + abs(psi))


def subgradient_residual(problem: Problem, xbar: BlockVector, last: dict) -> float:
    """Norm of the subgradient element built from each block's last update.

    ``last[l]`` holds the pre/post values of block ``l``, the block gradient at
    the pre-update iterate, and the step used.
    """
    if last is None:
        raise ValueError("subgradient residual needs cached block updates (record_residual)")
    if len(last) < problem.L:
        return np.nan
    g = problem.f.grads(xbar, range(problem.L))
    sq = 0.0
    for ell in range(problem.L):
        u = last[ell]
        b = (u.pre - u.post) / u.tau - u.grad + g[ell]
        sq += float(b @ b)
    return float(np.sqrt(sq))


def run(problem: Problem, schedule: Schedule, policy: StepPolicy, config: SolverConfig,
        x0: BlockVector, callback: Optional[Callable] = None):
    """Run cycles of ``schedule.K`` iterations until ``max_cycles`` or until the
    cycle displacement drops below ``tol_displacement``.

    Returns the final iterate and a :class:`SolverTrace`.
    """
    check_layout(x0, problem.layout)
    if schedule.L != problem.L:
        raise ValueError(f"schedule has {schedule.L} blocks, problem has {problem.L}")
    K = schedule.K
    cert = validate_essentially_cyclic(schedule, config.certify_horizon or 10 * K)
    certified = bool(cert) and schedule.deterministic
    if not certified and not config.guarantee_free:
        raise ScheduleNotCertified(
            f"{schedule.kind} schedule is not essentially cyclic with K={K} "
            f"(window {cert.first_violation}, missing {cert.missing}); "
            "set guarantee_free to run it anyway"
        )
    trace = SolverTrace(K=K, kind=schedule.kind, certified=certified, mode=policy.mode,
                        guaranteed=certified and not policy.acknowledge_unsafe)

    t0 = time.perf_counter()
    x = x0.copy()
    psi = objective(problem, x)
    if not np.isfinite(psi):
        raise NumericalAbort("starting point outside dom g", trace)
    trace.psi0 = psi
    xbar = x.copy()
    n = 0
    for k in range(config.max_cycles):
        psi_start = psi
        last: dict = {}
        decrease_sum = 0.0
        step_norm_sum = 0.0
        cycle_within = True
        for _ in range(K):
            mask = schedule.mask_at(n)
            beta_n = aggregate_lipschitz(problem.beta, mask)
            taus = policy.taus(problem.beta, mask)
            try:
                check_step_bound(taus, beta_n, mask, policy.factor)
                within = True
            except StepBoundError:
                if not policy.acknowledge_unsafe:
                    raise
                within = False
                cycle_within = False
            x_new, grads = _fb_step(problem, x, mask, taus)
            psi_next = objective(problem, x_new)
            step_sq = 0.0
            step_norm = 0.0
            dec = 0.0
            for ell in grads:
                delta = x[ell] - x_new[ell]
                s = float(delta @ delta)
                step_sq += s
                step_norm += np.sqrt(s)
                dec += policy.decrease_coef(taus[ell], beta_n) * s
                if config.record_residual:
                    last[ell] = LastUpdate(n, x[ell].copy(), x_new[ell].copy(),
                                           np.array(grads[ell], copy=True), taus[ell])
            active = np.asarray(mask, dtype=bool)
            trace.iterations.append(IterRecord(
                n, k, mask_to_str(mask), taus[active], psi, step_sq, step_norm,
                beta_n, dec, psi_next, within, time.perf_counter() - t0))
            if not np.isfinite(psi_next):
                trace.stop_reason = "non-finite objective"
                raise NumericalAbort(f"objective became {psi_next} at iteration {n}", trace)
            if callback is not None:
                callback(n, x_new)
            x = x_new
            psi = psi_next
            decrease_sum += dec
            step_norm_sum += step_norm
            n += 1

        residual = np.nan
        if config.record_residual:
            residual = subgradient_residual(problem, x, last)
        slack = psi_start - psi - decrease_sum
        tol = decrease_tolerance(psi_start)
        # out-of-bound steps void the certificate even when the slack happens to be positive
        ok = slack >= -tol and psi <= psi_start + tol and cycle_within
        if not ok and trace.guaranteed:
            warnings.warn(f"cycle {k}: sufficient decrease violated (slack {slack:.3e})",
                          DecreaseWarning, stacklevel=2)
        displacement = float(np.linalg.norm(x.data - xbar.data))
        trace.cycles.append(CycleRecord(k, n - 1, psi_start, psi, slack, residual,
                                        displacement, step_norm_sum, ok))
        xbar = x.copy()
        if displacement < config.tol_displacement:
            trace.stop_reason = "displacement tolerance"
            break
    else:
        trace.stop_reason = "max_cycles"
    trace.wall_time = time.perf_counter() - t0
    log.debug("run %s: %d cycles, stop=%s", schedule.kind, len(trace.cycles), trace.stop_reason)
    return x, trace
