"""Invariant checks run by ``flexbcpg validate``.

Each check reports the measured error, its tolerance, and the slack
``tol - measured`` (negative means failure).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blur import (CoarseOperatorCache, MacCounter, SeparableBlur, adjoint_blur, apply_blur,
                   coarse_gradient_fast, coarse_gradient_full)
from .imaging import ExperimentConfig, build_problem, observe, seeds
from .multilevel import TwoLevelModel, coherence_by_definition, first_order_coherence
from .schedule import make_schedule, validate_essentially_cyclic
from .solver import SolverConfig, StepPolicy, decrease_tolerance, run
from .wavelet import HaarFrame

SMALL_SIDE = 16


@dataclass
class CheckResult:
    name: str
    measured: float
    tol: float
    passed: bool
    detail: str = ""

    @property
    def slack(self) -> float:
        return self.tol - self.measured

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status}  {self.name:<22} measured={self.measured:.3e} tol={self.tol:.1e} "
                f"slack={self.slack:+.3e}  {self.detail}").rstrip()


def _rel(a, b) -> float:
    a = np.asarray(a)
    b = np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def check_schedule(cfg: ExperimentConfig) -> CheckResult:
    s = make_schedule(cfg.schedule, 4 if cfg.detail_grouping == "orientation" else 2,
                      cfg.m, seeds(cfg)[1], cfg.perm)
    cert = validate_essentially_cyclic(s)
    ok = bool(cert) and s.deterministic
    n_bad = 0.0 if ok else 1.0
    if ok:
        detail = f"{s.kind} is {s.K}-cyclic over {cert.horizon} iterations"
    else:
        why = "stochastic schedule" if bool(cert) else \
            f"window {cert.first_violation} misses blocks {cert.missing}"
        detail = f"not certified ({why})"
        if cfg.guarantee_free:
            detail += "; waived by guarantee_free"
    return CheckResult("schedule_certificate", n_bad, 0.5, ok or cfg.guarantee_free, detail)


def check_adjoint(cfg: ExperimentConfig, rng) -> CheckResult:
    b = SeparableBlur.gaussian(cfg.side, cfg.blur_size, cfg.blur_std, cfg.boundary)
    fr = HaarFrame(cfg.side, cfg.levels)
    u, v = rng.standard_normal((2, cfg.side, cfg.side))
    c = rng.standard_normal(cfg.side ** 2)
    e1 = abs(np.sum(apply_blur(b, u) * v) - np.sum(u * adjoint_blur(b, v))) / (
        np.linalg.norm(u) * np.linalg.norm(v))
    e2 = abs(fr.analyze(u) @ c - np.sum(u * fr.synthesize(c))) / (
        np.linalg.norm(u) * np.linalg.norm(c))
    return CheckResult("adjoint", float(max(e1, e2)), 1e-12, max(e1, e2) <= 1e-12,
                       f"blur {e1:.1e}, wavelet {e2:.1e}")


def check_kronecker(cfg: ExperimentConfig, rng) -> CheckResult:
    n = SMALL_SIDE
    b = SeparableBlur.gaussian(n, cfg.blur_size, cfg.blur_std, cfg.boundary)
    u = rng.standard_normal((n, n))
    e1 = _rel(b.dense() @ u.ravel(order="F"), apply_blur(b, u).ravel(order="F"))
    fr = HaarFrame(n, cfg.levels)
    z = rng.standard_normal((n, n))
    a = rng.standard_normal(fr.approx_shape)
    cache = CoarseOperatorCache.build(b, fr.R, z)
    fast, full = MacCounter(), MacCounter()
    e2 = _rel(coarse_gradient_fast(cache, a, fast), coarse_gradient_full(b, fr.R, z, a, full))
    ok = max(e1, e2) <= 1e-10 and fast.macs < full.macs
    return CheckResult("kronecker", max(e1, e2), 1e-10, ok,
                       f"dense {e1:.1e}, coarse {e2:.1e}, macs {fast.macs}/{full.macs}")


def check_coherence(cfg: ExperimentConfig, rng) -> CheckResult:
    n = SMALL_SIDE
    b = SeparableBlur.gaussian(n, cfg.blur_size, cfg.blur_std, cfg.boundary)
    fr = HaarFrame(n, 1)
    worst = 0.0
    for mu in (1e-1, 1e-3, 1e-6):
        model = TwoLevelModel(fr, b, rng.standard_normal((n, n)), cfg.lambda_a, cfg.lambda_d,
                              cfg.eps, mu)
        a = rng.standard_normal(fr.approx_shape)
        d = rng.standard_normal(fr.n_details)
        worst = max(worst, _rel(coherence_by_definition(model, a, d),
                                first_order_coherence(model, a, d)))
    return CheckResult("first_order_coherence", worst, 1e-10, worst <= 1e-10)


def check_decrease(cfg: ExperimentConfig, cycles: int = 5) -> CheckResult:
    """Short run with every step recorded; fails on any out-of-bound step,
    negative cycle slack, or objective increase."""
    _, z, blur = observe(cfg)
    dp = build_problem(cfg, z, blur)
    sched = make_schedule(cfg.schedule, dp.layout.L, cfg.m, seeds(cfg)[1], cfg.perm)
    policy = StepPolicy(cfg.step_mode, cfg.safety, cfg.tau, acknowledge_unsafe=True)
    _, tr = run(dp.problem, sched, policy,
                SolverConfig(min(cycles, cfg.cycles), 0.0, guarantee_free=True),
                dp.coefficients(z))
    out_of_bound = sum(not r.within_bound for r in tr.iterations)
    worst = 0.0
    for c in tr.cycles:
        tol = decrease_tolerance(c.psi_start)
        worst = max(worst, -c.slack / tol, (c.psi - c.psi_start) / tol)
    bad = [c.k for c in tr.cycles if not c.decrease_ok]
    ok = out_of_bound == 0 and not bad
    detail = f"{len(tr.cycles)} cycles, min slack {min(c.slack for c in tr.cycles):.3e}"
    if out_of_bound:
        detail += f", {out_of_bound} steps beyond the bound"
    if bad:
        detail += f", violating cycles {bad}"
    # measured in units of the per-cycle tolerance
    return CheckResult("sufficient_decrease", max(worst, float(out_of_bound)), 1.0, ok, detail)


def run_checks(cfg: ExperimentConfig) -> list:
    rng = np.random.default_rng(cfg.seed)
    return [check_schedule(cfg), check_adjoint(cfg, rng), check_kronecker(cfg, rng),
            check_coherence(cfg, rng), check_decrease(cfg)]
