"""Wavelet-domain deblurring problem with a log-sum penalty, and experiment drivers."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .blockspace import BlockVector, Problem, SmoothTerm
from .blur import (CoarseOperatorCache, MacCounter, SeparableBlur, adjoint_blur, apply_blur,
                   coarse_gradient_fast, coarse_gradient_full, degrade)
from .pgm import PGMError, read_pgm
from .prox import log_sum_regularizer
from .schedule import SCHEDULE_KINDS, make_schedule
from .solver import SolverConfig, StepPolicy, run
from .wavelet import HaarFrame

STOCHASTIC = ("random", "stochastic_flex", "vscheme")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """Deblurring experiment settings.

    ``image`` is a PGM path or ``"phantom"`` for the built-in synthetic image.
    Block 0 holds the deepest approximation coefficients (weight
    ``lambda_a``); the detail blocks are weighted by ``lambda_d``.
    """

    image: str = "phantom"
    side: int = 128
    blur_size: int = 40
    blur_std: float = 7.0
    boundary: str = "periodic"
    noise_sigma: float = 0.01
    seed: int = 0
    lambda_a: float = 1e-10
    lambda_d: float = 1e-4
    eps: float = 1e-3
    levels: int = 2
    detail_grouping: str = "orientation"
    schedule: str = "flex"
    m: int = 8
    perm: Optional[list] = None
    step_mode: str = "nonconvex"
    safety: float = 0.99
    tau: Optional[float] = None
    acknowledge_unsafe: bool = False
    guarantee_free: bool = False
    cycles: int = 100
    tol_displacement: float = 1e-9
    record_residual: bool = False
    fast_coarse: bool = True
    out_dir: str = "out"
    name: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        positive = ("side", "blur_size", "blur_std", "lambda_a", "lambda_d", "eps",
                    "safety", "cycles")
        for key in positive:
            if not getattr(self, key) > 0:
                raise ConfigError(f"{key} must be positive, got {getattr(self, key)!r}")
        if self.tau is not None and not self.tau > 0:
            raise ConfigError(f"tau must be positive when set, got {self.tau!r}")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be nonnegative")
        if self.tol_displacement < 0:
            raise ConfigError("tol_displacement must be nonnegative")
        if self.schedule not in SCHEDULE_KINDS:
            raise ConfigError(f"schedule must be one of {SCHEDULE_KINDS}, got {self.schedule!r}")
        if self.levels not in (1, 2):
            raise ConfigError("levels must be 1 or 2")
        if self.side % (2 ** self.levels):
            raise ConfigError(f"side must be divisible by {2 ** self.levels}")
        if self.step_mode not in ("nonconvex", "convex_g"):
            raise ConfigError(f"unknown step_mode {self.step_mode!r}")
        if self.detail_grouping not in ("orientation", "single"):
            raise ConfigError(f"unknown detail_grouping {self.detail_grouping!r}")
        if self.boundary not in ("periodic", "symmetric"):
            raise ConfigError(f"unknown boundary {self.boundary!r}")
        if not isinstance(self.image, str) or not self.image:
            raise ConfigError("image: a PGM path or 'phantom' is required")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **kw) -> "ExperimentConfig":
        return ExperimentConfig.from_dict({**self.to_dict(), **kw})

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        return f"{self.schedule}_m{self.m}" if self.schedule in ("flex", "alternating") else self.schedule


def phantom(side: int) -> np.ndarray:
    """Piecewise-smooth test image in ``[0, 1]``: a shaded background, disks,
    a rectangle and a soft blob."""
    y, x = np.mgrid[0:side, 0:side] / side
    u = 0.2 + 0.15 * x + 0.1 * y
    u = np.where((x - 0.35) ** 2 + (y - 0.4) ** 2 < 0.18 ** 2, 0.85 - 0.4 * y, u)
    u = np.where((x - 0.72) ** 2 + (y - 0.68) ** 2 < 0.12 ** 2, 0.1, u)
    u = np.where((np.abs(x - 0.7) < 0.12) & (np.abs(y - 0.22) < 0.07), 0.95, u)
    u = u + 0.25 * np.exp(-((x - 0.25) ** 2 + (y - 0.8) ** 2) / 0.01)
    u = np.where((np.abs(x - 0.5) < 0.01) & (y > 0.55), 0.0, u)
    return np.clip(u, 0.0, 1.0)


def load_image(cfg: ExperimentConfig) -> np.ndarray:
    if cfg.image == "phantom":
        return phantom(cfg.side)
    if not os.path.isfile(cfg.image):
        raise ConfigError(f"image: file not found: {cfg.image!r}")
    try:
        u = read_pgm(cfg.image)
    except PGMError as exc:
        raise ConfigError(f"image: {exc}") from None
    if u.shape != (cfg.side, cfg.side):
        raise ConfigError(f"image: shape {u.shape} does not match side={cfg.side}")
    return u


def make_blur(cfg: ExperimentConfig) -> SeparableBlur:
    return SeparableBlur.gaussian(cfg.side, cfg.blur_size, cfg.blur_std, cfg.boundary)


class DeblurProblem:
    """``Psi(x) = 0.5 ||A W^* x - z||^2 + sum_l lam_l sum_i log(|x_l,i| + eps)``.

    ``W^*`` is Haar synthesis; ``x`` holds the wavelet coefficients in the
    frame's flat order. When ``fast_coarse`` is set, a gradient request for the
    approximation block alone is served by the Kronecker fast path plus a
    detail-coupling term that is refreshed only when the detail blocks change.
    """

    def __init__(self, frame: HaarFrame, blur: SeparableBlur, z, lambda_a: float,
                 lambda_d: float, eps: float, grouping: str = "orientation",
                 fast_coarse: bool = True):
        self.frame = frame
        self.blur = blur
        self.z = np.asarray(z, dtype=float)
        self.layout = frame.block_layout(grouping)
        self.fast_coarse = fast_coarse
        self.cache = CoarseOperatorCache.build(blur, frame.R, self.z) if fast_coarse else None
        self._coupling_key = None
        self._coupling = None
        self.stats = {"full_grads": 0, "fast_grads": 0, "coupling_refreshes": 0}
        # ||A^* A|| = ||A_c||^2 ||A_r||^2 for a Kronecker product
        self.beta_f = float(np.linalg.norm(blur.A_c, 2) ** 2 * np.linalg.norm(blur.A_r, 2) ** 2)
        f = SmoothTerm(value=self.data_fidelity, block_grad=self.block_grad,
                       beta=self.beta_f, partial_grads=self.partial_grads)
        L = self.layout.L
        reg = log_sum_regularizer(eps)
        self.problem = Problem(self.layout, f, [reg] * L, [lambda_a] + [lambda_d] * (L - 1))

    def image(self, x: BlockVector) -> np.ndarray:
        return self.frame.synthesize(x.data)

    def coefficients(self, u) -> BlockVector:
        return BlockVector(self.layout, self.frame.analyze(u))

    def residual(self, x: BlockVector) -> np.ndarray:
        return apply_blur(self.blur, self.image(x)) - self.z

    def data_fidelity(self, x: BlockVector) -> float:
        r = self.residual(x)
        return 0.5 * float(np.sum(r * r))

    def full_gradient(self, x: BlockVector) -> np.ndarray:
        self.stats["full_grads"] += 1
        return self.frame.analyze(adjoint_blur(self.blur, self.residual(x)))

    def detail_coupling(self, d) -> np.ndarray:
        """``Pi_V A^* (A Pi_W^* d - Pi_W^* Pi_W z)`` for the flat detail vector ``d``."""
        fr = self.frame
        r = apply_blur(self.blur, fr.synth_w(d)) - fr.synth_w(fr.project_w(self.z))
        return fr.project_v(adjoint_blur(self.blur, r))

    def partial_grads(self, x: BlockVector, blocks) -> dict:
        blocks = list(blocks)
        if self.fast_coarse and blocks == [0]:
            n = self.frame.n_approx
            d = x.data[n:]
            if self._coupling_key is None or not np.array_equal(d, self._coupling_key):
                self._coupling = self.detail_coupling(d)
                self._coupling_key = d.copy()
                self.stats["coupling_refreshes"] += 1
            a = x.data[:n].reshape(self.frame.approx_shape)
            self.stats["fast_grads"] += 1
            g = coarse_gradient_fast(self.cache, a) + self._coupling
            return {0: g.ravel()}
        g = self.full_gradient(x)
        return {ell: g[self.layout.slice(ell)] for ell in blocks}

    def block_grad(self, x: BlockVector, ell: int) -> np.ndarray:
        return self.partial_grads(x, [ell])[ell]


def build_problem(cfg: ExperimentConfig, z, blur: Optional[SeparableBlur] = None) -> DeblurProblem:
    z = np.asarray(z, dtype=float)
    if z.shape != (cfg.side, cfg.side):
        raise ValueError(f"observation shape {z.shape} does not match side {cfg.side}")
    blur = make_blur(cfg) if blur is None else blur
    frame = HaarFrame(cfg.side, cfg.levels)
    return DeblurProblem(frame, blur, z, cfg.lambda_a, cfg.lambda_d, cfg.eps,
                         cfg.detail_grouping, cfg.fast_coarse)


def psnr(u, ref) -> float:
    """Peak signal-to-noise ratio in dB for images in ``[0, 1]``; ``inf`` if equal."""
    u = np.asarray(u, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if u.shape != ref.shape:
        raise ValueError("shape mismatch")
    mse = float(np.mean((u - ref) ** 2))
    if mse == 0:
        return float("inf")
    return 10.0 * np.log10(1.0 / mse)


def seeds(cfg: ExperimentConfig) -> tuple:
    """Independent (noise, schedule) seeds derived from the config seed."""
    ss = np.random.SeedSequence(cfg.seed).spawn(2)
    return tuple(int(s.generate_state(1)[0]) for s in ss)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    trace: object
    x: BlockVector
    restored: np.ndarray
    original: np.ndarray
    observed: np.ndarray
    stats: dict = field(default_factory=dict)

    def summary(self) -> dict:
        t = self.trace
        return {
            "variant": self.config.label,
            "schedule": self.config.schedule,
            "final_objective": float(t.cycle_psi[-1]),
            "initial_objective": float(t.psi0),
            "psnr_restored": psnr(np.clip(self.restored, 0, 1), self.original),
            "psnr_observed": psnr(np.clip(self.observed, 0, 1), self.original),
            "cycles": len(t.cycles),
            "iterations": len(t.iterations),
            "cost_units": int(t.cumulative_cost[-1]) if t.iterations else 0,
            "wall_time": t.wall_time,
            "stop_reason": t.stop_reason,
            "certified": t.certified,
            "decrease_violations": len(t.violations),
            "gradient_stats": self.stats,
        }


def observe(cfg: ExperimentConfig):
    """Load the clean image and simulate its degraded observation."""
    u = load_image(cfg)
    blur = make_blur(cfg)
    z = degrade(u, blur, cfg.noise_sigma, seeds(cfg)[0])
    return u, z, blur


def run_experiment(cfg: ExperimentConfig, observation=None) -> ExperimentResult:
    u, z, blur = observe(cfg) if observation is None else observation
    dp = build_problem(cfg, z, blur)
    sched = make_schedule(cfg.schedule, dp.layout.L, cfg.m, seeds(cfg)[1], cfg.perm)
    policy = StepPolicy(cfg.step_mode, cfg.safety, cfg.tau, cfg.acknowledge_unsafe)
    scfg = SolverConfig(cfg.cycles, cfg.tol_displacement, cfg.record_residual,
                        guarantee_free=cfg.guarantee_free or cfg.schedule in STOCHASTIC)
    x0 = dp.coefficients(z)
    x, trace = run(dp.problem, sched, policy, scfg, x0)
    stats = dict(dp.stats)
    if dp.fast_coarse:
        stats["coarse_mac_ratio"] = coarse_discount(dp)
    return ExperimentResult(cfg, trace, x, dp.image(x), u, z, stats)


def coarse_discount(dp: DeblurProblem) -> float:
    """Multiply-adds of the fast approximation-block gradient relative to the
    full-space route (recorded next to the cost curves, never applied to them)."""
    a = np.zeros(dp.frame.approx_shape)
    fast, full = MacCounter(), MacCounter()
    coarse_gradient_fast(dp.cache, a, fast)
    coarse_gradient_full(dp.blur, dp.frame.R, dp.z, a, full)
    return fast.macs / full.macs


def step_values(cost, psi, grid) -> np.ndarray:
    """Objective reached with at most ``grid[i]`` cost units (step function)."""
    idx = np.searchsorted(cost, grid, side="right") - 1
    return np.asarray(psi)[idx]


def matched_cost_compare(cfgs, observation=None) -> dict:
    """Run every variant on the same observation and align the objective
    curves on cumulative block-update cost.

    Returns ``{"results": {label: ExperimentResult}, "cost": grid,
    "curves": {label: psi on grid}}``; the grid stops at the smallest total
    cost reached by all variants.
    """
    cfgs = list(cfgs)
    if not cfgs:
        raise ConfigError("variants: at least one variant is required")
    labels = [c.label for c in cfgs]
    if len(set(labels)) != len(labels):
        raise ConfigError(f"variant labels must be unique: {labels}")
    obs = observe(cfgs[0]) if observation is None else observation
    results = {c.label: run_experiment(c, obs) for c in cfgs}
    curves_raw = {k: r.trace.curve() for k, r in results.items()}
    budget = min(c[0][-1] for c in curves_raw.values())
    grid = np.unique(np.concatenate([c[0] for c in curves_raw.values()]))
    grid = grid[grid <= budget]
    curves = {k: step_values(c, p, grid) for k, (c, p) in curves_raw.items()}
    return {"results": results, "cost": grid, "curves": curves}


def write_comparison(cmp: dict, out_dir: str) -> list:
    """Per-variant ``trace_<label>.csv`` / ``curve_<label>.csv`` and a merged
    ``comparison.csv`` (one objective column per variant)."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for label, res in cmp["results"].items():
        p = os.path.join(out_dir, f"trace_{label}.csv")
        res.trace.to_csv(p)
        cost, psi = res.trace.curve()
        elapsed = [0.0] + [r.elapsed for r in res.trace.iterations]
        q = os.path.join(out_dir, f"curve_{label}.csv")
        with open(q, "w") as fh:
            fh.write("iteration,cost,seconds,psi\n")
            for i, (c, t, v) in enumerate(zip(cost, elapsed, psi)):
                fh.write(f"{i},{int(c)},{t:.6f},{v:.17g}\n")
        paths += [p, q]
    merged = os.path.join(out_dir, "comparison.csv")
    labels = list(cmp["curves"])
    with open(merged, "w") as fh:
        fh.write(",".join(["cost"] + labels) + "\n")
        for i, c in enumerate(cmp["cost"]):
            fh.write(",".join([str(int(c))] + [f"{cmp['curves'][k][i]:.17g}" for k in labels]) + "\n")
    paths.append(merged)
    return paths


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))

