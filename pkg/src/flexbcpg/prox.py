"""Proximity operators: log-sum penalty, soft-thresholding, Moreau-envelope smoothing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blockspace import Regularizer


@dataclass(frozen=True)
class LogSumParams:
    """Parameters of ``u -> (1/(2 tau)) (u - a)^2 + lam * log(|u| + eps)``."""

    lam: float
    eps: float
    tau: float

    def __post_init__(self):
        if not (self.lam > 0 and self.eps > 0 and self.tau > 0):
            raise ValueError(f"log-sum parameters must be positive: {self}")


def log_sum_value(v, eps: float) -> float:
    return float(np.sum(np.log(np.abs(v) + eps)))


def log_sum_prox_objective(u, a, p: LogSumParams):
    u = np.asarray(u, dtype=float)
    return (u - a) ** 2 / (2 * p.tau) + p.lam * np.log(np.abs(u) + p.eps)


def _log_sum_prox(a: np.ndarray, t: float, eps: float) -> np.ndarray:
    # minimise 0.5 (u - a)^2 + t log(|u| + eps); stationary points with sign(u) = sign(a)
    # solve u^2 + (eps - |a|) u + t - |a| eps = 0.
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise ValueError("log-sum prox needs finite input")
    s = np.sign(a)
    r = np.abs(a)
    disc = (r + eps) ** 2 - 4 * t
    root = np.sqrt(np.maximum(disc, 0.0))
    # the larger root is the local minimiser; the smaller is a local maximum
    u = 0.5 * (r - eps + root)
    ok = (disc >= 0) & (u > 0)

    def obj(w):
        return 0.5 * (w - r) ** 2 + t * np.log(w + eps)

    take = ok & (obj(np.where(ok, u, 0.0)) < obj(np.zeros_like(r)))
    return np.where(take, s * u, 0.0)


def prox_log_sum_scalar(a: float, p: LogSumParams) -> float:
    """Global minimiser of ``(1/(2 tau))(u - a)^2 + lam log(|u| + eps)``.

    Candidates are ``0`` and the real positive root of the per-sign
    stationarity quadratic; the one with the smaller objective wins, ties go
    to ``0``.
    """
    if not np.isfinite(a):
        raise ValueError(f"non-finite input {a}")
    return float(_log_sum_prox(np.array([a]), p.tau * p.lam, p.eps)[0])


def prox_log_sum(v, p: LogSumParams) -> np.ndarray:
    """Componentwise :func:`prox_log_sum_scalar`."""
    return _log_sum_prox(np.asarray(v, dtype=float), p.tau * p.lam, p.eps)


def prox_l1(v, tau_lambda: float) -> np.ndarray:
    if tau_lambda < 0:
        raise ValueError("threshold must be nonnegative")
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - tau_lambda, 0.0)


def log_sum_regularizer(eps: float) -> Regularizer:
    """``g(u) = sum_i log(|u_i| + eps)``; non-convex, prox in closed form."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    return Regularizer(
        value=lambda v: log_sum_value(v, eps),
        prox=lambda v, t: _log_sum_prox(v, t, eps),
        is_convex=False,
        name="log_sum",
    )


def l1_regularizer() -> Regularizer:
    return Regularizer(
        value=lambda v: float(np.sum(np.abs(v))),
        prox=prox_l1,
        is_convex=True,
        name="l1",
    )


@dataclass(frozen=True)
class SmoothedReg:
    """Moreau envelope ``g_mu(v) = min_u g(u) + ||u - v||^2 / (2 mu)``.

    ``base`` is ``"l1"`` (Huber) or ``"log_sum"`` (needs ``eps``).
    """

    mu: float
    base: str = "l1"
    eps: float = 1e-3

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError("mu must be positive")
        if self.base not in ("l1", "log_sum"):
            raise ValueError(f"unknown base regularizer {self.base!r}")

    def prox(self, v) -> np.ndarray:
        if self.base == "l1":
            return prox_l1(v, self.mu)
        return _log_sum_prox(v, self.mu, self.eps)

    def value(self, v) -> float:
        v = np.asarray(v, dtype=float)
        u = self.prox(v)
        if self.base == "l1":
            gu = np.sum(np.abs(u))
        else:
            gu = log_sum_value(u, self.eps)
        return float(gu + np.sum((u - v) ** 2) / (2 * self.mu))

    def grad(self, v) -> np.ndarray:
        return smoothed_grad(self, v)


def smoothed_grad(reg: SmoothedReg, v) -> np.ndarray:
    """Gradient ``(v - prox_{mu g}(v)) / mu`` of the Moreau envelope."""
    v = np.asarray(v, dtype=float)
    if reg.base == "l1":
        return np.clip(v / reg.mu, -1.0, 1.0)
    return (v - reg.prox(v)) / reg.mu
