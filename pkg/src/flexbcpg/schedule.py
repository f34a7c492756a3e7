"""Block activation schedules and the essentially-cyclic certificate.

Blocks are indexed from 0 in code. For hierarchical schedules block 0 is the
coarsest (wavelet approximation) block.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

class Schedule:
    """Sequence of activation masks grouped into cycles of ``K`` iterations.

    Masks are produced by ``generator(n)`` for periodic rules, or drawn once
    and cached for seeded random rules, so ``mask_at`` is random access and
    reproducible either way.
    """

    def __init__(self, kind: str, L: int, K: int, mask_fn: Callable[[int], np.ndarray],
                 deterministic: bool = True, params: Optional[dict] = None):
        if K < 1 or L < 1:
            raise ValueError("need K >= 1 and L >= 1")
        self.kind = kind
        self.L = L
        self.K = K
        self.deterministic = deterministic
        self.params = dict(params or {})
        self._mask_fn = mask_fn

    def mask_at(self, n: int) -> np.ndarray:
        if n < 0:
            raise IndexError(n)
        return self._mask_fn(n)

    def masks(self, count: int) -> np.ndarray:
        return np.array([self.mask_at(n) for n in range(count)], dtype=bool)

    def __repr__(self) -> str:
        return f"Schedule(kind={self.kind!r}, L={self.L}, K={self.K}, params={self.params})"


class _Cached:
    """Lazily extended list of draws from one seeded generator."""

    def __init__(self, draw, seed):
        self._rng = np.random.default_rng(seed)
        self._draw = draw
        self._cache = []

    def __call__(self, n):
        while len(self._cache) <= n:
            self._cache.extend(self._draw(self._rng))
        return self._cache[n].copy()


@dataclass(frozen=True)
class Certificate:
    """Outcome of :func:`validate_essentially_cyclic`."""

    valid: bool
    K: int
    horizon: int
    first_violation: Optional[int] = None
    missing: tuple = field(default=())

    def __bool__(self) -> bool:
        return self.valid


def validate_essentially_cyclic(s: Schedule, horizon: Optional[int] = None,
                                K: Optional[int] = None) -> Certificate:
    """Check that every window of ``K`` consecutive masks covers all blocks.

    Windows start at ``j = 0 .. horizon - K``. A violation is reported through
    the returned certificate, never raised.
    """
    K = s.K if K is None else K
    horizon = 10 * K if horizon is None else horizon
    if horizon < K:
        raise ValueError("horizon must be at least K")
    M = s.masks(horizon).astype(np.int64)
    # sliding-window activation counts
    csum = np.vstack([np.zeros((1, s.L), dtype=np.int64), np.cumsum(M, axis=0)])
    win = csum[K:] - csum[:-K]
    bad = np.flatnonzero(np.any(win == 0, axis=1))
    if bad.size == 0:
        return Certificate(True, K, horizon)
    j = int(bad[0])
    missing = tuple(int(i) for i in np.flatnonzero(win[j] == 0))
    return Certificate(False, K, horizon, j, missing)


def periodic(masks: Sequence[Sequence[bool]], kind: str = "periodic", **params) -> Schedule:
    pattern = np.asarray(masks, dtype=bool)
    if pattern.ndim != 2:
        raise ValueError("masks must be a K x L array")
    K, L = pattern.shape
    return Schedule(kind, L, K, lambda n: pattern[n % K].copy(), params=params)


def full(L: int) -> Schedule:
    """Forward-backward: every block at every iteration, ``K = 1``."""
    return periodic(np.ones((1, L), dtype=bool), kind="fb", L=L)


def cyclic(L: int, perm: Optional[Sequence[int]] = None) -> Schedule:
    """Iteration ``n`` activates exactly block ``perm[n mod L]``."""
    perm = list(range(L)) if perm is None else [int(p) for p in perm]
    if sorted(perm) != list(range(L)):
        raise ValueError(f"{perm} is not a permutation of 0..{L - 1}")
    return periodic(np.eye(L, dtype=bool)[perm], kind="cyclic", L=L, perm=perm)


def reshuffled_cyclic(L: int, seed: int) -> Schedule:
    """Cyclic rule with a fresh uniform permutation drawn every ``L`` iterations.

    A window of ``L`` iterations straddling two permutations can miss a block,
    so the certified cycle length is ``K = 2L - 1``.
    """
    eye = np.eye(L, dtype=bool)
    fn = _Cached(lambda rng: list(eye[rng.permutation(L)]), seed)
    return Schedule("reshuffled", L, 2 * L - 1, fn, params={"L": L, "seed": seed})


def flex_hierarchical(m: int, pattern: str = "coarse_then_full") -> Schedule:
    """Ten-iteration cycle over 4 blocks: ``m`` coarse-only updates then ``10 - m``
    updates of every block (``coarse_then_full``) or of the detail blocks only
    (``coarse_then_rest``)."""
    if not 1 <= m <= 9:
        raise ValueError(f"m must be in 1..9, got {m}")
    coarse = [True, False, False, False]
    if pattern == "coarse_then_full":
        rest, kind = [True] * 4, "flex"
    elif pattern == "coarse_then_rest":
        rest, kind = [False, True, True, True], "alternating"
    else:
        raise ValueError(f"unknown pattern {pattern!r}")
    return periodic([coarse] * m + [rest] * (10 - m), kind=kind, m=m, pattern=pattern)


def hierarchical(L: int, m: int) -> Schedule:
    """``m`` coarse-only iterations (block 0) followed by one full update."""
    if m < 0:
        raise ValueError("m must be nonnegative")
    coarse = np.zeros(L, dtype=bool)
    coarse[0] = True
    return periodic([coarse] * m + [np.ones(L, dtype=bool)], kind="periodic",
                    L=L, m=m)


def vscheme_sample(m: int, L: int, rng: np.random.Generator) -> np.ndarray:
    """Monotone mask: bit 0 always set, each next bit set with probability
    ``1/m`` given the previous one is set."""
    if m < 1 or L < 1:
        raise ValueError("need m >= 1 and L >= 1")
    mask = np.zeros(L, dtype=bool)
    mask[0] = True
    for ell in range(1, L):
        if not rng.random() < 1.0 / m:
            break
        mask[ell] = True
    return mask


def vscheme(m: int, L: int, seed: int, K: Optional[int] = None,
            groups: Optional[Sequence[Sequence[int]]] = None) -> Schedule:
    """Stream of independent :func:`vscheme_sample` masks.

    ``groups`` maps each level to the blocks it activates (default: one block
    per level), so several blocks can share one level.
    """
    groups = [[i] for i in range(L)] if groups is None else [list(g) for g in groups]
    n_blocks = 1 + max(max(g) for g in groups)

    def draw(rng):
        lv = vscheme_sample(m, len(groups), rng)
        out = np.zeros(n_blocks, dtype=bool)
        for on, g in zip(lv, groups):
            out[g] = on
        return [out]

    K = len(groups) if K is None else K
    return Schedule("vscheme", n_blocks, K, _Cached(draw, seed), deterministic=False,
                    params={"m": m, "levels": len(groups), "seed": seed})


def stochastic_flex(m: int, seed: int) -> Schedule:
    """4-block V-scheme: approximation always, the three detail blocks jointly
    with probability ``1/m``."""
    s = vscheme(m, 2, seed, K=10, groups=[[0], [1, 2, 3]])
    s.kind = "stochastic_flex"
    return s


def random_single_block(L: int, seed: int) -> Schedule:
    """One uniformly drawn block per iteration (no deterministic guarantee)."""
    eye = np.eye(L, dtype=bool)
    fn = _Cached(lambda rng: list(eye[rng.integers(0, L, size=256)]), seed)
    return Schedule("random", L, L, fn, deterministic=False,
                    params={"L": L, "seed": seed})


def make_schedule(kind: str, L: int, m: int = 8, seed: int = 0,
                  perm: Optional[Sequence[int]] = None) -> Schedule:
    """Build a schedule from its config name."""
    if kind == "fb":
        return full(L)
    if kind == "cyclic":
        if perm is None:
            perm = list(np.random.default_rng(seed).permutation(L))
        return cyclic(L, perm)
    if kind == "reshuffled":
        return reshuffled_cyclic(L, seed)
    if kind in ("flex", "alternating"):
        if L != 4:
            raise ValueError(f"{kind} schedule needs 4 blocks, got {L}")
        return flex_hierarchical(m, "coarse_then_full" if kind == "flex" else "coarse_then_rest")
    if kind == "hierarchical":
        return hierarchical(L, m)
    if kind == "random":
        return random_single_block(L, seed)
    if kind == "stochastic_flex":
        if L != 4:
            raise ValueError("stochastic_flex needs 4 blocks")
        return stochastic_flex(m, seed)
    if kind == "vscheme":
        return vscheme(m, L, seed)
    raise ValueError(f"unknown schedule kind {kind!r}")


SCHEDULE_KINDS = ("fb", "cyclic", "reshuffled", "flex", "alternating", "hierarchical",
                  "random", "stochastic_flex", "vscheme")
