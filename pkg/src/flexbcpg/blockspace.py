"""Block-structured vectors and the composite problem ``f(x) + sum_l lam_l g_l(x_l)``."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np


class LayoutError(ValueError):
    """Raised when a vector or mask does not match a block layout."""


@dataclass(frozen=True)
class BlockLayout:
    """Partition of ``R^N`` into ``L`` contiguous blocks.

    ``block_shapes`` optionally records the natural array shape of each block
    (e.g. a wavelet sub-band grid); the block itself is always stored flat.
    """

    block_dims: tuple
    block_shapes: Optional[tuple] = None

    def __post_init__(self):
        dims = tuple(int(d) for d in self.block_dims)
        if len(dims) < 1:
            raise LayoutError("a layout needs at least one block")
        if any(d < 1 for d in dims):
            raise LayoutError(f"block dimensions must be positive, got {dims}")
        object.__setattr__(self, "block_dims", dims)
        if self.block_shapes is not None:
            shapes = tuple(tuple(int(s) for s in sh) for sh in self.block_shapes)
            if len(shapes) != len(dims) or any(
                int(np.prod(sh)) != d for sh, d in zip(shapes, dims)
            ):
                raise LayoutError("block_shapes inconsistent with block_dims")
            object.__setattr__(self, "block_shapes", shapes)

    @classmethod
    def from_shapes(cls, shapes: Sequence[Sequence[int]]) -> "BlockLayout":
        shapes = tuple(tuple(s) for s in shapes)
        return cls(tuple(int(np.prod(s)) for s in shapes), shapes)

    @property
    def L(self) -> int:
        return len(self.block_dims)

    @property
    def size(self) -> int:
        return int(sum(self.block_dims))

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.block_dims)])

    def slice(self, ell: int) -> slice:
        off = self.offsets
        return slice(int(off[ell]), int(off[ell + 1]))

    def permuted(self, perm: Sequence[int]) -> "BlockLayout":
        shapes = None
        if self.block_shapes is not None:
            shapes = tuple(self.block_shapes[p] for p in perm)
        return BlockLayout(tuple(self.block_dims[p] for p in perm), shapes)


class BlockVector:
    """An element of ``H_1 + ... + H_L`` backed by one contiguous buffer.

    ``x[l]`` returns a writable view of block ``l``; views of distinct blocks
    never overlap.
    """

    __slots__ = ("layout", "data")

    def __init__(self, layout: BlockLayout, data=None):
        self.layout = layout
        if data is None:
            data = np.zeros(layout.size)
        data = np.asarray(data, dtype=float).reshape(-1)
        if data.size != layout.size:
            raise LayoutError(
                f"data has {data.size} coordinates, layout expects {layout.size}"
            )
        self.data = data

    @classmethod
    def from_blocks(cls, layout: BlockLayout, blocks) -> "BlockVector":
        if len(blocks) != layout.L:
            raise LayoutError(f"expected {layout.L} blocks, got {len(blocks)}")
        x = cls(layout)
        for ell, b in enumerate(blocks):
            b = np.asarray(b, dtype=float).reshape(-1)
            if b.size != layout.block_dims[ell]:
                raise LayoutError(f"block {ell} has wrong size {b.size}")
            x[ell] = b
        return x

    def __getitem__(self, ell: int) -> np.ndarray:
        return self.data[self.layout.slice(ell)]

    def __setitem__(self, ell: int, value) -> None:
        self.data[self.layout.slice(ell)] = value

    def block_array(self, ell: int) -> np.ndarray:
        """Block ``ell`` reshaped to its natural shape (view)."""
        if self.layout.block_shapes is None:
            return self[ell]
        return self[ell].reshape(self.layout.block_shapes[ell])

    def blocks(self) -> list:
        return [self[ell] for ell in range(self.layout.L)]

    def copy(self) -> "BlockVector":
        return BlockVector(self.layout, self.data.copy())

    def __repr__(self) -> str:
        return f"BlockVector(L={self.layout.L}, dims={self.layout.block_dims})"


def as_mask(mask, L: int) -> np.ndarray:
    """Coerce ``mask`` to a boolean activation mask of length ``L``."""
    m = np.asarray(mask, dtype=bool).reshape(-1)
    if m.size != L:
        raise LayoutError(f"mask has length {m.size}, expected {L}")
    return m


def mask_to_str(mask) -> str:
    return "".join("1" if b else "0" for b in np.asarray(mask, dtype=bool))


def check_layout(x: BlockVector, layout: BlockLayout) -> None:
    if x.layout.block_dims != layout.block_dims:
        raise LayoutError(
            f"layout mismatch: {x.layout.block_dims} vs {layout.block_dims}"
        )


@dataclass
class SmoothTerm:
    """Smooth part ``f`` with per-block gradients and block Lipschitz constants.

    ``beta`` is either the ``L x L`` matrix of constants ``beta[l, j]`` bounding
    how block ``l``'s gradient moves with block ``j``, or a scalar that is
    broadcast to every entry. ``partial_grads`` may be given to compute several
    block gradients from one shared evaluation; it must return a dict
    ``{l: grad_l}`` for the requested blocks, all evaluated at ``x``.
    """

    value: Callable[[BlockVector], float]
    block_grad: Callable[[BlockVector, int], np.ndarray]
    beta: object
    partial_grads: Optional[Callable] = None

    def beta_matrix(self, L: int) -> np.ndarray:
        b = np.asarray(self.beta, dtype=float)
        if b.ndim == 0:
            b = np.full((L, L), float(b))
        if b.shape != (L, L):
            raise LayoutError(f"beta has shape {b.shape}, expected {(L, L)}")
        if not np.all(np.isfinite(b)) or np.any(b < 0):
            raise ValueError("beta entries must be finite and nonnegative")
        return b

    def grads(self, x: BlockVector, blocks) -> dict:
        blocks = list(blocks)
        if self.partial_grads is not None:
            return self.partial_grads(x, blocks)
        return {ell: self.block_grad(x, ell) for ell in blocks}

    def full_grad(self, x: BlockVector) -> BlockVector:
        g = self.grads(x, range(x.layout.L))
        return BlockVector.from_blocks(x.layout, [g[ell] for ell in range(x.layout.L)])


@dataclass
class Regularizer:
    """Proximable block regularizer ``g``.

    ``prox(v, t)`` returns a point of ``argmin_u t*g(u) + 0.5*||u - v||^2``.
    """

    value: Callable[[np.ndarray], float]
    prox: Callable[[np.ndarray, float], np.ndarray]
    is_convex: bool
    name: str = "custom"


def zero_regularizer() -> Regularizer:
    return Regularizer(
        value=lambda v: 0.0, prox=lambda v, t: np.array(v, dtype=float, copy=True),
        is_convex=True, name="zero",
    )


@dataclass
class Problem:
    """``Psi(x) = f(x) + sum_l weights[l] * regs[l](x_l)`` over a block layout."""

    layout: BlockLayout
    f: SmoothTerm
    regs: list
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        L = self.layout.L
        if len(self.regs) != L:
            raise LayoutError(f"need {L} regularizers, got {len(self.regs)}")
        if self.weights is None:
            self.weights = np.ones(L)
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if self.weights.size != L or np.any(self.weights <= 0):
            raise ValueError("weights must be L positive reals")
        self.beta = self.f.beta_matrix(L)

    @property
    def L(self) -> int:
        return self.layout.L

    def reg_value(self, x: BlockVector) -> float:
        total = 0.0
        for ell, (g, lam) in enumerate(zip(self.regs, self.weights)):
            v = float(g.value(x[ell]))
            if v == np.inf:
                return np.inf
            total += lam * v
        return total


def objective(problem: Problem, x: BlockVector) -> float:
    """Evaluate ``f(x) + sum_l lam_l g_l(x_l)``; ``+inf`` outside ``dom g``."""
    check_layout(x, problem.layout)
    r = problem.reg_value(x)
    if r == np.inf:
        return np.inf
    return float(problem.f.value(x)) + r


def aggregate_lipschitz(beta, mask) -> float:
    """Lipschitz constant of ``grad f`` along the blocks selected by ``mask``.

    Returns ``sqrt(sum_{l, j} mask[j] * beta[l, j]**2)``.
    """
    b = np.asarray(beta, dtype=float)
    m = np.asarray(mask, dtype=bool).reshape(-1)
    if b.ndim != 2 or b.shape[0] != b.shape[1] or b.shape[1] != m.size:
        raise LayoutError(f"beta shape {b.shape} incompatible with mask length {m.size}")
    return float(np.sqrt(np.sum(b[:, m] ** 2)))


def masked_axpy(x: BlockVector, mask, update: BlockVector) -> BlockVector:
    """Blocks of ``update`` where ``mask`` is set, blocks of ``x`` elsewhere."""
    check_layout(update, x.layout)
    m = as_mask(mask, x.layout.L)
    out = x.copy()
    for ell in np.flatnonzero(m):
        out[ell] = update[ell]
    return out
