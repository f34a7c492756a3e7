"""Orthonormal 2-D Haar multiresolution analysis (one or two levels).

Sub-band convention for one level on an image ``U``: filtering along axis 0
then axis 1 gives ``approx = LL`` and ``details = (LH, HL, HH)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blockspace import BlockLayout

SQRT1_2 = 1.0 / np.sqrt(2.0)


@dataclass
class WaveletCoeffs:
    approx: np.ndarray
    details: tuple  # three (side/2, side/2) grids

    def flat(self) -> np.ndarray:
        return np.concatenate([self.approx.ravel()] + [d.ravel() for d in self.details])


@dataclass
class TwoLevelCoeffs:
    approx: np.ndarray   # (side/4, side/4)
    details: tuple       # (coarse level triple, fine level triple)


def _check_image(u, divisor: int = 2) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.ndim != 2 or u.shape[0] != u.shape[1]:
        raise ValueError(f"expected a square image, got shape {u.shape}")
    if u.shape[0] % divisor:
        raise ValueError(f"image side {u.shape[0]} is not divisible by {divisor}")
    return u


def haar_analyze(u) -> WaveletCoeffs:
    u = _check_image(u)
    lo = (u[0::2] + u[1::2]) * SQRT1_2
    hi = (u[0::2] - u[1::2]) * SQRT1_2
    ll = (lo[:, 0::2] + lo[:, 1::2]) * SQRT1_2
    lh = (lo[:, 0::2] - lo[:, 1::2]) * SQRT1_2
    hl = (hi[:, 0::2] + hi[:, 1::2]) * SQRT1_2
    hh = (hi[:, 0::2] - hi[:, 1::2]) * SQRT1_2
    return WaveletCoeffs(ll, (lh, hl, hh))


def haar_synthesize(c: WaveletCoeffs) -> np.ndarray:
    a = np.asarray(c.approx, dtype=float)
    if len(c.details) != 3 or any(np.shape(d) != a.shape for d in c.details):
        raise ValueError("detail grids must match the approximation grid")
    lh, hl, hh = c.details
    h, w = a.shape
    lo = np.empty((h, 2 * w))
    hi = np.empty((h, 2 * w))
    lo[:, 0::2] = (a + lh) * SQRT1_2
    lo[:, 1::2] = (a - lh) * SQRT1_2
    hi[:, 0::2] = (hl + hh) * SQRT1_2
    hi[:, 1::2] = (hl - hh) * SQRT1_2
    u = np.empty((2 * h, 2 * w))
    u[0::2] = (lo + hi) * SQRT1_2
    u[1::2] = (lo - hi) * SQRT1_2
    return u


def two_level_analyze(u) -> TwoLevelCoeffs:
    u = _check_image(u, 4)
    c1 = haar_analyze(u)
    c2 = haar_analyze(c1.approx)
    return TwoLevelCoeffs(c2.approx, (c2.details, c1.details))


def two_level_synthesize(c: TwoLevelCoeffs) -> np.ndarray:
    coarse, fine = c.details
    a1 = haar_synthesize(WaveletCoeffs(c.approx, tuple(coarse)))
    return haar_synthesize(WaveletCoeffs(a1, tuple(fine)))


@dataclass(frozen=True)
class ToeplitzQMF:
    """Strided Haar low-pass matrix ``R`` with ``R U R^T = approx(U)``."""

    R: np.ndarray


def build_toeplitz_qmf(side: int) -> ToeplitzQMF:
    if side < 2 or side % 2:
        raise ValueError(f"side must be even, got {side}")
    R = np.zeros((side // 2, side))
    i = np.arange(side // 2)
    R[i, 2 * i] = SQRT1_2
    R[i, 2 * i + 1] = SQRT1_2
    return ToeplitzQMF(R)


class HaarFrame:
    """Haar analysis/synthesis on ``levels`` in {1, 2} levels for a ``side x side`` image.

    Coefficients are handled as one flat vector: the deepest approximation
    first, then for each orientation (LH, HL, HH) the detail grids from the
    coarsest level to the finest. ``project_v``/``project_w`` split that
    vector into the approximation grid and the detail vector.
    """

    def __init__(self, side: int, levels: int = 2):
        if levels not in (1, 2):
            raise ValueError("only one or two levels are supported")
        _check_image(np.zeros((side, side)), 2 ** levels)
        self.side = side
        self.levels = levels
        n = side // 2 ** levels
        self.approx_shape = (n, n)
        # detail grid sides per level, coarse to fine
        self.level_sides = [side // 2 ** (levels - i) for i in range(levels)]
        self.n_approx = n * n
        self.n_details = side * side - n * n

    def _levels(self, u):
        out = []
        a = u
        for _ in range(self.levels):
            c = haar_analyze(a)
            out.append(c.details)
            a = c.approx
        return a, out[::-1]  # coarse to fine

    def analyze(self, u) -> np.ndarray:
        u = _check_image(u, 2 ** self.levels)
        if u.shape[0] != self.side:
            raise ValueError(f"image side {u.shape[0]} != frame side {self.side}")
        a, dets = self._levels(u)
        parts = [a.ravel()]
        for o in range(3):
            for lvl in dets:
                parts.append(lvl[o].ravel())
        return np.concatenate(parts)

    def split(self, c):
        c = np.asarray(c, dtype=float).reshape(-1)
        if c.size != self.side ** 2:
            raise ValueError(f"expected {self.side ** 2} coefficients, got {c.size}")
        a = c[: self.n_approx].reshape(self.approx_shape)
        pos = self.n_approx
        dets = [[None] * 3 for _ in range(self.levels)]
        for o in range(3):
            for i, s in enumerate(self.level_sides):
                dets[i][o] = c[pos: pos + s * s].reshape(s, s)
                pos += s * s
        return a, dets

    def synthesize(self, c) -> np.ndarray:
        a, dets = self.split(c)
        for lvl in dets:
            a = haar_synthesize(WaveletCoeffs(a, tuple(lvl)))
        return a

    def project_v(self, u) -> np.ndarray:
        return self.analyze(u)[: self.n_approx].reshape(self.approx_shape)

    def project_w(self, u) -> np.ndarray:
        return self.analyze(u)[self.n_approx:]

    def synth_v(self, a) -> np.ndarray:
        c = np.zeros(self.side ** 2)
        c[: self.n_approx] = np.asarray(a, dtype=float).ravel()
        return self.synthesize(c)

    def synth_w(self, d) -> np.ndarray:
        c = np.zeros(self.side ** 2)
        c[self.n_approx:] = np.asarray(d, dtype=float).ravel()
        return self.synthesize(c)

    @property
    def R(self) -> np.ndarray:
        """Composite low-pass matrix: ``project_v(U) = R U R^T``."""
        R = build_toeplitz_qmf(self.side).R
        for i in range(1, self.levels):
            R = build_toeplitz_qmf(self.side // 2 ** i).R @ R
        return R

    def block_layout(self, grouping: str = "orientation") -> BlockLayout:
        """Block 0 is the approximation; details form one block per orientation
        (``orientation``) or a single block (``single``)."""
        n_or = sum(s * s for s in self.level_sides)
        if grouping == "orientation":
            return BlockLayout((self.n_approx, n_or, n_or, n_or))
        if grouping == "single":
            return BlockLayout((self.n_approx, self.n_details))
        raise ValueError(f"unknown detail grouping {grouping!r}")
