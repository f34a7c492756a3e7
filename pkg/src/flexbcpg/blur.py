"""Separable Gaussian blur, its Kronecker factors, and the coarse-space fast path."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import convolve1d

_SCIPY_MODE = {"periodic": "wrap", "symmetric": "reflect"}


def gaussian_kernel(size: int, std: float) -> np.ndarray:
    """Odd-length sampled Gaussian summing to one; even sizes are rounded up."""
    if size < 1 or std <= 0:
        raise ValueError("kernel size must be >= 1 and std > 0")
    n = size if size % 2 else size + 1
    x = np.arange(n) - n // 2
    h = np.exp(-0.5 * (x / std) ** 2)
    return h / h.sum()


def _reflect(j: np.ndarray, n: int) -> np.ndarray:
    # half-sample symmetric extension: ... b a | a b c ... y z | z y ...
    j = np.mod(j, 2 * n)
    return np.where(j < n, j, 2 * n - 1 - j)


def conv_matrix(kernel, n: int, boundary: str = "periodic") -> np.ndarray:
    """Dense ``n x n`` matrix of 1-D convolution ``y_i = sum_k h_k x_{i-k}``
    (kernel centred), built entry by entry."""
    h = np.asarray(kernel, dtype=float)
    r = h.size // 2
    M = np.zeros((n, n))
    rows = np.arange(n)
    for t, hk in enumerate(h):
        k = t - r
        cols = rows - k
        if boundary == "periodic":
            cols = np.mod(cols, n)
        elif boundary == "symmetric":
            cols = _reflect(cols, n)
        else:
            raise ValueError(f"unknown boundary {boundary!r}")
        np.add.at(M, (rows, cols), hk)
    return M


@dataclass
class SeparableBlur:
    """Blur ``A = A_r (x) A_c`` acting as ``U -> A_c U A_r^T`` on ``side x side`` images.

    ``kernel_c`` filters along axis 0 (columns), ``kernel_r`` along axis 1.
    """

    kernel_c: np.ndarray
    kernel_r: np.ndarray
    side: int
    boundary: str = "periodic"

    def __post_init__(self):
        self.kernel_c = np.asarray(self.kernel_c, dtype=float)
        self.kernel_r = np.asarray(self.kernel_r, dtype=float)
        for h in (self.kernel_c, self.kernel_r):
            if h.ndim != 1 or h.size % 2 == 0:
                raise ValueError("kernels must be 1-D with odd length")
        if self.boundary not in _SCIPY_MODE:
            raise ValueError(f"unknown boundary {self.boundary!r}")
        self.A_c = conv_matrix(self.kernel_c, self.side, self.boundary)
        self.A_r = conv_matrix(self.kernel_r, self.side, self.boundary)

    @classmethod
    def gaussian(cls, side: int, size: int, std: float, boundary: str = "periodic"):
        h = gaussian_kernel(size, std)
        return cls(h, h, side, boundary)

    @classmethod
    def identity(cls, side: int, boundary: str = "periodic"):
        return cls(np.ones(1), np.ones(1), side, boundary)

    def dense(self) -> np.ndarray:
        """Full ``N x N`` matrix acting on column-major ``vec(U)``."""
        return np.kron(self.A_r, self.A_c)


def _check_shape(b: SeparableBlur, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape != (b.side, b.side):
        raise ValueError(f"image shape {u.shape} does not match blur side {b.side}")
    return u


def apply_blur(b: SeparableBlur, u) -> np.ndarray:
    """Two 1-D convolution passes (axis 0 with ``kernel_c``, axis 1 with ``kernel_r``)."""
    u = _check_shape(b, u)
    mode = _SCIPY_MODE[b.boundary]
    v = convolve1d(u, b.kernel_c, axis=0, mode=mode)
    return convolve1d(v, b.kernel_r, axis=1, mode=mode)


def adjoint_blur(b: SeparableBlur, u) -> np.ndarray:
    """``A^* U = A_c^T U A_r``."""
    u = _check_shape(b, u)
    return b.A_c.T @ u @ b.A_r


def operator_norm_sq(b: SeparableBlur, tol: float = 1e-8, max_iter: int = 1000,
                     seed: int = 0) -> float:
    """``||A^* A||`` by power iteration, stopped on relative change ``< tol``."""
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((b.side, b.side))
    u /= np.linalg.norm(u)
    lam = 0.0
    for _ in range(max_iter):
        v = adjoint_blur(b, apply_blur(b, u))
        new = float(np.linalg.norm(v))
        if new == 0:
            return 0.0
        u = v / new
        if abs(new - lam) <= tol * new:
            return new
        lam = new
    return lam


def degrade(u, b: SeparableBlur, sigma: float, seed: int) -> np.ndarray:
    """``z = A u + n`` with i.i.d. ``N(0, sigma^2)`` noise from ``seed``."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    z = apply_blur(b, u)
    if sigma > 0:
        z = z + sigma * np.random.default_rng(seed).standard_normal(z.shape)
    return z


class MacCounter:
    """Tally of scalar multiply-adds spent in dense matrix products."""

    def __init__(self):
        self.macs = 0

    def mm(self, A, B):
        A = np.asarray(A)
        B = np.asarray(B)
        self.macs += A.shape[0] * A.shape[1] * (B.shape[1] if B.ndim == 2 else 1)
        return A @ B


@dataclass
class CoarseOperatorCache:
    """Small matrices for the approximation-block data gradient.

    With ``R`` the composite low-pass matrix, ``coarse_gradient_fast`` evaluates
    ``M_c a M_r - N_c Z N_r`` where ``M_c = R A_c^T A_c R^T``,
    ``M_r = R A_r^T A_r R^T``, ``N_c = R A_c^T R^T``, ``Z = R z R^T``,
    ``N_r = R A_r R^T``; the constant term is folded once at build time.
    """

    M_c: np.ndarray
    M_r: np.ndarray
    N_c: np.ndarray
    Z: np.ndarray
    N_r: np.ndarray
    const: np.ndarray

    @classmethod
    def build(cls, blur: SeparableBlur, R: np.ndarray, z) -> "CoarseOperatorCache":
        z = _check_shape(blur, z)
        if R.shape[1] != blur.side:
            raise ValueError("low-pass matrix does not match blur side")
        M_c = R @ blur.A_c.T @ blur.A_c @ R.T
        M_r = R @ blur.A_r.T @ blur.A_r @ R.T
        N_c = R @ blur.A_c.T @ R.T
        N_r = R @ blur.A_r @ R.T
        Z = R @ z @ R.T
        return cls(M_c, M_r, N_c, Z, N_r, N_c @ Z @ N_r)

    @property
    def coarse_side(self) -> int:
        return self.M_c.shape[0]


def coarse_gradient_fast(cache: CoarseOperatorCache, a, counter: MacCounter = None) -> np.ndarray:
    """Gradient of ``a -> 0.5 ||A R^T a R - R^T R z R^T R||^2`` in coarse space."""
    a = np.asarray(a, dtype=float)
    if a.shape != (cache.coarse_side, cache.coarse_side):
        raise ValueError(f"coarse grid shape {a.shape} does not match cache "
                         f"({cache.coarse_side}, {cache.coarse_side})")
    c = counter or MacCounter()
    return c.mm(c.mm(cache.M_c, a), cache.M_r) - cache.const


def coarse_gradient_full(blur: SeparableBlur, R: np.ndarray, z, a,
                         counter: MacCounter = None) -> np.ndarray:
    """Same quantity through full-space operators ``Pi_V A^* (A Pi_V^* a - Pi_V^* Pi_V z)``."""
    c = counter or MacCounter()
    up = c.mm(c.mm(R.T, a), R)                      # Pi_V^* a
    zv = c.mm(c.mm(R.T, c.mm(c.mm(R, z), R.T)), R)  # Pi_V^* Pi_V z
    r = c.mm(c.mm(blur.A_c, up), blur.A_r.T) - zv
    g = c.mm(c.mm(blur.A_c.T, r), blur.A_r)
    return c.mm(c.mm(R, g), R.T)
