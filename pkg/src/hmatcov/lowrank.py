"""Low-rank blocks, adaptive cross approximation and SVD recompression."""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.linalg import lapack

__all__ = [
    "TruncationControl",
    "LowRankBlock",
    "aca_approximate",
    "recompress_svd",
    "lowrank_norm2",
    "dense_to_lowrank",
    "DEFAULT_KMAX",
]

DEFAULT_KMAX = 100
# relative pivot size below which a residual row is treated as zero
_ZERO_PIVOT = 1e-14


@dataclass(frozen=True)
class TruncationControl:
    """Fixed-rank or adaptive-accuracy truncation with a hard rank cap.

    ``eps = 0`` in adaptive mode keeps every nonzero singular value (the
    "full rank" control used for oracle comparisons); ``k_max=None`` means
    no cap.
    """

    mode: str = "adaptive"
    eps: float = 1e-6
    k: int = 0
    k_max: Optional[int] = DEFAULT_KMAX

    def __post_init__(self):
        if self.mode not in ("adaptive", "fixed"):
            raise ValueError(f"unknown truncation mode {self.mode!r}")
        if self.mode == "adaptive" and self.eps < 0:
            raise ValueError("eps must be nonnegative")
        if self.mode == "fixed" and self.k < 0:
            raise ValueError("k must be nonnegative")
        if self.k_max is not None and self.k_max < 1:
            raise ValueError("k_max must be >= 1")

    @classmethod
    def adaptive(cls, eps: float, k_max: Optional[int] = DEFAULT_KMAX):
        return cls("adaptive", eps=eps, k_max=k_max)

    @classmethod
    def fixed(cls, k: int, k_max: Optional[int] = None):
        return cls("fixed", eps=0.0, k=k, k_max=k_max)

    @classmethod
    def exact(cls):
        return cls("adaptive", eps=0.0, k_max=None)

    def rank_limit(self, p: int, q: int) -> int:
        lim = min(p, q)
        if self.mode == "fixed":
            lim = min(lim, self.k)
        if self.k_max is not None:
            lim = min(lim, self.k_max)
        return lim

    def truncated_rank(self, s: np.ndarray, p: int, q: int) -> int:
        """How many of the (descending) singular values ``s`` to keep."""
        if s.size == 0 or s[0] <= 0:
            return 0
        keep = int(np.count_nonzero(s > self.eps * s[0]))
        if self.mode == "fixed":
            keep = int(np.count_nonzero(s > 0))
        return min(keep, self.rank_limit(p, q))


class LowRankBlock:
    """R = A @ B.T with A of shape (p, k) and B of shape (q, k)."""

    __slots__ = ("A", "B")

    def __init__(self, A: np.ndarray, B: np.ndarray):
        if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[1]:
            raise ValueError(f"incompatible factors {A.shape} and {B.shape}")
        self.A = A
        self.B = B

    @classmethod
    def zeros(cls, p: int, q: int) -> "LowRankBlock":
        return cls(np.zeros((p, 0)), np.zeros((q, 0)))

    @property
    def rank(self) -> int:
        return self.A.shape[1]

    @property
    def shape(self):
        return (self.A.shape[0], self.B.shape[0])

    @property
    def T(self) -> "LowRankBlock":
        return LowRankBlock(self.B, self.A)

    def to_dense(self) -> np.ndarray:
        return self.A @ self.B.T

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.A @ (self.B.T @ x)

    @property
    def nbytes(self) -> int:
        return self.A.nbytes + self.B.nbytes

    def __repr__(self) -> str:
        return f"LowRankBlock(shape={self.shape}, rank={self.rank})"


def aca_approximate(entry_fn: Callable, p: int, q: int,
                    ctl: TruncationControl, recompress: bool = True) -> LowRankBlock:
    """Partially pivoted adaptive cross approximation of a p x q block.

    ``entry_fn(rows, cols)`` returns the dense submatrix for local index
    arrays.  Crosses are added until the rank-one update satisfies
    ``|a| |b| <= eps |a_1| |b_1|`` (adaptive) or the rank limit is reached.
    The column factor carries the inverse pivot.
    """
    limit = ctl.rank_limit(p, q)
    adaptive = ctl.mode == "adaptive"
    all_rows = np.arange(p)
    all_cols = np.arange(q)
    cap = max(min(limit, 16), 1)
    A = np.empty((p, cap))
    B = np.empty((q, cap))
    k = 0
    used = np.zeros(p, dtype=bool)
    first_norm = None
    first_pivot = None
    i = 0
    while k < limit:
        row = np.asarray(entry_fn([i], all_cols), dtype=float)[0]
        if k:
            row -= B[:, :k] @ A[i, :k]
        used[i] = True
        j = int(np.argmax(np.abs(row)))
        pivot = row[j]
        scale = first_pivot if first_pivot is not None else abs(pivot)
        if pivot == 0.0 or abs(pivot) <= _ZERO_PIVOT * scale:
            free = np.flatnonzero(~used)
            if free.size == 0:
                break
            i = int(free[0])
            continue
        if first_pivot is None:
            first_pivot = abs(pivot)
        col = np.asarray(entry_fn(all_rows, [j]), dtype=float)[:, 0]
        if k:
            col -= A[:, :k] @ B[j, :k]
        if k == cap:
            cap = min(2 * cap, limit)
            A = np.hstack([A, np.empty((p, cap - k))])
            B = np.hstack([B, np.empty((q, cap - k))])
        A[:, k] = col / pivot
        B[:, k] = row
        k += 1
        norm = abs(1.0 / pivot) * np.sqrt((col @ col) * (row @ row))
        if first_norm is None:
            first_norm = norm
        if adaptive and norm <= ctl.eps * first_norm:
            break
        mag = np.abs(col)
        mag[used] = -1.0
        i = int(np.argmax(mag))
        if mag[i] < 0:
            break
    if k == 0:
        return LowRankBlock.zeros(p, q)
    lr = LowRankBlock(A[:, :k].copy(), B[:, :k].copy())
    return recompress_svd(lr, ctl) if recompress else lr


def recompress_svd(lr: LowRankBlock, ctl: TruncationControl) -> LowRankBlock:
    """Truncate A B^T via QR of both factors and an SVD of the k x k core."""
    p, q = lr.shape
    if lr.rank == 0:
        return lr
    Qa, Ra = _qr(lr.A)
    Qb, Rb = _qr(lr.B)
    U, s, Vt, info = lapack.dgesdd(Ra @ Rb.T)
    if info != 0:
        U, s, Vt = np.linalg.svd(Ra @ Rb.T)
    r = ctl.truncated_rank(s, p, q)
    return LowRankBlock(Qa @ (U[:, :r] * s[:r]), Qb @ Vt[:r].T)


@functools.lru_cache(maxsize=512)
def _upper_mask(k: int) -> np.ndarray:
    return np.triu(np.ones((k, k)))


def _qr(M: np.ndarray):
    """Economic QR through LAPACK directly (the numpy wrapper dominates for
    the small factors met here)."""
    m, k = M.shape
    if k > m:
        return np.linalg.qr(M)
    qr, tau, _, info = lapack.dgeqrf(M)
    if info != 0:
        return np.linalg.qr(M)
    R = qr[:k] * _upper_mask(k)
    Q, _, info = lapack.dorgqr(qr[:, :k], tau)
    return Q, R


def lowrank_norm2(lr: LowRankBlock, min_iter: int = 20, max_iter: int = 1000,
                  rtol: float = 1e-12, seed: int = 0) -> float:
    """Spectral norm of A B^T: exact for rank one, else power iteration."""
    if lr.rank == 0:
        return 0.0
    if lr.rank == 1:
        return float(np.linalg.norm(lr.A[:, 0]) * np.linalg.norm(lr.B[:, 0]))
    A, B = lr.A, lr.B
    AtA = A.T @ A
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(B.shape[0])
    x /= np.linalg.norm(x)
    lam = 0.0
    for it in range(max_iter):
        # M^T M x = B (A^T A) (B^T x)
        u = B.T @ x
        v = AtA @ u
        new = float(np.sqrt(max(u @ v, 0.0)))
        x = B @ v
        xn = np.linalg.norm(x)
        if xn == 0:
            return 0.0
        x /= xn
        if it >= min_iter and abs(new - lam) <= rtol * new:
            return new
        lam = new
    return lam


def dense_to_lowrank(M: np.ndarray, ctl: TruncationControl) -> LowRankBlock:
    """Best approximation of a dense block under ``ctl`` by truncated SVD."""
    M = np.asarray(M, dtype=float)
    p, q = M.shape
    if p == 0 or q == 0:
        return LowRankBlock.zeros(p, q)
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    r = ctl.truncated_rank(s, p, q)
    return LowRankBlock(U[:, :r] * s[:r], Vt[:r].T)
