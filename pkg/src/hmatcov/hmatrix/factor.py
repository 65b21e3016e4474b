"""Block-recursive H-Cholesky / LDL^T factorization and triangular solves."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack, solve_triangular as _dense_trsv

from ..lowrank import LowRankBlock, TruncationControl
from .arith import mul_add
from .core import HBlock, HMatrix

__all__ = [
    "NotPositiveDefiniteError",
    "HFactor",
    "factorize",
    "solve_triangular",
    "solve_full",
    "log_determinant",
]


class NotPositiveDefiniteError(ValueError):
    """Raised when a nonpositive pivot is met during factorization."""

    def __init__(self, pivot: int, context: str = ""):
        msg = f"matrix not positive definite at pivot {pivot}"
        super().__init__(f"{msg} ({context})" if context else msg)
        self.pivot = pivot
        self.context = context


@dataclass
class HFactor:
    """Lower triangular factor on the block structure of the input.

    ``form == "cholesky"``: C ~ L L^T and ``diag`` holds L_ii.
    ``form == "ldl"``: C ~ L D L^T with unit-diagonal L and ``diag`` = D.
    """

    L: HMatrix
    diag: np.ndarray
    form: str

    @property
    def n(self) -> int:
        return self.L.n

    @property
    def min_pivot(self) -> float:
        return float(self.diag.min())


def _chol_dense(M: HBlock) -> None:
    c, info = lapack.dpotrf(M.dense, lower=1, clean=1, overwrite_a=0)
    if info > 0:
        raise NotPositiveDefiniteError(M.r0 + info - 1)
    if info < 0:
        raise ValueError(f"dpotrf: illegal argument {-info}")
    M.dense = c


def _solve_lower(L: HBlock, b: np.ndarray, trans: bool = False) -> np.ndarray:
    """Solve L x = b (or L^T x = b) for a lower triangular diagonal block.

    ``b`` is indexed locally to L and is overwritten where possible.
    """
    if L.dense is not None:
        return _dense_trsv(L.dense, b, lower=True, trans=1 if trans else 0,
                           check_finite=False)
    x = np.array(b, dtype=float, copy=True)
    grid = L.children
    s = len(grid)
    off = L.r0
    sl = [slice(grid[k][k].r0 - off, grid[k][k].r1 - off) for k in range(s)]
    if not trans:
        for k in range(s):
            x[sl[k]] = _solve_lower(grid[k][k], x[sl[k]])
            for m in range(k + 1, s):
                blk = grid[m][k]
                if blk is not None:
                    x[sl[m]] -= blk.matmat(x[sl[k]])
    else:
        for k in reversed(range(s)):
            x[sl[k]] = _solve_lower(grid[k][k], x[sl[k]], trans=True)
            for j in range(k):
                blk = grid[k][j]
                if blk is not None:
                    x[sl[j]] -= blk.rmatmat(x[sl[k]])
    return x


def _solve_right_lower_t(L: HBlock, X: HBlock, ctl: TruncationControl) -> None:
    """X <- X L^{-T} in place, for a diagonal lower triangular block L."""
    if X.lr is not None:
        if X.lr.rank:
            X.lr = LowRankBlock(X.lr.A, _solve_lower(L, X.lr.B))
        return
    if X.dense is not None:
        X.dense = np.ascontiguousarray(_solve_lower(L, X.dense.T).T)
        return
    if L.children is None:
        for line in X.children:
            _solve_right_lower_t(L, line[0], ctl)
        return
    s = len(L.children)
    for line in X.children:
        for k in range(s):
            _solve_right_lower_t(L.children[k][k], line[k], ctl)
            for m in range(k + 1, s):
                lmk = L.children[m][k]
                if lmk is not None:
                    mul_add(line[m], -1.0, line[k], lmk.transpose(), ctl)


def _cholesky(M: HBlock, ctl: TruncationControl) -> None:
    """In-place Cholesky of a symmetric diagonal block (lower part used)."""
    if M.children is None:
        _chol_dense(M)
        return
    grid = M.children
    s = len(grid)
    for k in range(s):
        _cholesky(grid[k][k], ctl)
        for i in range(k + 1, s):
            _solve_right_lower_t(grid[k][k], grid[i][k], ctl)
        for i in range(k + 1, s):
            for j in range(k + 1, i + 1):
                mul_add(grid[i][j], -1.0, grid[i][k], grid[j][k].transpose(), ctl,
                        lower_only=(i == j))
    for i in range(s):
        for j in range(i + 1, s):
            grid[i][j] = None


def _diag_entries(L: HBlock, out: np.ndarray) -> None:
    for leaf in L.leaves():
        if leaf.dense is not None and leaf.r0 == leaf.c0:
            out[leaf.r0:leaf.r1] = np.diag(leaf.dense)


def _scale_columns(L: HBlock, inv: np.ndarray) -> None:
    for leaf in L.leaves():
        c = inv[leaf.c0:leaf.c1]
        if leaf.dense is not None:
            leaf.dense = leaf.dense * c[None, :]
        elif leaf.lr.rank:
            leaf.lr = LowRankBlock(leaf.lr.A, leaf.lr.B * c[:, None])


def factorize(H: HMatrix, ctl: TruncationControl, form: str = "ldl") -> HFactor:
    """H-Cholesky (or LDL^T) factorization of a symmetric positive definite H.

    The input is not modified.  Dense diagonal leaves are factored entry by
    entry; the factor keeps H's block structure with upper blocks dropped.
    """
    if form not in ("ldl", "cholesky"):
        raise ValueError(f"unknown factorization form {form!r}")
    if H.shape[0] != H.shape[1]:
        raise ValueError("factorize requires a square matrix")
    root = H.root.copy()
    _cholesky(root, ctl)
    d = np.empty(H.n)
    _diag_entries(root, d)
    if form == "ldl":
        _scale_columns(root, 1.0 / d)
        d = d * d
    return HFactor(HMatrix(root, H.bct, symmetric=False), d, form)


def solve_triangular(F: HFactor, rhs, side: str = "lower") -> np.ndarray:
    """Forward (``lower``: L x = rhs) or backward (``upper``: L^T x = rhs)
    substitution through the block structure of the factor."""
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape[0] != F.n:
        raise ValueError(f"length mismatch: expected {F.n}, got {rhs.shape[0]}")
    if side not in ("lower", "upper"):
        raise ValueError(f"unknown side {side!r}")
    if np.any(F.diag == 0):
        raise ZeroDivisionError("zero diagonal in factor")
    return _solve_lower(F.L.root, rhs, trans=(side == "upper"))


def _diag_scale(F: HFactor, x: np.ndarray, power: float) -> np.ndarray:
    d = F.diag ** power
    return x * (d if x.ndim == 1 else d[:, None])


def solve_full(F: HFactor, rhs) -> np.ndarray:
    """Approximate C^{-1} rhs through the factor."""
    y = solve_triangular(F, rhs, "lower")
    if F.form == "ldl":
        y = _diag_scale(F, y, -1.0)
    return solve_triangular(F, y, "upper")


def whiten(F: HFactor, rhs) -> np.ndarray:
    """v with v^T v = rhs^T C^{-1} rhs: L^{-1} rhs, scaled by D^{-1/2} for LDL."""
    v = solve_triangular(F, rhs, "lower")
    if F.form == "ldl":
        v = _diag_scale(F, v, -0.5)
    return v


def color(F: HFactor, xi) -> np.ndarray:
    """L xi (Cholesky) or L D^{1/2} xi (LDL), so that cov = L D L^T."""
    xi = np.asarray(xi, dtype=float)
    if F.form == "ldl":
        xi = _diag_scale(F, xi, 0.5)
    return F.L.matvec(xi)


def log_determinant(F: HFactor) -> float:
    """log det of the factored matrix: sum log D_ii or 2 sum log L_ii."""
    if np.any(F.diag <= 0):
        i = int(np.argmin(F.diag))
        raise NotPositiveDefiniteError(i)
    s = float(np.sum(np.log(F.diag)))
    return s if F.form == "ldl" else 2.0 * s
