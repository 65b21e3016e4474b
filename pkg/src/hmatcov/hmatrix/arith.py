"""Truncated H-matrix arithmetic: C <- beta*C + alpha*A*B with re-truncation."""

from __future__ import annotations

import numpy as np

from ..lowrank import LowRankBlock, TruncationControl, recompress_svd
from .core import HBlock, HMatrix

__all__ = ["add_lowrank", "add_dense", "mul_add", "scale", "truncated_multiply_add"]


def _thin_lowrank(D: np.ndarray) -> LowRankBlock:
    """Exact factored form of a dense block, rank = its short side."""
    p, q = D.shape
    if p <= q:
        return LowRankBlock(np.eye(p), D.T.copy())
    return LowRankBlock(D.copy(), np.eye(q))


def add_lowrank(C: HBlock, lr: LowRankBlock, ctl: TruncationControl) -> None:
    """C += lr (``lr`` indexed locally to C), truncating low-rank leaves."""
    if lr.rank == 0:
        return
    if C.children is not None:
        for line in C.children:
            for c in line:
                if c is None:
                    continue
                r = slice(c.r0 - C.r0, c.r1 - C.r0)
                s = slice(c.c0 - C.c0, c.c1 - C.c0)
                add_lowrank(c, LowRankBlock(lr.A[r], lr.B[s]), ctl)
    elif C.dense is not None:
        C.dense += lr.A @ lr.B.T
    else:
        merged = LowRankBlock(np.hstack([C.lr.A, lr.A]), np.hstack([C.lr.B, lr.B]))
        C.lr = recompress_svd(merged, ctl)


def add_dense(C: HBlock, D: np.ndarray, ctl: TruncationControl) -> None:
    """C += D (dense, indexed locally to C)."""
    if C.children is not None:
        for line in C.children:
            for c in line:
                if c is None:
                    continue
                add_dense(c, D[c.r0 - C.r0:c.r1 - C.r0, c.c0 - C.c0:c.c1 - C.c0], ctl)
    elif C.dense is not None:
        C.dense += D
    else:
        add_lowrank(C, _thin_lowrank(D), ctl)


def scale(C: HBlock, beta: float) -> None:
    for leaf in C.leaves():
        if leaf.dense is not None:
            leaf.dense *= beta
        else:
            leaf.lr = LowRankBlock(leaf.lr.A * beta, leaf.lr.B)


def _merge_grid(rows, cols, parts, ctl) -> LowRankBlock:
    """Combine low-rank pieces living on sub-blocks into one truncated block."""
    p = rows[-1][1] - rows[0][0]
    q = cols[-1][1] - cols[0][0]
    As, Bs = [], []
    for (i0, i1), (j0, j1), lr in parts:
        if lr.rank == 0:
            continue
        A = np.zeros((p, lr.rank))
        B = np.zeros((q, lr.rank))
        A[i0 - rows[0][0]:i1 - rows[0][0]] = lr.A
        B[j0 - cols[0][0]:j1 - cols[0][0]] = lr.B
        As.append(A)
        Bs.append(B)
    if not As:
        return LowRankBlock.zeros(p, q)
    return recompress_svd(LowRankBlock(np.hstack(As), np.hstack(Bs)), ctl)


def _product_lowrank(A: HBlock, B: HBlock, ctl: TruncationControl) -> LowRankBlock:
    """Truncated low-rank representation of A @ B."""
    if A.lr is not None:
        return LowRankBlock(A.lr.A, B.rmatmat(A.lr.B))
    if B.lr is not None:
        return LowRankBlock(A.matmat(B.lr.A), B.lr.B)
    if A.dense is not None:
        return recompress_svd(_thin_lowrank(B.rmatmat(A.dense.T).T), ctl)
    if B.dense is not None:
        return recompress_svd(_thin_lowrank(A.matmat(B.dense)), ctl)
    parts = []
    for i, aline in enumerate(A.children):
        for j in range(len(B.children[0])):
            acc = None
            for k, a in enumerate(aline):
                b = B.children[k][j]
                if a is None or b is None:
                    continue
                prod = _product_lowrank(a, b, ctl)
                if acc is None:
                    acc = prod
                else:
                    acc = recompress_svd(LowRankBlock(np.hstack([acc.A, prod.A]),
                                                      np.hstack([acc.B, prod.B])), ctl)
            if acc is not None:
                rows = (aline[0].r0, aline[0].r1)
                cols = (B.children[0][j].c0, B.children[0][j].c1)
                parts.append((rows, cols, acc))
    return _merge_grid(A.row_splits(), B.col_splits(), parts, ctl)


def mul_add(C: HBlock, alpha: float, A: HBlock, B: HBlock, ctl: TruncationControl,
            lower_only: bool = False) -> None:
    """C += alpha * A @ B with truncation of every touched low-rank leaf.

    With ``lower_only`` and a diagonal hierarchical C, blocks strictly above
    the diagonal are left untouched.
    """
    if A.lr is not None:
        if A.lr.rank:
            add_lowrank(C, LowRankBlock(alpha * A.lr.A, B.rmatmat(A.lr.B)), ctl)
        return
    if B.lr is not None:
        if B.lr.rank:
            add_lowrank(C, LowRankBlock(alpha * A.matmat(B.lr.A), B.lr.B), ctl)
        return
    if C.children is not None and A.children is not None and B.children is not None:
        diag = lower_only and C.r0 == C.c0
        for i, cline in enumerate(C.children):
            for j, c in enumerate(cline):
                if c is None or (diag and j > i):
                    continue
                for k, a in enumerate(A.children[i]):
                    b = B.children[k][j]
                    if a is None or b is None:
                        continue
                    mul_add(c, alpha, a, b, ctl, lower_only=diag and i == j)
        return
    if A.dense is not None:
        add_dense(C, alpha * B.rmatmat(A.dense.T).T, ctl)
        return
    if B.dense is not None:
        add_dense(C, alpha * A.matmat(B.dense), ctl)
        return
    # A and B hierarchical, C a leaf
    if C.dense is not None:
        C.dense += alpha * A.matmat(B.to_dense())
        return
    prod = _product_lowrank(A, B, ctl)
    add_lowrank(C, LowRankBlock(alpha * prod.A, prod.B), ctl)


def truncated_multiply_add(C: HMatrix, alpha: float, A: HMatrix, B: HMatrix,
                           beta: float, ctl: TruncationControl) -> HMatrix:
    """Return beta*C (+) alpha*(A (.) B) on C's block structure."""
    if not (A.shape == B.shape == C.shape):
        raise ValueError("tree mismatch: operands have different shapes")
    if C.bct is not None and A.bct is not None and B.bct is not None:
        if not (C.bct.ctree is A.bct.ctree is B.bct.ctree):
            raise ValueError("tree mismatch: operands use different cluster trees")
    out = C.copy()
    out.symmetric = False
    if beta != 1.0:
        scale(out.root, beta)
    if alpha != 0.0:
        mul_add(out.root, alpha, A.root, B.root, ctl)
    return out
