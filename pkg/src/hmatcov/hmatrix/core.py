"""H-matrix container: assembly, products with vectors, symmetrization, storage."""

from __future__ import annotations

from typing import Iterator, List, Optional

import numpy as np

from ..geometry import Block, BlockClusterTree, ClusterTree
from ..kernel import KernelEvaluator
from ..lowrank import (LowRankBlock, TruncationControl, aca_approximate,
                       recompress_svd)

__all__ = [
    "HBlock",
    "HMatrix",
    "build_hmatrix",
    "symmetrize",
    "matvec",
    "identity_hmatrix",
    "storage_report",
]


class HBlock:
    """One node of an H-matrix over the internal index ranges
    ``[r0, r1) x [c0, c1)``.

    Exactly one of ``dense``, ``lr`` or ``children`` is set.  A child entry
    of ``None`` stands for a zero block (upper part of a triangular factor).
    """

    __slots__ = ("r0", "r1", "c0", "c1", "dense", "lr", "children")

    def __init__(self, r0, r1, c0, c1, dense=None, lr=None, children=None):
        self.r0, self.r1, self.c0, self.c1 = r0, r1, c0, c1
        self.dense = dense
        self.lr = lr
        self.children = children

    @property
    def shape(self):
        return (self.r1 - self.r0, self.c1 - self.c0)

    @property
    def kind(self) -> str:
        if self.children is not None:
            return "hier"
        return "dense" if self.dense is not None else "lowrank"

    @property
    def is_hier(self) -> bool:
        return self.children is not None

    def leaves(self) -> Iterator["HBlock"]:
        stack = [self]
        while stack:
            b = stack.pop()
            if b.children is None:
                yield b
            else:
                for line in b.children:
                    stack.extend(c for c in line if c is not None)

    def row_splits(self) -> List[tuple]:
        return [(line[0].r0, line[0].r1) for line in self.children]

    def col_splits(self) -> List[tuple]:
        return [(c.c0, c.c1) for c in self.children[0]]

    # -- products with dense arrays (global index ranges are relative to x) --

    def apply(self, x: np.ndarray, y: np.ndarray, alpha: float = 1.0) -> None:
        """y[r0:r1] += alpha * self @ x[c0:c1], with x, y indexed globally."""
        for leaf in self.leaves():
            xs = x[leaf.c0:leaf.c1]
            if leaf.dense is not None:
                y[leaf.r0:leaf.r1] += alpha * (leaf.dense @ xs)
            elif leaf.lr.rank:
                y[leaf.r0:leaf.r1] += alpha * (leaf.lr.A @ (leaf.lr.B.T @ xs))

    def apply_transpose(self, x: np.ndarray, y: np.ndarray, alpha: float = 1.0) -> None:
        """y[c0:c1] += alpha * self.T @ x[r0:r1]."""
        for leaf in self.leaves():
            xs = x[leaf.r0:leaf.r1]
            if leaf.dense is not None:
                y[leaf.c0:leaf.c1] += alpha * (leaf.dense.T @ xs)
            elif leaf.lr.rank:
                y[leaf.c0:leaf.c1] += alpha * (leaf.lr.B @ (leaf.lr.A.T @ xs))

    def matmat(self, X: np.ndarray) -> np.ndarray:
        """Local product: self @ X with X of shape (cols, m)."""
        out = np.zeros((self.shape[0],) + X.shape[1:])
        for leaf in self.leaves():
            xs = X[leaf.c0 - self.c0:leaf.c1 - self.c0]
            r = slice(leaf.r0 - self.r0, leaf.r1 - self.r0)
            if leaf.dense is not None:
                out[r] += leaf.dense @ xs
            elif leaf.lr.rank:
                out[r] += leaf.lr.A @ (leaf.lr.B.T @ xs)
        return out

    def rmatmat(self, X: np.ndarray) -> np.ndarray:
        """Local product: self.T @ X with X of shape (rows, m)."""
        out = np.zeros((self.shape[1],) + X.shape[1:])
        for leaf in self.leaves():
            xs = X[leaf.r0 - self.r0:leaf.r1 - self.r0]
            c = slice(leaf.c0 - self.c0, leaf.c1 - self.c0)
            if leaf.dense is not None:
                out[c] += leaf.dense.T @ xs
            elif leaf.lr.rank:
                out[c] += leaf.lr.B @ (leaf.lr.A.T @ xs)
        return out

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        for leaf in self.leaves():
            r = slice(leaf.r0 - self.r0, leaf.r1 - self.r0)
            c = slice(leaf.c0 - self.c0, leaf.c1 - self.c0)
            out[r, c] = leaf.dense if leaf.dense is not None else leaf.lr.to_dense()
        return out

    def transpose(self) -> "HBlock":
        """Transposed view (arrays are shared, not copied)."""
        if self.children is not None:
            rows = len(self.children)
            cols = len(self.children[0])
            grid = [[None if self.children[i][j] is None else self.children[i][j].transpose()
                     for i in range(rows)] for j in range(cols)]
            return HBlock(self.c0, self.c1, self.r0, self.r1, children=grid)
        if self.dense is not None:
            return HBlock(self.c0, self.c1, self.r0, self.r1, dense=self.dense.T)
        return HBlock(self.c0, self.c1, self.r0, self.r1, lr=self.lr.T)

    def copy(self) -> "HBlock":
        if self.children is not None:
            grid = [[None if c is None else c.copy() for c in line] for line in self.children]
            return HBlock(self.r0, self.r1, self.c0, self.c1, children=grid)
        if self.dense is not None:
            return HBlock(self.r0, self.r1, self.c0, self.c1, dense=self.dense.copy())
        return HBlock(self.r0, self.r1, self.c0, self.c1,
                      lr=LowRankBlock(self.lr.A.copy(), self.lr.B.copy()))

    def __repr__(self) -> str:
        return f"HBlock([{self.r0},{self.r1}) x [{self.c0},{self.c1}), {self.kind})"


class HMatrix:
    """An H-matrix over a block cluster tree, in internal index order."""

    def __init__(self, root: HBlock, bct: Optional[BlockClusterTree] = None,
                 symmetric: bool = False):
        self.root = root
        self.bct = bct
        self.symmetric = symmetric

    @property
    def n(self) -> int:
        return self.root.shape[0]

    @property
    def shape(self):
        return self.root.shape

    @property
    def ctree(self) -> Optional[ClusterTree]:
        return None if self.bct is None else self.bct.ctree

    def leaves(self) -> Iterator[HBlock]:
        return self.root.leaves()

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return matvec(self, x)

    def rmatvec(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.zeros((self.shape[1],) + x.shape[1:])
        self.root.apply_transpose(x, y)
        return y

    def to_dense(self) -> np.ndarray:
        return self.root.to_dense()

    def copy(self) -> "HMatrix":
        return HMatrix(self.root.copy(), self.bct, self.symmetric)

    def max_rank(self) -> int:
        return max((leaf.lr.rank for leaf in self.leaves() if leaf.lr is not None), default=0)

    def __repr__(self) -> str:
        return f"HMatrix(n={self.n}, max_rank={self.max_rank()})"


def matvec(H: HMatrix, x) -> np.ndarray:
    """y = H x (x may also be a 2D array of column vectors)."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] != H.shape[1]:
        raise ValueError(f"length mismatch: expected {H.shape[1]}, got {x.shape[0]}")
    y = np.zeros((H.shape[0],) + x.shape[1:])
    H.root.apply(x, y)
    return y


def build_hmatrix(bct: BlockClusterTree, ev: KernelEvaluator,
                  ctl: TruncationControl, mirror: bool = False) -> HMatrix:
    """Assemble dense leaves entrywise and admissible leaves by ACA.

    With ``mirror`` only the lower block triangle is assembled and every
    upper block is stored as the transpose of its mirror; this is exact for
    a symmetric kernel and yields an H-matrix that is already symmetric.
    """

    def build(b: Block) -> HBlock:
        r0, r1, c0, c1 = b.row.start, b.row.stop, b.col.start, b.col.stop
        if b.children is not None:
            if mirror and r0 == c0:
                s = len(b.children)
                grid = [[None] * s for _ in range(s)]
                for i in range(s):
                    for j in range(i + 1):
                        grid[i][j] = build(b.children[i][j])
                        if j < i:
                            grid[j][i] = grid[i][j].transpose()
            else:
                grid = [[build(c) for c in line] for line in b.children]
            return HBlock(r0, r1, c0, c1, children=grid)
        if not b.admissible:
            d = ev.block_range(r0, r1, c0, c1)
            if mirror and r0 == c0:
                d = 0.5 * (d + d.T)
            return HBlock(r0, r1, c0, c1, dense=d)

        def entries(rows, cols):
            return ev.block(np.asarray(rows) + r0, np.asarray(cols) + c0)

        return HBlock(r0, r1, c0, c1, lr=aca_approximate(entries, r1 - r0, c1 - c0, ctl))

    return HMatrix(build(bct.root), bct, symmetric=mirror)


def _sym_pair(a: HBlock, b: HBlock, ctl: TruncationControl) -> HBlock:
    """Return 0.5 * (a + b.T) for mirror blocks a = (tau, sigma), b = (sigma, tau)."""
    if a.children is not None:
        if b.children is None:
            raise ValueError("block structure is not symmetric")
        grid = [[_sym_pair(a.children[i][j], b.children[j][i], ctl)
                 for j in range(len(a.children[0]))] for i in range(len(a.children))]
        return HBlock(a.r0, a.r1, a.c0, a.c1, children=grid)
    if a.dense is not None:
        other = b.dense if b.dense is not None else b.to_dense()
        return HBlock(a.r0, a.r1, a.c0, a.c1, dense=0.5 * (a.dense + other.T))
    if b.lr is None:
        raise ValueError("block structure is not symmetric")
    A = np.hstack([0.5 * a.lr.A, 0.5 * b.lr.B])
    B = np.hstack([a.lr.B, b.lr.A])
    return HBlock(a.r0, a.r1, a.c0, a.c1, lr=recompress_svd(LowRankBlock(A, B), ctl))


def symmetrize(H: HMatrix, ctl: TruncationControl) -> HMatrix:
    """0.5 * (H + H^T), recompressing low-rank leaves under ``ctl``.

    Mirror leaves are computed once and stored as exact transposes of each
    other, so the result is symmetric to rounding.
    """
    root = H.root
    if H.symmetric:
        return HMatrix(root, H.bct, symmetric=True)

    def walk(a: HBlock, b: HBlock, diagonal: bool) -> HBlock:
        if diagonal and a.children is not None:
            s = len(a.children)
            grid = [[None] * s for _ in range(s)]
            for i in range(s):
                grid[i][i] = walk(a.children[i][i], a.children[i][i], True)
                for j in range(i):
                    low = _sym_pair(a.children[i][j], a.children[j][i], ctl)
                    grid[i][j] = low
                    grid[j][i] = low.transpose()
            return HBlock(a.r0, a.r1, a.c0, a.c1, children=grid)
        return _sym_pair(a, b, ctl)

    new_root = walk(root, root, True)
    return HMatrix(new_root, H.bct, symmetric=True)


def identity_hmatrix(H: HMatrix) -> HMatrix:
    """Identity on the block structure of ``H``: dense identity on diagonal
    leaves, rank-zero or zero-dense blocks elsewhere."""

    def build(b: HBlock) -> HBlock:
        if b.children is not None:
            grid = [[None if c is None else build(c) for c in line] for line in b.children]
            return HBlock(b.r0, b.r1, b.c0, b.c1, children=grid)
        p, q = b.shape
        if b.dense is not None:
            d = np.zeros((p, q))
            if b.r0 == b.c0:
                d[np.arange(min(p, q)), np.arange(min(p, q))] = 1.0
            return HBlock(b.r0, b.r1, b.c0, b.c1, dense=d)
        return HBlock(b.r0, b.r1, b.c0, b.c1, lr=LowRankBlock.zeros(p, q))

    return HMatrix(build(H.root), H.bct, symmetric=True)


def storage_report(H: HMatrix) -> dict:
    """Exact byte count of the stored dense leaves and low-rank factors."""
    dense_bytes = lr_bytes = 0
    n_dense = n_lr = 0
    max_rank = 0
    for leaf in H.leaves():
        if leaf.dense is not None:
            dense_bytes += leaf.dense.nbytes
            n_dense += 1
        else:
            lr_bytes += leaf.lr.nbytes
            n_lr += 1
            max_rank = max(max_rank, leaf.lr.rank)
    total = dense_bytes + lr_bytes
    return {
        "bytes": total,
        "bytes_per_dof": total / H.n,
        "kb_per_dof": total / H.n / 1024.0,
        "dense_bytes": dense_bytes,
        "lowrank_bytes": lr_bytes,
        "dense_leaves": n_dense,
        "lowrank_leaves": n_lr,
        "max_rank": max_rank,
    }
