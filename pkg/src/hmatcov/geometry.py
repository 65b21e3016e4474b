"""Cluster trees, admissibility and block cluster trees over scattered points.

Indices live in two orders. The *external* order is the order of the input
file; the *internal* order is the one produced by the cluster tree, in which
every cluster occupies a contiguous range ``[start, stop)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence

import numpy as np

__all__ = [
    "PointSet",
    "BoundingBox",
    "Cluster",
    "ClusterTree",
    "Block",
    "BlockClusterTree",
    "build_cluster_tree",
    "is_admissible",
    "build_block_cluster_tree",
    "apply_permutation",
]

DEFAULT_NMIN = 32
DEFAULT_ETA = 2.0


class PointSet:
    """Immutable set of ``n`` locations in R^d (d = 2 or 3)."""

    def __init__(self, points):
        pts = np.array(points, dtype=float, copy=True)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1) if pts.size == 0 else pts.reshape(1, -1)
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValueError("empty input")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        pts.setflags(write=False)
        self.points = pts

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.n

    def __repr__(self) -> str:
        return f"PointSet(n={self.n}, dim={self.dim})"


@dataclass(frozen=True)
class BoundingBox:
    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def of(cls, pts: np.ndarray) -> "BoundingBox":
        return cls(pts.min(axis=0), pts.max(axis=0))

    @property
    def diameter(self) -> float:
        return float(np.sqrt(np.sum((self.hi - self.lo) ** 2)))

    def distance(self, other: "BoundingBox") -> float:
        gap = np.maximum(0.0, np.maximum(other.lo - self.hi, self.lo - other.hi))
        return float(np.sqrt(np.sum(gap**2)))


@dataclass(eq=False)
class Cluster:
    """A node of the cluster tree: the internal index range ``[start, stop)``."""

    start: int
    stop: int
    bbox: BoundingBox
    level: int = 0
    children: List["Cluster"] = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.stop - self.start

    @property
    def is_leaf(self) -> bool:
        return not self.children

    @property
    def indices(self) -> range:
        return range(self.start, self.stop)

    def __repr__(self) -> str:
        return f"Cluster([{self.start}, {self.stop}), level={self.level})"


@dataclass(eq=False)
class ClusterTree:
    root: Cluster
    perm_i2e: np.ndarray
    perm_e2i: np.ndarray
    n_min: int
    points: PointSet

    @property
    def n(self) -> int:
        return self.root.size

    def nodes(self) -> Iterator[Cluster]:
        stack = [self.root]
        while stack:
            c = stack.pop()
            yield c
            stack.extend(reversed(c.children))

    def leaves(self) -> List[Cluster]:
        return [c for c in self.nodes() if c.is_leaf]

    @property
    def depth(self) -> int:
        return max(c.level for c in self.nodes())

    def internal_points(self) -> np.ndarray:
        """Coordinates in internal order."""
        return self.points.points[self.perm_i2e]


def build_cluster_tree(ps: PointSet, n_min: int = DEFAULT_NMIN) -> ClusterTree:
    """Binary space partitioning with an adaptive split axis.

    Each cluster is split along the axis of largest bounding-box extent at
    the median; the left son receives the extra point when the size is odd.
    Splitting stops once a cluster holds at most ``n_min`` points.
    """
    if n_min < 1:
        raise ValueError("n_min must be >= 1")
    if not isinstance(ps, PointSet):
        ps = PointSet(ps)
    pts = ps.points
    perm = np.arange(ps.n)

    def split(start: int, stop: int, level: int) -> Cluster:
        idx = perm[start:stop]
        box = BoundingBox.of(pts[idx])
        node = Cluster(start, stop, box, level)
        size = stop - start
        if size <= n_min:
            return node
        # argmax picks the lowest axis on ties
        axis = int(np.argmax(box.hi - box.lo))
        order = np.argsort(pts[idx, axis], kind="stable")
        perm[start:stop] = idx[order]
        mid = start + (size + 1) // 2
        node.children = [split(start, mid, level + 1), split(mid, stop, level + 1)]
        return node

    root = split(0, ps.n, 0)
    perm_i2e = perm.copy()
    perm_e2i = np.empty_like(perm_i2e)
    perm_e2i[perm_i2e] = np.arange(ps.n)
    perm_i2e.setflags(write=False)
    perm_e2i.setflags(write=False)
    return ClusterTree(root, perm_i2e, perm_e2i, n_min, ps)


def is_admissible(tau: Cluster, sigma: Cluster, eta: float = DEFAULT_ETA) -> bool:
    """Min-diameter criterion ``min(diam) <= eta * dist`` on bounding boxes.

    Touching or overlapping boxes (``dist == 0``) are never admissible, even
    if one of them is a single point.
    """
    dist = tau.bbox.distance(sigma.bbox)
    if dist <= 0.0:
        return False
    return min(tau.bbox.diameter, sigma.bbox.diameter) <= eta * dist


@dataclass(eq=False)
class Block:
    """Node ``(row, col)`` of the block cluster tree.

    ``children`` is a grid indexed ``[i][j]`` over the row sons and column
    sons (a side without sons contributes itself as the single entry).
    """

    row: Cluster
    col: Cluster
    admissible: bool = False
    children: Optional[List[List["Block"]]] = None

    @property
    def is_leaf(self) -> bool:
        return self.children is None

    @property
    def shape(self):
        return (self.row.size, self.col.size)

    def leaves(self) -> Iterator["Block"]:
        stack = [self]
        while stack:
            b = stack.pop()
            if b.children is None:
                yield b
            else:
                for line in b.children:
                    stack.extend(line)

    def __repr__(self) -> str:
        kind = "leaf" if self.is_leaf else "node"
        if self.is_leaf:
            kind = "admissible" if self.admissible else "dense"
        return (f"Block([{self.row.start},{self.row.stop}) x "
                f"[{self.col.start},{self.col.stop}), {kind})")


@dataclass(eq=False)
class BlockClusterTree:
    root: Block
    ctree: ClusterTree
    eta: float

    @property
    def n(self) -> int:
        return self.ctree.n

    def leaves(self) -> List[Block]:
        return list(self.root.leaves())

    def counts(self) -> dict:
        adm = dense = 0
        for b in self.root.leaves():
            if b.admissible:
                adm += 1
            else:
                dense += 1
        return {"admissible": adm, "dense": dense}


def _sons(c: Cluster) -> Sequence[Cluster]:
    return c.children if c.children else (c,)


def build_block_cluster_tree(ct: ClusterTree, eta: float = DEFAULT_ETA) -> BlockClusterTree:
    """Recursive partition of I x I starting at ``(root, root)``."""

    def build(tau: Cluster, sigma: Cluster) -> Block:
        if is_admissible(tau, sigma, eta):
            return Block(tau, sigma, admissible=True)
        if tau.is_leaf and sigma.is_leaf:
            return Block(tau, sigma)
        grid = [[build(t, s) for s in _sons(sigma)] for t in _sons(tau)]
        return Block(tau, sigma, children=grid)

    return BlockClusterTree(build(ct.root, ct.root), ct, eta)


def apply_permutation(v, ct: ClusterTree, direction: str = "e2i") -> np.ndarray:
    """Reorder ``v`` (first axis) between external and internal order.

    ``e2i`` maps a vector given in file order to tree order, ``i2e`` maps it
    back.  Works on 1D vectors and on 2D arrays row-wise.
    """
    v = np.asarray(v)
    if v.shape[0] != ct.n:
        raise ValueError(f"length mismatch: expected {ct.n}, got {v.shape[0]}")
    if direction == "e2i":
        return v[ct.perm_i2e]
    if direction == "i2e":
        return v[ct.perm_e2i]
    raise ValueError(f"unknown direction {direction!r}")
