"""Exact and hierarchical Gaussian log-likelihood of a Matérn model."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import lapack, solve_triangular

from .geometry import (BlockClusterTree, PointSet, build_block_cluster_tree,
                       build_cluster_tree)
from .hmatrix import (HFactor, HMatrix, NotPositiveDefiniteError, build_hmatrix,
                      factorize, log_determinant, solve_full, symmetrize, whiten)
from .kernel import KernelEvaluator, MaternParams, dense_covariance
from .lowrank import TruncationControl

__all__ = [
    "Dataset",
    "LoglikResult",
    "HLikelihood",
    "CGNotConvergedError",
    "loglik_dense",
    "loglik_h",
    "quadform_cg",
    "assemble_loglik",
]

_LOG2PI = math.log(2.0 * math.pi)
# relative gap between the two quadratic-form routes that is reported
QUADFORM_FLAG = 1e-3

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Dataset:
    """Observation locations and values, both in external (file) order."""

    points: PointSet
    Z: np.ndarray

    def __post_init__(self):
        pts = self.points if isinstance(self.points, PointSet) else PointSet(self.points)
        object.__setattr__(self, "points", pts)
        Z = np.array(self.Z, dtype=float).reshape(-1)
        if Z.shape[0] != pts.n:
            raise ValueError(f"|Z| = {Z.shape[0]} does not match n = {pts.n}")
        if not np.all(np.isfinite(Z)):
            raise ValueError("observations must be finite")
        Z.setflags(write=False)
        object.__setattr__(self, "Z", Z)

    @property
    def n(self) -> int:
        return self.points.n

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(PointSet(self.points.points[idx]), self.Z[idx])


@dataclass
class LoglikResult:
    loglik: float
    logdet: float
    quadform: float
    n: int
    min_pivot: float = float("nan")
    max_rank: int = 0
    wall_time: float = 0.0
    extra: dict = field(default_factory=dict)

    def identity_gap(self) -> float:
        """Difference between loglik and its assembly from the components."""
        return self.loglik - assemble_loglik(self.n, self.logdet, self.quadform)


def assemble_loglik(n: int, logdet: float, quadform: float) -> float:
    return -0.5 * n * _LOG2PI - 0.5 * logdet - 0.5 * quadform


def loglik_dense(ds: Dataset, p: MaternParams, max_n: Optional[int] = None) -> LoglikResult:
    """Exact log-likelihood through a dense Cholesky factorization."""
    t0 = time.perf_counter()
    kw = {} if max_n is None else {"max_n": max_n}
    C = dense_covariance(ds.points, p, **kw)
    L, info = lapack.dpotrf(C, lower=1, clean=1, overwrite_a=1)
    if info > 0:
        raise NotPositiveDefiniteError(info - 1)
    d = np.diag(L)
    logdet = 2.0 * float(np.sum(np.log(d)))
    v = solve_triangular(L, ds.Z, lower=True, check_finite=False)
    quad = float(v @ v)
    return LoglikResult(assemble_loglik(ds.n, logdet, quad), logdet, quad, ds.n,
                        min_pivot=float(d.min() ** 2), wall_time=time.perf_counter() - t0)


class HLikelihood:
    """Reusable H-likelihood evaluator for one dataset.

    The cluster tree and block partition depend only on the locations, so
    they are built once and shared by every parameter evaluation.
    """

    def __init__(self, ds: Dataset, n_min: int = 32, eta: float = 2.0,
                 form: str = "ldl", kv=None):
        self.ds = ds
        self.ctree = build_cluster_tree(ds.points, n_min)
        self.bct: BlockClusterTree = build_block_cluster_tree(self.ctree, eta)
        self.form = form
        self.kv = kv
        self.Z_int = ds.Z[self.ctree.perm_i2e]

    def assemble(self, p: MaternParams, ctl: TruncationControl) -> HMatrix:
        ev = KernelEvaluator(p, self.ctree.points, self.ctree.perm_i2e, kv=self.kv)
        return symmetrize(build_hmatrix(self.bct, ev, ctl, mirror=True), ctl)

    def factor(self, p: MaternParams, ctl: TruncationControl):
        H = self.assemble(p, ctl)
        try:
            F = factorize(H, ctl, self.form)
        except NotPositiveDefiniteError as err:
            raise NotPositiveDefiniteError(err.pivot, f"parameters {p}") from err
        return H, F

    def evaluate(self, p: MaternParams, ctl: TruncationControl,
                 cg_check: bool = False) -> LoglikResult:
        """Log-likelihood at ``p``.

        With ``cg_check`` the quadratic form is also computed by
        preconditioned CG; ``extra`` then holds ``quadform_cg`` and
        ``quadform_gap`` and a warning is logged when the two routes differ
        by more than ``QUADFORM_FLAG`` relatively.
        """
        t0 = time.perf_counter()
        H, F = self.factor(p, ctl)
        logdet = log_determinant(F)
        v = whiten(F, self.Z_int)
        quad = float(v @ v)
        extra = {"H": H, "F": F}
        if cg_check:
            qcg = quadform_cg(H, F, self.Z_int)
            gap = abs(qcg - quad) / max(abs(quad), np.finfo(float).tiny)
            extra.update(quadform_cg=qcg, quadform_gap=gap)
            if gap > QUADFORM_FLAG:
                log.warning("quadratic forms disagree at %s: triangular %.10g, CG %.10g",
                            p, quad, qcg)
        return LoglikResult(assemble_loglik(self.ds.n, logdet, quad), logdet, quad,
                            self.ds.n, min_pivot=F.min_pivot, max_rank=F.L.max_rank(),
                            wall_time=time.perf_counter() - t0, extra=extra)


def loglik_h(ds: Dataset, p: MaternParams, ctl: TruncationControl,
             n_min: int = 32, eta: float = 2.0, form: str = "ldl",
             evaluator: Optional[HLikelihood] = None) -> LoglikResult:
    """Log-likelihood with C replaced by its H-matrix approximation.

    Z is permuted into the cluster-tree order, C~ is built with the nugget,
    symmetrized and factorized; log det comes from the factor diagonal and
    the quadratic form from the whitened vector v with v^T v = Z^T C~^{-1} Z.
    """
    ev = evaluator or HLikelihood(ds, n_min=n_min, eta=eta, form=form)
    return ev.evaluate(p, ctl)


class CGNotConvergedError(RuntimeError):
    def __init__(self, residual: float, iterations: int):
        super().__init__(f"CG did not converge in {iterations} iterations "
                         f"(relative residual {residual:.3e})")
        self.residual = residual
        self.iterations = iterations


def quadform_cg(H: HMatrix, F: HFactor, Z, max_iter: int = 150, tol: float = 1e-6,
                return_info: bool = False):
    """Z^T u with H u = Z solved by CG preconditioned with the factor.

    ``Z`` must be in internal (cluster-tree) order.  Convergence is declared
    when ||Z - H u|| <= tol * ||Z||.
    """
    b = np.asarray(Z, dtype=float)
    if b.shape[0] != H.n:
        raise ValueError(f"length mismatch: expected {H.n}, got {b.shape[0]}")
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return (0.0, 0) if return_info else 0.0
    x = np.zeros_like(b)
    r = b.copy()
    z = solve_full(F, r)
    d = z.copy()
    rz = float(r @ z)
    res = 1.0
    for it in range(1, max_iter + 1):
        q = H.matvec(d)
        alpha = rz / float(d @ q)
        x += alpha * d
        r -= alpha * q
        res = float(np.linalg.norm(r)) / bnorm
        if res <= tol:
            val = float(b @ x)
            return (val, it) if return_info else val
        z = solve_full(F, r)
        rz_new = float(r @ z)
        d = z + (rz_new / rz) * d
        rz = rz_new
    raise CGNotConvergedError(res, max_iter)
