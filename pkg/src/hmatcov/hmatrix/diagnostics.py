"""Error diagnostics: spectral norms by power iteration, approximation and
inversion errors, and the Kullback-Leibler divergence of two Gaussians."""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np
from scipy.linalg import cho_factor, eigh

from .core import HMatrix
from .factor import HFactor, log_determinant, solve_full, solve_triangular

__all__ = [
    "norm2_estimate",
    "spectral_error_metrics",
    "inversion_error",
    "kld",
    "kld_dense",
]

POWER_MIN_ITER = 50
POWER_MAX_ITER = 1000
POWER_RTOL = 1e-6
POWER_SEED = 12345


def norm2_estimate(op: Callable, n: int, op_t: Optional[Callable] = None,
                   min_iter: int = POWER_MIN_ITER, max_iter: int = POWER_MAX_ITER,
                   rtol: float = POWER_RTOL, seed: int = POWER_SEED) -> float:
    """Spectral norm of a linear operator by power iteration on M^T M.

    ``op`` applies M, ``op_t`` applies M^T (defaults to ``op``, i.e. M is
    taken to be symmetric).  Runs at least ``min_iter`` steps and stops once
    the estimate changes by less than ``rtol`` relatively.
    """
    op_t = op_t or op
    x = np.random.default_rng(seed).standard_normal(n)
    x /= np.linalg.norm(x)
    est = 0.0
    for it in range(max_iter):
        y = op(x)
        new = float(np.linalg.norm(y))
        x = op_t(y)
        xn = np.linalg.norm(x)
        if xn == 0.0 or new == 0.0:
            return new
        x /= xn
        if it + 1 >= min_iter and abs(new - est) <= rtol * new:
            return new
        est = new
    return est


def _internal_dense(H: HMatrix, C, external: bool) -> np.ndarray:
    C = np.asarray(C, dtype=float)
    if C.shape != H.shape:
        raise ValueError(f"dimension mismatch: {C.shape} vs {H.shape}")
    if external and H.ctree is not None:
        p = H.ctree.perm_i2e
        C = C[np.ix_(p, p)]
    return C


def _oracle_op(H: HMatrix, oracle, external: bool):
    if isinstance(oracle, HMatrix):
        if oracle.shape != H.shape:
            raise ValueError("dimension mismatch")
        return oracle.matvec, oracle.rmatvec, None
    C = _internal_dense(H, oracle, external)
    return (lambda x: C @ x), (lambda x: C.T @ x), C


def inversion_error(H: HMatrix, F: HFactor) -> float:
    """||I - (L D L^T)^{-1} H||_2 by power iteration."""
    return norm2_estimate(lambda x: x - solve_full(F, H.matvec(x)), H.n,
                          lambda x: x - H.rmatvec(solve_full(F, x)))


def spectral_error_metrics(H: HMatrix, oracle, F: Optional[HFactor] = None,
                           external: bool = True, need_inverse: bool = False) -> dict:
    """Approximation and inversion errors of ``H`` against ``oracle``.

    ``oracle`` is a dense matrix (external order unless ``external=False``)
    or an HMatrix on the same cluster tree.  Keys: ``norm2`` (||C - H||_2),
    ``rel_norm2``, ``fro`` (dense oracle only), and with a factor ``inv_rel``
    (||C H^{-1} - I||_2) and ``inv_err`` (||I - (L L^T)^{-1} H||_2).
    """
    if need_inverse and F is None:
        raise ValueError("inverse metrics require a factor")
    cmv, cmv_t, C = _oracle_op(H, oracle, external)
    n = H.n
    out = {}
    out["norm2"] = norm2_estimate(lambda x: cmv(x) - H.matvec(x), n,
                                  lambda x: cmv_t(x) - H.rmatvec(x))
    cnorm = norm2_estimate(cmv, n, cmv_t)
    out["oracle_norm2"] = cnorm
    out["rel_norm2"] = out["norm2"] / cnorm if cnorm else float("nan")
    if C is not None:
        acc = 0.0
        for leaf in H.leaves():
            blk = C[leaf.r0:leaf.r1, leaf.c0:leaf.c1]
            approx = leaf.dense if leaf.dense is not None else leaf.lr.to_dense()
            acc += float(np.sum((blk - approx) ** 2))
        out["fro"] = float(np.sqrt(acc))
        out["rel_fro"] = out["fro"] / float(np.linalg.norm(C))
    if F is not None:
        out["inv_rel"] = norm2_estimate(lambda x: cmv(solve_full(F, x)) - x, n,
                                        lambda x: solve_full(F, cmv_t(x)) - x)
        out["inv_err"] = inversion_error(H, F)
    return out


def _whitened(F: HFactor, C: np.ndarray) -> np.ndarray:
    """W = D^{-1/2} L^{-1} C L^{-T} D^{-1/2} (Cholesky: L^{-1} C L^{-T})."""
    Y = solve_triangular(F, C, "lower")
    W = solve_triangular(F, np.ascontiguousarray(Y.T), "lower")
    if F.form == "ldl":
        s = 1.0 / np.sqrt(F.diag)
        W = W * s[:, None] * s[None, :]
    return 0.5 * (W + W.T)


def _kl_terms(lam: np.ndarray) -> float:
    """sum(lam - 1 - log lam), accurate when lam is close to 1."""
    if np.any(lam <= 0):
        raise ValueError("nonpositive determinant: C^-1 C_approx has a nonpositive eigenvalue")
    d = lam - 1.0
    small = np.abs(d) < 1e-3
    ds = d[small]
    # d - log1p(d) by its series where cancellation would dominate
    series = ds * ds * (0.5 - ds * (1.0 / 3.0 - ds * (0.25 - ds * 0.2)))
    return float(np.sum(series) + np.sum(d[~small] - np.log1p(d[~small])))


def kld_dense(C, F: HFactor, H: Optional[HMatrix] = None, external: bool = True) -> float:
    """KL divergence of N(0, C) from N(0, C_approx) with C dense.

    C_approx is represented by its factor ``F``.  The divergence equals
    0.5 * sum(lam - 1 - log lam) over the eigenvalues of the whitened
    oracle W, whose trace is sum_i e_i^T C_approx^{-1} C e_i; evaluating it
    through the eigenvalues keeps it nonnegative when C_approx is close to C.
    """
    C = np.asarray(C, dtype=float)
    n = C.shape[0]
    if C.shape != (F.n, F.n):
        raise ValueError(f"dimension mismatch: {C.shape} vs n={F.n}")
    if external and H is not None and H.ctree is not None:
        p = H.ctree.perm_i2e
        C = C[np.ix_(p, p)]
    elif external and F.L.ctree is not None:
        p = F.L.ctree.perm_i2e
        C = C[np.ix_(p, p)]
    lam = eigh(_whitened(F, C), eigvals_only=True)
    return 0.5 * _kl_terms(lam)


def kld(C, F: HFactor, H: Optional[HMatrix] = None, C_factor: Optional[HFactor] = None,
        external: bool = True, probes: int = 100, seed: int = POWER_SEED,
        dense_limit: int = 2000) -> float:
    """KL divergence 0.5 (tr(C~^{-1} C) - n - log(det C / det C~)).

    Dense ``C`` with n <= ``dense_limit`` uses the exact whitened form; an
    HMatrix ``C`` (with its own factor ``C_factor`` for the determinant) or a
    larger dense ``C`` uses a Rademacher trace estimate with ``probes``
    vectors.
    """
    n = F.n
    if not isinstance(C, HMatrix) and n <= dense_limit:
        return kld_dense(C, F, H, external)
    if isinstance(C, HMatrix):
        if C_factor is None:
            raise ValueError("an HMatrix oracle needs its factor for the determinant")
        cmv = C.matvec
        logdet_c = log_determinant(C_factor)
    else:
        Cd = np.asarray(C, dtype=float)
        ref = H if H is not None else F.L
        if external and ref.ctree is not None:
            p = ref.ctree.perm_i2e
            Cd = Cd[np.ix_(p, p)]
        cmv = lambda x: Cd @ x
        c, _ = cho_factor(Cd, lower=True)
        logdet_c = 2.0 * float(np.sum(np.log(np.diag(c))))
    rng = np.random.default_rng(seed)
    Z = rng.choice([-1.0, 1.0], size=(n, probes))
    tr = float(np.sum(Z * solve_full(F, cmv(Z)))) / probes
    logdet_ratio = logdet_c - log_determinant(F)
    return 0.5 * (tr - n - logdet_ratio)
