"""Matérn covariance family and the modified Bessel function K_nu."""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import kv as _kv

from .geometry import PointSet

try:
    from . import _fastkernel
except ImportError:  # pragma: no cover - numba missing
    _fastkernel = None

_CLOSED_FORMS = (0.5, 1.5, 2.5)

__all__ = [
    "MaternParams",
    "KernelEvaluator",
    "bessel_k",
    "matern_cov",
    "kernel_entry",
    "dense_covariance",
    "DENSE_GUARD",
]

DEFAULT_NUGGET = 1e-4
DENSE_GUARD = 20_000

_EPS = 1e-16
_EULER = 0.5772156649015329
# Taylor coefficients of 1/Gamma(z) around z = 0 (orders 4 and 6)
_RG4 = -0.04200263503409524
_RG6 = -0.04219773455554434


@dataclass(frozen=True)
class MaternParams:
    """Variance ``sigma2``, range ``ell``, smoothness ``nu`` and nugget."""

    sigma2: float = 1.0
    ell: float = 1.0
    nu: float = 0.5
    nugget: float = DEFAULT_NUGGET

    def __post_init__(self):
        vals = (self.sigma2, self.ell, self.nu, self.nugget)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite Matérn parameters: {self}")
        if self.sigma2 <= 0 or self.ell <= 0 or self.nu <= 0:
            raise ValueError(f"sigma2, ell and nu must be positive: {self}")
        if self.nugget < 0:
            raise ValueError(f"nugget must be nonnegative: {self}")

    def replace(self, **kw) -> "MaternParams":
        d = dict(sigma2=self.sigma2, ell=self.ell, nu=self.nu, nugget=self.nugget)
        d.update(kw)
        return MaternParams(**d)


def _gamma_pair(mu: float):
    """Return (gam1, gam2, 1/Gamma(1+mu), 1/Gamma(1-mu)) for |mu| <= 1/2."""
    gampl = 1.0 / math.gamma(1.0 + mu)
    gammi = 1.0 / math.gamma(1.0 - mu)
    gam2 = 0.5 * (gammi + gampl)
    if abs(mu) < 1e-4:
        m2 = mu * mu
        gam1 = -(_EULER + _RG4 * m2 + _RG6 * m2 * m2)
    else:
        gam1 = (gammi - gampl) / (2.0 * mu)
    return gam1, gam2, gampl, gammi


def _k_temme_series(mu: float, x: np.ndarray):
    """K_mu(x) and K_{mu+1}(x) by Temme's series, intended for x <= 2."""
    x2 = 0.5 * x
    pimu = math.pi * mu
    fact = 1.0 if abs(pimu) < _EPS else pimu / math.sin(pimu)
    d = -np.log(x2)
    e = mu * d
    small = np.abs(e) < _EPS
    fact2 = np.where(small, 1.0, np.sinh(e) / np.where(small, 1.0, e))
    gam1, gam2, gampl, gammi = _gamma_pair(mu)
    ff = fact * (gam1 * np.cosh(e) + gam2 * fact2 * d)
    total = ff.copy()
    ee = np.exp(e)
    p = 0.5 * ee / gampl
    q = 0.5 / (ee * gammi)
    c = np.ones_like(x)
    dd = x2 * x2
    total1 = p.copy()
    mu2 = mu * mu
    active = np.ones(x.shape, dtype=bool)
    for i in range(1, 200):
        ff = (i * ff + p + q) / (i * i - mu2)
        c = c * dd / i
        p = p / (i - mu)
        q = q / (i + mu)
        delta = c * ff
        total = np.where(active, total + delta, total)
        total1 = np.where(active, total1 + c * (p - i * ff), total1)
        active &= np.abs(delta) >= np.abs(total) * _EPS
        if not active.any():
            break
    return total, total1 * 2.0 / x


def _k_steed_cf2(mu: float, x: np.ndarray):
    """K_mu(x) and K_{mu+1}(x) by Steed's continued fraction, for x >= 2."""
    mu2 = mu * mu
    b = 2.0 * (1.0 + x)
    d = 1.0 / b
    h = d.copy()
    delh = d.copy()
    q1 = np.zeros_like(x)
    q2 = np.ones_like(x)
    a1 = 0.25 - mu2
    q = np.full_like(x, a1)
    c = a1
    a = -a1
    s = 1.0 + q * delh
    active = np.ones(x.shape, dtype=bool)
    for i in range(1, 10_000):
        a -= 2 * i
        c = -a * c / (i + 1.0)
        qnew = (q1 - b * q2) / a
        q1, q2 = q2, qnew
        q = q + c * qnew
        b = b + 2.0
        d = 1.0 / (b + a * d)
        delh = (b * d - 1.0) * delh
        h = np.where(active, h + delh, h)
        dels = q * delh
        s = np.where(active, s + dels, s)
        active &= np.abs(dels) >= np.abs(s) * _EPS
        if not active.any():
            break
    kmu = np.sqrt(math.pi / (2.0 * x)) * np.exp(-x) / s
    k1 = kmu * (mu + x + 0.5 - a1 * h) / x
    return kmu, k1


def bessel_k(nu, x):
    """Modified Bessel function of the second kind K_nu(x) for x > 0.

    Uses Temme's series for x < 2 and Steed's continued fraction otherwise,
    both at the reduced order |mu| <= 1/2, followed by upward recurrence in
    the order.  K is even in the order, so negative ``nu`` is accepted.
    """
    nu = abs(float(nu))
    xa = np.asarray(x, dtype=float)
    if np.any(~(xa > 0)):
        raise ValueError("bessel_k requires x > 0")
    scalar = xa.ndim == 0
    xa = np.atleast_1d(xa)
    nl = int(nu + 0.5)
    mu = nu - nl
    kmu = np.empty_like(xa)
    k1 = np.empty_like(xa)
    lo = xa < 2.0
    if lo.any():
        kmu[lo], k1[lo] = _k_temme_series(mu, xa[lo])
    if (~lo).any():
        kmu[~lo], k1[~lo] = _k_steed_cf2(mu, xa[~lo])
    for i in range(1, nl + 1):
        kmu, k1 = k1, (mu + i) * (2.0 / xa) * k1 + kmu
    return float(kmu[0]) if scalar else kmu


def _matern_unit(r: np.ndarray, nu: float, kv=None) -> np.ndarray:
    """Unit-variance Matérn correlation at scaled distance r = h / ell."""
    if nu == 0.5:
        return np.exp(-r)
    if nu == 1.5:
        return (1.0 + r) * np.exp(-r)
    if nu == 2.5:
        return (1.0 + r + r * r / 3.0) * np.exp(-r)
    kv = kv or _kv
    out = np.ones_like(r)
    pos = r > 0
    rp = r[pos]
    scale = 2.0 ** (1.0 - nu) / math.gamma(nu)
    with np.errstate(under="ignore", over="ignore", invalid="ignore"):
        v = scale * rp**nu * kv(nu, rp)
    # K_nu overflows at subnormal r, where the limit 1 is exact in double
    v[~np.isfinite(v)] = 1.0
    out[pos] = np.minimum(v, 1.0)
    return out


def matern_cov(h, p: MaternParams, kv=None):
    """Matérn covariance at distance(s) ``h``; the nugget is not included.

    C(h) = sigma2 / (2^(nu-1) Gamma(nu)) (h/ell)^nu K_nu(h/ell) with C(0) = sigma2.
    ``kv`` selects the K_nu routine (default: the compiled one from scipy).
    """
    ha = np.asarray(h, dtype=float)
    if np.any(ha < 0) or not np.all(np.isfinite(ha)):
        raise ValueError("distances must be finite and nonnegative")
    scalar = ha.ndim == 0
    vals = p.sigma2 * _matern_unit(np.atleast_1d(ha) / p.ell, p.nu, kv)
    return float(vals[0]) if scalar else vals.reshape(ha.shape)


@functools.lru_cache(maxsize=64)
def _order_table(nu: float) -> np.ndarray:
    return _fastkernel.build_table(nu)


class KernelEvaluator:
    """Coefficient function (i, j) -> C_ij in the internal (tree) ordering.

    By default blocks come from compiled loops: closed forms for nu in
    {1/2, 3/2, 5/2}, otherwise a per-order Chebyshev table of M_nu(r) e^r in
    log r (relative accuracy about 1e-13).  Passing ``kv`` (e.g.
    ``scipy.special.kv``) switches to vectorized evaluation through it.
    """

    def __init__(self, params: MaternParams, points, perm_i2e=None, kv=None):
        if not isinstance(points, PointSet):
            points = PointSet(points)
        n = points.n
        if perm_i2e is None:
            perm_i2e = np.arange(n)
        perm_i2e = np.asarray(perm_i2e)
        if perm_i2e.shape != (n,):
            raise ValueError("permutation length must equal the number of points")
        self.params = params
        self.points = points
        self.perm_i2e = perm_i2e
        self.kv = kv
        self._table = None
        if kv is None and _fastkernel is not None and params.nu not in _CLOSED_FORMS:
            self._table = _order_table(params.nu)
            self._table_top = _fastkernel.table_top(self._table)
        self._xyz = np.ascontiguousarray(points.points[perm_i2e])

    @property
    def n(self) -> int:
        return self._xyz.shape[0]

    def block(self, rows, cols) -> np.ndarray:
        """Dense submatrix for internal index arrays (or slices) ``rows``, ``cols``."""
        rows = np.arange(self.n)[rows] if isinstance(rows, slice) else np.asarray(rows)
        cols = np.arange(self.n)[cols] if isinstance(cols, slice) else np.asarray(cols)
        out = self._corr(self._xyz[rows], self._xyz[cols])
        if self.params.nugget:
            out[rows[:, None] == cols[None, :]] += self.params.nugget
        return out

    def block_range(self, r0: int, r1: int, c0: int, c1: int) -> np.ndarray:
        """Submatrix on contiguous internal ranges; the nugget is added only
        on a diagonal block (r0 == c0)."""
        out = self._corr(self._xyz[r0:r1], self._xyz[c0:c1])
        if self.params.nugget and r0 == c0:
            m = min(r1 - r0, c1 - c0)
            out[np.arange(m), np.arange(m)] += self.params.nugget
        return out

    def _corr(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        p = self.params
        if self.kv is None and _fastkernel is not None:
            if p.nu in _CLOSED_FORMS or self._table is None:
                return _fastkernel.matern_block(X, Y, p.ell, p.nu, p.sigma2)
            return _fastkernel.matern_block_table(X, Y, p.ell, p.nu, p.sigma2,
                                                  self._table, self._table_top)
        d2 = (X[:, None, 0] - Y[None, :, 0]) ** 2
        for a in range(1, X.shape[1]):
            d2 += (X[:, None, a] - Y[None, :, a]) ** 2
        r = np.sqrt(d2)
        r /= p.ell
        out = _matern_unit(r, p.nu, self.kv)
        out *= p.sigma2
        return out

    def __call__(self, i: int, j: int) -> float:
        return kernel_entry(self, i, j)


def kernel_entry(ev: KernelEvaluator, i: int, j: int) -> float:
    if not (0 <= i < ev.n and 0 <= j < ev.n):
        raise IndexError(f"index ({i}, {j}) out of range for n={ev.n}")
    return float(ev.block([i], [j])[0, 0])


def dense_covariance(ps, p: MaternParams, max_n: int = DENSE_GUARD) -> np.ndarray:
    """Full covariance matrix (nugget on the diagonal) in external order."""
    if not isinstance(ps, PointSet):
        ps = PointSet(ps)
    n = ps.n
    if n > max_n:
        raise ValueError(f"dense covariance guard exceeded: n={n} > {max_n}")
    pts = ps.points
    iu, ju = np.triu_indices(n, k=1)
    h = np.sqrt(np.sum((pts[iu] - pts[ju]) ** 2, axis=1))
    C = np.empty((n, n))
    vals = matern_cov(h, p)
    C[iu, ju] = vals
    C[ju, iu] = vals
    C[np.diag_indices(n)] = p.sigma2 + p.nugget
    return C
