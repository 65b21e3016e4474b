"""Compiled Matérn block evaluation (scalar Temme / Steed K_nu in numba).

Same algorithm as ``kernel.bessel_k`` written element by element, so whole
kernel blocks are produced without temporaries.  Importing this module
requires numba; ``kernel`` falls back to scipy when it is missing.
"""

from __future__ import annotations

import math

import numba
import numpy as np

_EPS = 1e-16
_EULER = 0.5772156649015329
_RG4 = -0.04200263503409524
_RG6 = -0.04219773455554434


@numba.njit(cache=True)
def _order_consts(mu):
    gampl = 1.0 / math.gamma(1.0 + mu)
    gammi = 1.0 / math.gamma(1.0 - mu)
    gam2 = 0.5 * (gammi + gampl)
    if abs(mu) < 1e-4:
        m2 = mu * mu
        gam1 = -(_EULER + _RG4 * m2 + _RG6 * m2 * m2)
    else:
        gam1 = (gammi - gampl) / (2.0 * mu)
    pimu = math.pi * mu
    fact = 1.0 if abs(pimu) < _EPS else pimu / math.sin(pimu)
    return gam1, gam2, gampl, gammi, fact


@numba.njit(cache=True)
def _k_pair(mu, x, gam1, gam2, gampl, gammi, fact):
    """K_mu(x), K_{mu+1}(x) for |mu| <= 1/2 and x > 0."""
    if x < 2.0:
        x2 = 0.5 * x
        d = -math.log(x2)
        e = mu * d
        fact2 = 1.0 if abs(e) < _EPS else math.sinh(e) / e
        ff = fact * (gam1 * math.cosh(e) + gam2 * fact2 * d)
        total = ff
        ee = math.exp(e)
        p = 0.5 * ee / gampl
        q = 0.5 / (ee * gammi)
        c = 1.0
        dd = x2 * x2
        total1 = p
        mu2 = mu * mu
        for i in range(1, 200):
            ff = (i * ff + p + q) / (i * i - mu2)
            c = c * dd / i
            p = p / (i - mu)
            q = q / (i + mu)
            delta = c * ff
            total += delta
            total1 += c * (p - i * ff)
            if abs(delta) < abs(total) * _EPS:
                break
        return total, total1 * 2.0 / x
    mu2 = mu * mu
    b = 2.0 * (1.0 + x)
    d = 1.0 / b
    h = d
    delh = d
    q1 = 0.0
    q2 = 1.0
    a1 = 0.25 - mu2
    q = a1
    c = a1
    a = -a1
    s = 1.0 + q * delh
    for i in range(1, 10000):
        a -= 2 * i
        c = -a * c / (i + 1.0)
        qnew = (q1 - b * q2) / a
        q1 = q2
        q2 = qnew
        q += c * qnew
        b += 2.0
        d = 1.0 / (b + a * d)
        delh = (b * d - 1.0) * delh
        h += delh
        dels = q * delh
        s += dels
        if abs(dels) < abs(s) * _EPS:
            break
    kmu = math.sqrt(math.pi / (2.0 * x)) * math.exp(-x) / s
    return kmu, kmu * (mu + x + 0.5 - a1 * h) / x


@numba.njit(cache=True)
def matern_block(X, Y, ell, nu, sigma2):
    """sigma2 * M_nu(|x_i - y_j| / ell) for all pairs of rows of X and Y."""
    m = X.shape[0]
    n = Y.shape[0]
    dim = X.shape[1]
    out = np.empty((m, n))
    kind = 0
    if nu == 0.5:
        kind = 1
    elif nu == 1.5:
        kind = 2
    elif nu == 2.5:
        kind = 3
    nl = int(nu + 0.5)
    mu = nu - nl
    gam1, gam2, gampl, gammi, fact = _order_consts(mu)
    scale = sigma2 * 2.0 ** (1.0 - nu) / math.gamma(nu)
    inv = 1.0 / ell
    for i in range(m):
        for j in range(n):
            d2 = 0.0
            for a in range(dim):
                t = X[i, a] - Y[j, a]
                d2 += t * t
            r = math.sqrt(d2) * inv
            if kind == 1:
                out[i, j] = sigma2 * math.exp(-r)
            elif kind == 2:
                out[i, j] = sigma2 * (1.0 + r) * math.exp(-r)
            elif kind == 3:
                out[i, j] = sigma2 * (1.0 + r + r * r / 3.0) * math.exp(-r)
            elif r == 0.0:
                out[i, j] = sigma2
            elif r > 700.0:
                out[i, j] = 0.0
            else:
                k0, k1 = _k_pair(mu, r, gam1, gam2, gampl, gammi, fact)
                for k in range(1, nl + 1):
                    k2 = (mu + k) * (2.0 / r) * k1 + k0
                    k0 = k1
                    k1 = k2
                out[i, j] = scale * r ** nu * k0
    return out


# -- tabulated path -----------------------------------------------------------
# For a fixed order the function g(r) = M_nu(r) e^r is smooth in s = log r, so
# it is tabulated once per order as piecewise Chebyshev series on equal
# intervals of s.  Arguments below the table fall back to the series above.

TABLE_R_LO = 1e-6
TABLE_R_HI = 700.0
_UNDERFLOW = 745.0
TABLE_WIDTH = 0.25
TABLE_DEGREE = 13


@numba.njit(cache=True)
def matern_unit_direct(r, nu):
    if r == 0.0:
        return 1.0
    if r > _UNDERFLOW:
        return 0.0
    nl = int(nu + 0.5)
    mu = nu - nl
    gam1, gam2, gampl, gammi, fact = _order_consts(mu)
    k0, k1 = _k_pair(mu, r, gam1, gam2, gampl, gammi, fact)
    for k in range(1, nl + 1):
        k2 = (mu + k) * (2.0 / r) * k1 + k0
        k0 = k1
        k1 = k2
    return 2.0 ** (1.0 - nu) / math.gamma(nu) * r ** nu * k0


@numba.njit(cache=True)
def _unit_direct_array(r, nu):
    out = np.empty_like(r)
    for i in range(r.shape[0]):
        out[i] = matern_unit_direct(r[i], nu)
    return out


def build_table(nu: float) -> np.ndarray:
    """Chebyshev coefficients (segments x (degree+1)) of g, covering
    [R_LO, table_top()]."""
    s0 = math.log(TABLE_R_LO)
    nseg = int(math.floor((math.log(TABLE_R_HI) - s0) / TABLE_WIDTH))
    m = TABLE_DEGREE + 1
    t = np.cos(np.pi * (np.arange(m) + 0.5) / m)
    mids = s0 + TABLE_WIDTH * (np.arange(nseg) + 0.5)
    s = mids[:, None] + 0.5 * TABLE_WIDTH * t[None, :]
    r = np.exp(s).ravel()
    g = (_unit_direct_array(r, float(nu)) * np.exp(r)).reshape(nseg, m)
    # discrete Chebyshev transform at the first-kind nodes
    T = np.cos(np.outer(np.arange(m), np.pi * (np.arange(m) + 0.5) / m))
    coef = (2.0 / m) * g @ T.T
    coef[:, 0] *= 0.5
    return np.ascontiguousarray(coef)


def table_top(coef: np.ndarray) -> float:
    return math.exp(math.log(TABLE_R_LO) + TABLE_WIDTH * coef.shape[0])


@numba.njit(cache=True)
def matern_block_table(X, Y, ell, nu, sigma2, coef, r_top):
    m = X.shape[0]
    n = Y.shape[0]
    dim = X.shape[1]
    out = np.empty((m, n))
    s0 = math.log(TABLE_R_LO)
    invw = 1.0 / TABLE_WIDTH
    nseg = coef.shape[0]
    deg = coef.shape[1] - 1
    inv = 1.0 / ell
    for i in range(m):
        for j in range(n):
            d2 = 0.0
            for a in range(dim):
                t = X[i, a] - Y[j, a]
                d2 += t * t
            r = math.sqrt(d2) * inv
            if r < TABLE_R_LO or r >= r_top:
                out[i, j] = sigma2 * matern_unit_direct(r, nu)
                continue
            u = (math.log(r) - s0) * invw
            k = int(u)
            if k >= nseg:
                k = nseg - 1
            x = 2.0 * (u - k) - 1.0
            x2 = 2.0 * x
            b1 = 0.0
            b2 = 0.0
            for c in range(deg, 0, -1):
                b0 = coef[k, c] + x2 * b1 - b2
                b2 = b1
                b1 = b0
            out[i, j] = sigma2 * (coef[k, 0] + x * b1 - b2) * math.exp(-r)
    return out
