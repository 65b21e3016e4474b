"""Parameter estimation: Nelder-Mead and Brent minimizers, field simulation,
subsampling, replicate studies and likelihood profiles."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .geometry import PointSet, apply_permutation
from .hmatrix import NotPositiveDefiniteError, color
from .kernel import DEFAULT_NUGGET, MaternParams
from .likelihood import Dataset, HLikelihood, loglik_dense
from .lowrank import TruncationControl

__all__ = [
    "FitConfig",
    "FitResult",
    "TraceRow",
    "ReplicateRecord",
    "InfeasibleStartError",
    "nelder_mead_minimize",
    "brent_minimize_1d",
    "fit_parameters",
    "make_rng",
    "simulate_field",
    "simulate_fields",
    "subsample",
    "replicate_study",
    "profile_likelihood",
    "ProfileRow",
]

# vertex order used by the optimizer: (nu, ell, sigma2)
PARAM_ORDER = ("nu", "ell", "sigma2")


def make_rng(*key: int) -> np.random.Generator:
    """PCG64 generator seeded by a SeedSequence over the integer ``key``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(k) for k in key])))


@dataclass(frozen=True)
class FitConfig:
    """Optimizer and likelihood settings.  ``theta0`` is (nu, ell, sigma2)."""

    theta0: Tuple[float, float, float] = (0.5, 1.0, 1.0)
    steps: Tuple[float, float, float] = (0.02, 0.04, 0.01)
    tol: float = 1e-5
    max_iter: int = 200
    ctl: TruncationControl = field(default_factory=lambda: TruncationControl.adaptive(1e-5))
    nugget: float = DEFAULT_NUGGET
    lower: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    upper: Tuple[float, float, float] = (math.inf, math.inf, math.inf)
    n_min: int = 32
    eta: float = 2.0
    form: str = "ldl"
    objective: str = "h"

    def __post_init__(self):
        if len(self.theta0) != 3 or len(self.steps) != 3:
            raise ValueError("theta0 and steps must have three entries (nu, ell, sigma2)")
        if any(s <= 0 for s in self.steps):
            raise ValueError("simplex steps must be positive")
        if self.tol <= 0:
            raise ValueError("tolerance must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.objective not in ("h", "dense"):
            raise ValueError(f"unknown objective {self.objective!r}")

    def feasible(self, x) -> bool:
        return all(lo < v < hi for v, lo, hi in zip(x, self.lower, self.upper))


@dataclass(frozen=True)
class TraceRow:
    index: int
    nu: float
    ell: float
    sigma2: float
    value: float
    size: float


@dataclass
class FitResult:
    x: np.ndarray
    fun: float
    trace: List[TraceRow]
    converged: bool
    nfev: int = 0

    @property
    def nu(self) -> float:
        return float(self.x[0])

    @property
    def ell(self) -> float:
        return float(self.x[1])

    @property
    def sigma2(self) -> float:
        return float(self.x[2])

    @property
    def theta(self) -> Tuple[float, float, float]:
        """Estimates ordered as (ell, nu, sigma2)."""
        return (self.ell, self.nu, self.sigma2)


class InfeasibleStartError(ValueError):
    def __init__(self):
        super().__init__("infeasible start: every initial simplex vertex is rejected")


def _simplex_size(X: np.ndarray) -> float:
    c = X.mean(axis=0)
    return float(np.sqrt(np.mean(np.sum((X - c) ** 2, axis=1))))


def nelder_mead_minimize(f: Callable, cfg: FitConfig,
                         callback: Optional[Callable] = None) -> FitResult:
    """Nelder-Mead simplex minimization of ``f`` from ``cfg.theta0``.

    Coefficients: reflection 1, expansion 2, contraction 1/2, shrink 1/2.
    The initial simplex is theta0 plus one step along each coordinate.
    The simplex size is the RMS distance of the vertices from their
    centroid.  Values of +inf (rejected points) rank as worst.
    """
    x0 = np.asarray(cfg.theta0, dtype=float)
    d = x0.size
    X = np.tile(x0, (d + 1, 1))
    for i in range(d):
        X[i + 1, i] += cfg.steps[i]
    nfev = 0

    def ev(x):
        nonlocal nfev
        nfev += 1
        v = float(f(x))
        return math.inf if math.isnan(v) else v

    F = np.array([ev(x) for x in X])
    if not np.any(np.isfinite(F)):
        raise InfeasibleStartError()
    trace: List[TraceRow] = []
    converged = False
    for it in range(1, cfg.max_iter + 1):
        order = np.argsort(F, kind="stable")
        X, F = X[order], F[order]
        hi = d
        c = X[:hi].mean(axis=0)
        xr = c + (c - X[hi])
        fr = ev(xr)
        if fr < F[0]:
            xe = c + 2.0 * (c - X[hi])
            fe = ev(xe)
            if fe < fr:
                X[hi], F[hi] = xe, fe
            else:
                X[hi], F[hi] = xr, fr
        elif fr < F[hi - 1]:
            X[hi], F[hi] = xr, fr
        else:
            if fr < F[hi]:
                X[hi], F[hi] = xr, fr
            xc = c + 0.5 * (X[hi] - c)
            fc = ev(xc)
            if fc < F[hi]:
                X[hi], F[hi] = xc, fc
            else:
                best = int(np.argmin(F))
                for j in range(d + 1):
                    if j != best:
                        X[j] = X[best] + 0.5 * (X[j] - X[best])
                        F[j] = ev(X[j])
        size = _simplex_size(X)
        b = int(np.argmin(F))
        row = TraceRow(it, *map(float, X[b]), float(F[b]), size)
        trace.append(row)
        if callback is not None:
            callback(row)
        if size <= cfg.tol:
            converged = True
            break
    b = int(np.argmin(F))
    return FitResult(X[b].copy(), float(F[b]), trace, converged, nfev)


_GOLD = 0.5 * (3.0 - math.sqrt(5.0))


def brent_minimize_1d(g: Callable, bracket: Sequence[float], tol: float = 1e-8,
                      max_iter: int = 500) -> float:
    """Brent's minimizer on [a, b]: golden section with parabolic steps.

    Stops when the minimizer is located to within about ``tol`` (absolute)
    plus a small relative term.
    """
    a, b = map(float, bracket)
    if not (math.isfinite(a) and math.isfinite(b) and a < b):
        raise ValueError(f"invalid bracket [{a}, {b}]")
    x = w = v = a + _GOLD * (b - a)
    fx = fw = fv = float(g(x))
    e = dstep = 0.0
    for _ in range(max_iter):
        m = 0.5 * (a + b)
        tol1 = 1e-10 * abs(x) + tol / 3.0
        tol2 = 2.0 * tol1
        if abs(x - m) <= tol2 - 0.5 * (b - a):
            break
        golden = True
        if abs(e) > tol1:
            r = (x - w) * (fx - fv)
            q = (x - v) * (fx - fw)
            p = (x - v) * q - (x - w) * r
            q = 2.0 * (q - r)
            if q > 0:
                p = -p
            q = abs(q)
            if abs(p) < abs(0.5 * q * e) and q * (a - x) < p < q * (b - x):
                e, dstep = dstep, p / q
                u = x + dstep
                if u - a < tol2 or b - u < tol2:
                    dstep = tol1 if x < m else -tol1
                golden = False
        if golden:
            e = (b - x) if x < m else (a - x)
            dstep = _GOLD * e
        u = x + (dstep if abs(dstep) >= tol1 else math.copysign(tol1, dstep))
        fu = float(g(u))
        if fu <= fx:
            if u < x:
                b = x
            else:
                a = x
            v, fv, w, fw, x, fx = w, fw, x, fx, u, fu
        else:
            if u < x:
                a = u
            else:
                b = u
            if fu <= fw or w == x:
                v, fv, w, fw = w, fw, u, fu
            elif fu <= fv or v == x or v == w:
                v, fv = u, fu
    return x


def _params(x, nugget: float) -> MaternParams:
    nu, ell, sigma2 = map(float, x)
    return MaternParams(sigma2=sigma2, ell=ell, nu=nu, nugget=nugget)


def make_objective(ds: Dataset, cfg: FitConfig) -> Callable:
    """theta = (nu, ell, sigma2) -> negative log-likelihood, +inf when rejected."""
    hl = HLikelihood(ds, n_min=cfg.n_min, eta=cfg.eta, form=cfg.form) \
        if cfg.objective == "h" else None

    def objective(x) -> float:
        if not cfg.feasible(x):
            return math.inf
        p = _params(x, cfg.nugget)
        try:
            res = hl.evaluate(p, cfg.ctl) if hl is not None else loglik_dense(ds, p)
        except (NotPositiveDefiniteError, FloatingPointError):
            return math.inf
        val = -res.loglik
        return val if math.isfinite(val) else math.inf

    return objective


def fit_parameters(ds: Dataset, cfg: FitConfig,
                   callback: Optional[Callable] = None) -> FitResult:
    """Maximize the (H-)log-likelihood over (nu, ell, sigma2)."""
    return nelder_mead_minimize(make_objective(ds, cfg), cfg, callback)


def simulate_field(ps, p: MaternParams, seed: int,
                   ctl: Optional[TruncationControl] = None, n_min: int = 32,
                   eta: float = 2.0) -> Dataset:
    """Gaussian field sample Z = L D^{1/2} xi with xi ~ N(0, I), external order."""
    ps = ps if isinstance(ps, PointSet) else PointSet(ps)
    ctl = ctl or TruncationControl.adaptive(1e-8)
    hl = HLikelihood(Dataset(ps, np.zeros(ps.n)), n_min=n_min, eta=eta, form="ldl")
    _, F = hl.factor(p, ctl)
    xi = make_rng(seed).standard_normal(ps.n)
    z_int = color(F, xi)
    return Dataset(ps, apply_permutation(z_int, hl.ctree, "i2e"))


def simulate_fields(ps, p: MaternParams, seeds: Sequence[int],
                    ctl: Optional[TruncationControl] = None, n_min: int = 32,
                    eta: float = 2.0) -> np.ndarray:
    """Rows equal ``simulate_field(ps, p, s).Z`` for each s in ``seeds``,
    sharing one factorization."""
    ps = ps if isinstance(ps, PointSet) else PointSet(ps)
    ctl = ctl or TruncationControl.adaptive(1e-8)
    hl = HLikelihood(Dataset(ps, np.zeros(ps.n)), n_min=n_min, eta=eta, form="ldl")
    _, F = hl.factor(p, ctl)
    out = np.empty((len(seeds), ps.n))
    for i, s in enumerate(seeds):
        z_int = color(F, make_rng(s).standard_normal(ps.n))
        out[i] = apply_permutation(z_int, hl.ctree, "i2e")
    return out


def subsample(ds: Dataset, n: int, seed: int, min_sep: float = 0.0) -> Dataset:
    """Uniform sample of ``n`` points without replacement.

    With ``min_sep > 0`` a candidate closer than ``min_sep`` to an already
    accepted point is skipped; candidates are visited in random order.
    """
    if n > ds.n or n < 1:
        raise ValueError(f"cannot draw {n} points from a dataset of {ds.n}")
    order = make_rng(seed).permutation(ds.n)
    if min_sep <= 0:
        return ds.subset(order[:n])
    pts = ds.points.points
    cells: dict = {}
    chosen: List[int] = []
    for idx in order:
        x = pts[idx]
        key = tuple(np.floor(x / min_sep).astype(np.int64))
        ok = True
        for off in np.ndindex(*(3,) * len(key)):
            for j in cells.get(tuple(k + o - 1 for k, o in zip(key, off)), ()):
                if np.linalg.norm(pts[j] - x) < min_sep:
                    ok = False
                    break
            if not ok:
                break
        if ok:
            cells.setdefault(key, []).append(int(idx))
            chosen.append(int(idx))
            if len(chosen) == n:
                return ds.subset(np.array(chosen))
    raise ValueError(f"only {len(chosen)} of {n} points satisfy min_sep={min_sep} "
                     f"after {ds.n} candidates")


@dataclass(frozen=True)
class ReplicateRecord:
    n: int
    replicate: int
    ell: float
    nu: float
    sigma2: float
    seed: int
    status: str = "ok"

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def replicate_seed(seed: int, n: int, rep: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(n), int(rep)]).generate_state(1)[0])


def replicate_study(master: Dataset, n_list: Sequence[int], M: int, cfg: FitConfig,
                    seed: int, min_sep: float = 0.0,
                    callback: Optional[Callable] = None) -> List[ReplicateRecord]:
    """Fit M subsamples of ``master`` at each size in ``n_list``."""
    if max(n_list) > master.n:
        raise ValueError(f"largest size {max(n_list)} exceeds master size {master.n}")
    out: List[ReplicateRecord] = []
    for n in n_list:
        for r in range(M):
            s = replicate_seed(seed, n, r)
            try:
                sub = master if n == master.n and M == 1 else subsample(master, n, s, min_sep)
                res = fit_parameters(sub, cfg)
                rec = ReplicateRecord(n, r, res.ell, res.nu, res.sigma2, s)
            except (ValueError, ArithmeticError) as err:
                rec = ReplicateRecord(n, r, math.nan, math.nan, math.nan, s,
                                      status=f"failed: {err}")
            out.append(rec)
            if callback is not None:
                callback(rec)
    return out


@dataclass(frozen=True)
class ProfileRow:
    value: float
    negloglik: float
    logdet: float
    quadform: float
    status: str = "ok"


def profile_likelihood(ds: Dataset, vary: str, grid: Sequence[float], fixed: MaternParams,
                       ctl: TruncationControl, n_min: int = 32,
                       eta: float = 2.0) -> List[ProfileRow]:
    """Negative log-likelihood and its ingredients along one parameter."""
    if vary not in ("nu", "ell", "sigma2", "nugget"):
        raise ValueError(f"unknown parameter {vary!r}")
    grid = list(grid)
    if not grid or any(not (g > 0) for g in grid):
        raise ValueError("grid must be nonempty with positive values")
    hl = HLikelihood(ds, n_min=n_min, eta=eta)
    rows = []
    for g in grid:
        try:
            r = hl.evaluate(replace(fixed, **{vary: float(g)}), ctl)
            rows.append(ProfileRow(float(g), -r.loglik, r.logdet, r.quadform))
        except (NotPositiveDefiniteError, ValueError) as err:
            rows.append(ProfileRow(float(g), math.nan, math.nan, math.nan, f"failed: {err}"))
    return rows
