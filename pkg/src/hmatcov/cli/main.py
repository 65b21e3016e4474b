"""Command line entry point: ``hmatcov <command> [options]``.

Every command writes its artifacts into the ``--out`` directory:

=============  ==========================================================
fit            ``iterations.log``, ``fit.csv``
simulate       ``simulated.txt`` (input file format)
profile        ``profile.csv`` or ``profile_nugget_<tau2>.csv`` per nugget
replicates     ``replicates.txt`` (rows "n ell nu sigma2"), ``master.txt``
benchmark      ``benchmark.csv``
kld-study      ``kld_study.csv``
=============  ==========================================================
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from ..estimate import (FitConfig, fit_parameters, make_rng, profile_likelihood,
                        replicate_study, simulate_field)
from ..geometry import PointSet, build_block_cluster_tree, build_cluster_tree
from ..hmatrix import (build_hmatrix, factorize, inversion_error, kld,
                       spectral_error_metrics, storage_report, symmetrize)
from ..kernel import DEFAULT_NUGGET, KernelEvaluator, MaternParams, dense_covariance
from ..likelihood import Dataset
from ..lowrank import TruncationControl
from .formats import (parse_input_file, write_dataset, write_iteration_log,
                      write_profile_csv, write_replicate_csv, write_table_csv)

__all__ = ["RunConfig", "build_parser", "config_from_args", "run_command", "main"]

log = logging.getLogger("hmatcov")

COMMANDS = ("fit", "simulate", "profile", "replicates", "benchmark", "kld-study")
# study domain (degrees latitude x longitude) used when points are generated
DEFAULT_DOMAIN = (32.4, 43.4, -84.8, -72.9)


@dataclass
class RunConfig:
    command: str
    out: Path
    input: Optional[Path] = None
    dim: int = 2
    init: tuple = (0.5, 1.0, 1.0)
    truth: tuple = (0.5, 1.0, 1.0)
    steps: tuple = (0.02, 0.04, 0.01)
    tol: float = 1e-5
    max_iter: int = 200
    eps: Optional[float] = 1e-5
    rank: Optional[int] = None
    kmax: Optional[int] = 100
    n_min: int = 32
    eta: float = 2.0
    nugget: float = DEFAULT_NUGGET
    seed: int = 0
    threads: Optional[int] = None
    n: int = 2000
    n_list: List[int] = field(default_factory=lambda: [500, 1000, 2000])
    M: int = 20
    master_size: int = 50_000
    min_sep: float = 0.0
    vary: str = "ell"
    grid: List[float] = field(default_factory=list)
    nuggets: List[float] = field(default_factory=list)
    ranks: List[int] = field(default_factory=lambda: [10, 12, 15, 20, 50])
    grid_size: int = 32
    sizes: List[int] = field(default_factory=lambda: [4000, 8000, 16000])
    domain: tuple = DEFAULT_DOMAIN
    dense: bool = False
    style: str = "full"

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ValueError(f"unknown command {self.command!r}")
        for name in ("tol", "eta", "n_min", "max_iter", "M", "n", "master_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.nugget < 0 or self.min_sep < 0:
            raise ValueError("nugget and min_sep must be nonnegative")
        if self.dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")

    def control(self) -> TruncationControl:
        if self.rank is not None:
            return TruncationControl.fixed(self.rank, k_max=self.kmax)
        return TruncationControl.adaptive(self.eps, k_max=self.kmax)

    def fit_config(self) -> FitConfig:
        return FitConfig(theta0=tuple(self.init), steps=tuple(self.steps), tol=self.tol,
                         max_iter=self.max_iter, ctl=self.control(), nugget=self.nugget,
                         n_min=self.n_min, eta=self.eta,
                         objective="dense" if self.dense else "h")

    def params(self, theta) -> MaternParams:
        nu, ell, s2 = theta
        return MaternParams(sigma2=s2, ell=ell, nu=nu, nugget=self.nugget)


def _floats(text: str) -> List[float]:
    return [float(t) for t in text.replace(",", " ").split()]


def _ints(text: str) -> List[int]:
    return [int(t) for t in text.replace(",", " ").split()]


def _triple(text: str) -> tuple:
    vals = _floats(text)
    if len(vals) != 3:
        raise argparse.ArgumentTypeError("expected three comma separated numbers")
    return tuple(vals)


def _grid(text: str) -> List[float]:
    """"a:b:m" (m equispaced values) or a comma separated list."""
    if ":" in text:
        a, b, m = text.split(":")
        return list(np.linspace(float(a), float(b), int(m)))
    return _floats(text)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("approximation")
    g.add_argument("--eps", type=float, default=1e-5, help="block accuracy (adaptive rank)")
    g.add_argument("--rank", type=int, default=None, help="fixed rank k (overrides --eps)")
    g.add_argument("--kmax", type=int, default=100, help="rank cap")
    g.add_argument("--nmin", type=int, default=32, help="cluster leaf size")
    g.add_argument("--eta", type=float, default=2.0, help="admissibility parameter")
    g.add_argument("--nugget", type=float, default=DEFAULT_NUGGET)
    o = common.add_argument_group("run")
    o.add_argument("--out", type=Path, default=Path("out"), help="artifact directory")
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--threads", type=int, default=None,
                   help="worker count (accepted for compatibility; runs single process)")
    o.add_argument("--dim", type=int, choices=(2, 3), default=2)
    o.add_argument("-v", "--verbose", action="store_true")

    opt = argparse.ArgumentParser(add_help=False)
    q = opt.add_argument_group("optimizer")
    q.add_argument("--init", type=_triple, default=(0.5, 1.0, 1.0), help="nu,ell,sigma2")
    q.add_argument("--steps", type=_triple, default=(0.02, 0.04, 0.01))
    q.add_argument("--tol", type=float, default=1e-5)
    q.add_argument("--max-iter", type=int, default=200)
    q.add_argument("--dense", action="store_true", help="exact dense objective")

    truth = argparse.ArgumentParser(add_help=False)
    truth.add_argument("--true", dest="truth", type=_triple, default=(0.5, 1.0, 1.0),
                       help="nu,ell,sigma2 used to simulate")
    truth.add_argument("--domain", type=_floats, default=list(DEFAULT_DOMAIN),
                       help="x0,x1,y0,y1[,z0,z1] for generated points")

    p = argparse.ArgumentParser(prog="hmatcov",
                                description="H-matrix Matérn likelihood tools")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("fit", parents=[common, opt], help="estimate (nu, ell, sigma2)")
    s.add_argument("--input", type=Path, required=True)
    s.add_argument("--style", choices=("full", "short"), default="full")

    s = sub.add_parser("simulate", parents=[common, truth], help="simulate a Gaussian field")
    s.add_argument("--input", type=Path, help="take locations from this file")
    s.add_argument("--n", type=int, default=2000)

    s = sub.add_parser("profile", parents=[common], help="likelihood along one parameter")
    s.add_argument("--input", type=Path, required=True)
    s.add_argument("--vary", choices=("nu", "ell", "sigma2"), default="ell")
    s.add_argument("--grid", type=_grid, required=True, help="a:b:m or list")
    s.add_argument("--fixed", type=_triple, default=(0.5, 1.0, 1.0), help="nu,ell,sigma2")
    s.add_argument("--nuggets", type=_floats, default=[], help="nugget sweep")

    s = sub.add_parser("replicates", parents=[common, opt, truth], help="replicate study")
    s.add_argument("--input", type=Path, help="master dataset (else simulated)")
    s.add_argument("--master-size", type=int, default=50_000)
    s.add_argument("--n-list", type=_ints, default=[500, 1000, 2000])
    s.add_argument("-M", type=int, default=20)
    s.add_argument("--min-sep", type=float, default=0.0)
    s.add_argument("--style", choices=("full", "short"), default="full")

    s = sub.add_parser("benchmark", parents=[common, truth], help="storage/time vs n")
    s.add_argument("--sizes", type=_ints, default=[4000, 8000, 16000])

    s = sub.add_parser("kld-study", parents=[common, truth], help="errors vs fixed rank")
    s.add_argument("--ranks", type=_ints, default=[10, 12, 15, 20, 50])
    s.add_argument("--grid-size", type=int, default=32)
    return p


def config_from_args(a: argparse.Namespace) -> RunConfig:
    kw = dict(command=a.command, out=a.out, eps=a.eps, rank=a.rank, kmax=a.kmax,
              n_min=a.nmin, eta=a.eta, nugget=a.nugget, seed=a.seed,
              threads=a.threads, dim=a.dim)
    for name, attr in (("input", "input"), ("init", "init"), ("steps", "steps"),
                       ("tol", "tol"), ("max_iter", "max_iter"), ("dense", "dense"),
                       ("truth", "truth"), ("n", "n"), ("n_list", "n_list"), ("M", "M"),
                       ("master_size", "master_size"), ("min_sep", "min_sep"),
                       ("vary", "vary"), ("grid", "grid"), ("nuggets", "nuggets"),
                       ("ranks", "ranks"), ("grid_size", "grid_size"),
                       ("sizes", "sizes"), ("style", "style")):
        if hasattr(a, attr):
            kw[name] = getattr(a, attr)
    if hasattr(a, "fixed"):
        kw["truth"] = a.fixed
    if hasattr(a, "domain"):
        kw["domain"] = tuple(a.domain)
    return RunConfig(**kw)


def _random_points(cfg: RunConfig, n: int, stream: int) -> np.ndarray:
    dom = cfg.domain
    if len(dom) != 2 * cfg.dim:
        raise ValueError(f"--domain needs {2 * cfg.dim} numbers for dim={cfg.dim}")
    rng = make_rng(cfg.seed, stream)
    return np.column_stack([rng.uniform(dom[2 * a], dom[2 * a + 1], n)
                            for a in range(cfg.dim)])


def _cmd_fit(cfg: RunConfig) -> None:
    ds = parse_input_file(cfg.input, cfg.dim)
    res = fit_parameters(ds, cfg.fit_config(),
                         callback=lambda r: log.info("iter %d size %.3g", r.index, r.size))
    with open(cfg.out / "iterations.log", "w", encoding="utf-8") as fh:
        write_iteration_log(res.trace, fh, result=res, style=cfg.style)
    write_table_csv(cfg.out / "fit.csv", ["ell", "nu", "sigma2", "negloglik", "converged",
                                          "iterations", "evaluations"],
                    [(res.ell, res.nu, res.sigma2, res.fun, str(res.converged),
                      len(res.trace), res.nfev)])
    print(f"theta* = (ell={res.ell:.6g}, nu={res.nu:.6g}, sigma2={res.sigma2:.6g}) "
          f"converged={res.converged}")


def _simulate(cfg: RunConfig, n: int, stream: int) -> Dataset:
    if cfg.input is not None:
        ps = parse_input_file(cfg.input, cfg.dim).points
    else:
        ps = PointSet(_random_points(cfg, n, stream))
    return simulate_field(ps, cfg.params(cfg.truth), cfg.seed, ctl=cfg.control(),
                          n_min=cfg.n_min, eta=cfg.eta)


def _cmd_simulate(cfg: RunConfig) -> None:
    ds = _simulate(cfg, cfg.n, 1)
    write_dataset(ds, cfg.out / "simulated.txt")
    print(f"wrote {ds.n} simulated values")


def _cmd_profile(cfg: RunConfig) -> None:
    ds = parse_input_file(cfg.input, cfg.dim)
    fixed = cfg.params(cfg.truth)
    sweeps = [(cfg.nugget, cfg.out / "profile.csv")]
    if cfg.nuggets:
        sweeps = [(t, cfg.out / f"profile_nugget_{t:g}.csv") for t in cfg.nuggets]
    for tau2, path in sweeps:
        rows = profile_likelihood(ds, cfg.vary, cfg.grid, fixed.replace(nugget=tau2),
                                  cfg.control(), n_min=cfg.n_min, eta=cfg.eta)
        write_profile_csv(path, cfg.vary, rows)
        ok = [r for r in rows if r.status == "ok"]
        if ok:
            best = min(ok, key=lambda r: r.negloglik)
            print(f"nugget {tau2:g}: argmin {cfg.vary} = {best.value:.6g}")


def _cmd_replicates(cfg: RunConfig) -> None:
    if cfg.input is not None:
        master = parse_input_file(cfg.input, cfg.dim)
    else:
        master = _simulate(cfg, cfg.master_size, 2)
        write_dataset(master, cfg.out / "master.txt")
    path = cfg.out / "replicates.txt"
    path.write_text("")
    with open(path, "a", encoding="utf-8") as fh:
        def emit(rec):
            write_replicate_csv([rec], fh, style=cfg.style)
            fh.flush()
        recs = replicate_study(master, cfg.n_list, cfg.M, cfg.fit_config(), cfg.seed,
                               min_sep=cfg.min_sep, callback=emit)
    print(f"wrote {sum(r.ok for r in recs)} of {len(recs)} replicate estimates")


def benchmark_row(ps: PointSet, p: MaternParams, ctl: TruncationControl, n_min: int,
                  eta: float) -> dict:
    """Build and factor timings, storage and inversion error at one size."""
    t0 = time.perf_counter()
    ct = build_cluster_tree(ps, n_min)
    bct = build_block_cluster_tree(ct, eta)
    ev = KernelEvaluator(p, ct.points, ct.perm_i2e)
    H = symmetrize(build_hmatrix(bct, ev, ctl, mirror=True), ctl)
    t_build = time.perf_counter() - t0
    t0 = time.perf_counter()
    F = factorize(H, ctl)
    t_fact = time.perf_counter() - t0
    st = storage_report(H)
    fst = storage_report(F.L)
    return {"n": ps.n, "build_s": t_build, "factor_s": t_fact, "bytes": st["bytes"],
            "kb_per_dof": st["kb_per_dof"], "factor_kb_per_dof": fst["kb_per_dof"],
            "max_rank": st["max_rank"], "inv_err": inversion_error(H, F)}


BENCH_COLUMNS = ["n", "build_s", "factor_s", "bytes", "kb_per_dof", "factor_kb_per_dof",
                 "max_rank", "inv_err"]


def _cmd_benchmark(cfg: RunConfig) -> None:
    rows = []
    for i, n in enumerate(cfg.sizes):
        ps = PointSet(_random_points(cfg, n, 10 + i))
        row = benchmark_row(ps, cfg.params(cfg.truth), cfg.control(), cfg.n_min, cfg.eta)
        log.info("benchmark n=%d: %s", n, row)
        rows.append([row[c] for c in BENCH_COLUMNS])
    write_table_csv(cfg.out / "benchmark.csv", BENCH_COLUMNS, rows)
    print(write_table_csv(None, BENCH_COLUMNS, rows), end="")


def unit_grid(m: int) -> np.ndarray:
    g = np.linspace(0.0, 1.0, m)
    X, Y = np.meshgrid(g, g, indexing="ij")
    return np.column_stack([X.ravel(), Y.ravel()])


KLD_COLUMNS = ["k", "kld", "norm2", "rel_norm2", "inv_rel", "inv_err"]


def kld_study(pts: np.ndarray, p: MaternParams, ranks: Sequence[int], n_min: int = 32,
              eta: float = 2.0) -> List[dict]:
    """KL divergence and spectral errors of fixed-rank approximations."""
    ps = PointSet(pts)
    C = dense_covariance(ps, p)
    ct = build_cluster_tree(ps, n_min)
    bct = build_block_cluster_tree(ct, eta)
    out = []
    for k in ranks:
        ctl = TruncationControl.fixed(k)
        ev = KernelEvaluator(p, ct.points, ct.perm_i2e)
        H = symmetrize(build_hmatrix(bct, ev, ctl, mirror=True), ctl)
        F = factorize(H, ctl)
        m = spectral_error_metrics(H, C, F)
        out.append({"k": k, "kld": kld(C, F, H), "norm2": m["norm2"],
                    "rel_norm2": m["rel_norm2"], "inv_rel": m["inv_rel"],
                    "inv_err": m["inv_err"]})
    return out


def _cmd_kld(cfg: RunConfig) -> None:
    rows = kld_study(unit_grid(cfg.grid_size), cfg.params(cfg.truth), cfg.ranks,
                     cfg.n_min, cfg.eta)
    table = [[r[c] for c in KLD_COLUMNS] for r in rows]
    write_table_csv(cfg.out / "kld_study.csv", KLD_COLUMNS, table)
    print(write_table_csv(None, KLD_COLUMNS, table), end="")


_DISPATCH = {"fit": _cmd_fit, "simulate": _cmd_simulate, "profile": _cmd_profile,
             "replicates": _cmd_replicates, "benchmark": _cmd_benchmark,
             "kld-study": _cmd_kld}


def run_command(cfg: RunConfig) -> int:
    """Run one command; returns the process exit status."""
    try:
        cfg.out.mkdir(parents=True, exist_ok=True)
        _DISPATCH[cfg.command](cfg)
    except (ValueError, OSError, ArithmeticError) as err:
        print(f"hmatcov {cfg.command}: error: {err}", file=sys.stderr)
        return 1
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = config_from_args(args)
    except ValueError as err:
        parser.error(str(err))
    return run_command(cfg)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
