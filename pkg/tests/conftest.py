import sys

import numpy as np
import pytest

from hmatcov.geometry import PointSet, build_block_cluster_tree, build_cluster_tree
from hmatcov.hmatrix import build_hmatrix
from hmatcov.kernel import KernelEvaluator, MaternParams, dense_covariance


def random_points(n, seed=0, dim=2):
    return np.random.default_rng(seed).random((n, dim))


def unit_grid(m):
    g = np.linspace(0.0, 1.0, m)
    X, Y = np.meshgrid(g, g, indexing="ij")
    return np.column_stack([X.ravel(), Y.ravel()])


class Problem:
    """Points, tree, H-matrix and the dense oracle in internal order."""

    def __init__(self, pts, p, ctl, n_min=32, eta=2.0, mirror=True):
        self.ps = PointSet(pts)
        self.p = p
        self.ct = build_cluster_tree(self.ps, n_min)
        self.bct = build_block_cluster_tree(self.ct, eta)
        self.ev = KernelEvaluator(p, self.ct.points, self.ct.perm_i2e)
        self.H = build_hmatrix(self.bct, self.ev, ctl, mirror=mirror)
        perm = self.ct.perm_i2e
        self.C_ext = dense_covariance(self.ps, p)
        self.C = self.C_ext[np.ix_(perm, perm)]


@pytest.fixture
def make_problem():
    return Problem


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
