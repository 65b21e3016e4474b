import math

import numpy as np
import pytest
import scipy.special as sp
from hypothesis import given, settings, strategies as st

from hmatcov.geometry import PointSet, build_cluster_tree
from hmatcov.kernel import (KernelEvaluator, MaternParams, bessel_k, dense_covariance,
                            kernel_entry, matern_cov)

from conftest import random_points


# --- Bessel K_nu -----------------------------------------------------------

def test_bessel_half_order_closed_form():
    assert bessel_k(0.5, 1.0) == pytest.approx(math.sqrt(math.pi / 2) * math.exp(-1), rel=1e-14)
    assert bessel_k(0.5, 1.0) == pytest.approx(0.461068504, abs=1e-9)


def test_bessel_three_halves_closed_form():
    assert bessel_k(1.5, 1.0) == pytest.approx(0.922137009, abs=1e-9)


def test_bessel_even_in_order():
    x = np.linspace(0.1, 20, 50)
    np.testing.assert_allclose(bessel_k(-1.3, x), bessel_k(1.3, x), rtol=1e-10)


def test_bessel_domain_error():
    with pytest.raises(ValueError):
        bessel_k(0.5, 0.0)
    with pytest.raises(ValueError):
        bessel_k(0.5, np.array([1.0, -1.0]))


def test_bessel_accuracy_against_scipy():
    nus = np.concatenate([np.linspace(0.01, 5.0, 60), [0.5, 1.0, 1.5, 2.0, 2.5]])
    x = np.geomspace(1e-8, 50.0, 400)
    worst = 0.0
    for nu in nus:
        ref = sp.kv(nu, x)
        worst = max(worst, float(np.max(np.abs(bessel_k(nu, x) - ref) / ref)))
    assert worst <= 1e-10


@settings(max_examples=80, deadline=None)
@given(st.floats(0.01, 5.0), st.floats(1e-8, 50.0))
def test_bessel_recurrence(nu, x):
    # K_{nu+1}(x) = K_{nu-1}(x) + (2 nu / x) K_nu(x)
    lhs = bessel_k(nu + 1, x)
    rhs = bessel_k(nu - 1, x) + 2 * nu / x * bessel_k(nu, x)
    assert lhs == pytest.approx(rhs, rel=1e-10)


# --- Matérn covariance -----------------------------------------------------

def test_matern_at_origin():
    for nu in (0.3, 0.5, 1.5, 2.2):
        assert matern_cov(0.0, MaternParams(2.5, 0.7, nu)) == 2.5


def test_exponential_value():
    assert matern_cov(1.0, MaternParams(1, 1, 0.5)) == pytest.approx(0.367879441, abs=1e-9)


@pytest.mark.parametrize("nu", [0.5, 1.5, 2.5])
def test_closed_forms_match_bessel_path(nu):
    h = np.linspace(0.0, 8.0, 500)
    p = MaternParams(1.3, 0.8, nu)
    closed = matern_cov(h, p)
    r = h[1:] / p.ell
    bessel = 1.3 * 2 ** (1 - nu) / math.gamma(nu) * r ** nu * bessel_k(nu, r)
    np.testing.assert_allclose(closed[1:], bessel, rtol=1e-9)


def test_printed_three_halves_form_is_rescaled_range():
    # (1 + sqrt(3) h) exp(-sqrt(3) h) is the nu = 3/2 kernel with range 1/sqrt(3)
    h = 1.0
    printed = (1 + math.sqrt(3) * h) * math.exp(-math.sqrt(3) * h)
    x = math.sqrt(3) * h
    bessel = 2 ** (1 - 1.5) / math.gamma(1.5) * x ** 1.5 * bessel_k(1.5, x)
    assert bessel == pytest.approx(printed, rel=1e-9)
    assert matern_cov(h, MaternParams(1, 1 / math.sqrt(3), 1.5)) == pytest.approx(printed, rel=1e-12)


@pytest.mark.parametrize("nu", [0.5, 1.5, 2.5])
def test_monotone_and_bounded(nu):
    h = np.linspace(0.0, 30.0, 1000)
    c = matern_cov(h, MaternParams(1.7, 0.9, nu))
    assert np.all(np.diff(c) <= 0)
    assert np.all(c <= 1.7) and np.all(c[h < 20] > 0)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.05, 4.0), st.floats(0.05, 3.0), st.floats(0.1, 5.0), st.floats(0.0, 20.0))
def test_bounded_property(nu, ell, s2, h):
    v = matern_cov(h, MaternParams(s2, ell, nu))
    assert 0.0 <= v <= s2
    if h / ell < 30:
        assert v > 0


def test_subnormal_distance_gives_variance():
    for nu in (0.3, 1.0, 1.7, 3.2):
        p = MaternParams(2.0, 1.0, nu)
        assert matern_cov(5e-324, p) == pytest.approx(2.0, rel=1e-12)
        assert matern_cov(1e-300, p) == pytest.approx(2.0, rel=1e-12)


def test_invalid_params():
    for bad in [dict(sigma2=0), dict(ell=-1), dict(nu=0), dict(nugget=-1e-3), dict(nu=math.nan)]:
        with pytest.raises(ValueError):
            MaternParams(**bad)
    with pytest.raises(ValueError):
        matern_cov(-1.0, MaternParams())


# --- evaluator and dense oracle ---------------------------------------------

def test_kernel_entry_diagonal():
    ev = KernelEvaluator(MaternParams(2.0, 1.0, 0.7, nugget=0.01), random_points(5))
    assert kernel_entry(ev, 3, 3) == pytest.approx(2.01, rel=1e-14)


def test_kernel_entry_two_points():
    ev = KernelEvaluator(MaternParams(1, 1, 0.5, nugget=0.0), np.array([[0.0, 0], [1, 0]]))
    assert kernel_entry(ev, 0, 1) == pytest.approx(math.exp(-1), rel=1e-14)


def test_kernel_entry_out_of_range():
    ev = KernelEvaluator(MaternParams(), random_points(5))
    with pytest.raises(IndexError):
        kernel_entry(ev, 5, 0)


@pytest.mark.parametrize("nu", [0.5, 0.73, 1.5, 2.2])
def test_kernel_entry_matches_dense_under_permutation(nu):
    ps = PointSet(random_points(20, 3))
    ct = build_cluster_tree(ps, n_min=2)
    p = MaternParams(1.2, 0.4, nu, nugget=1e-3)
    ev = KernelEvaluator(p, ps, ct.perm_i2e)
    C = dense_covariance(ps, p)
    ext = ct.perm_i2e
    for i in range(20):
        for j in range(20):
            assert kernel_entry(ev, i, j) == pytest.approx(C[ext[i], ext[j]], rel=1e-12)


@pytest.mark.parametrize("nu", [0.05, 0.33, 0.73, 1.0, 1.9, 3.3, 4.9])
def test_compiled_blocks_match_scipy_route(nu):
    pts = random_points(150, 9) * 4
    p = MaternParams(1.0, 0.3, nu, nugget=0.0)
    fast = KernelEvaluator(p, pts).block(slice(None), slice(None))
    ref = KernelEvaluator(p, pts, kv=sp.kv).block(slice(None), slice(None))
    mask = np.abs(ref) > 1e-280
    assert np.max(np.abs(fast - ref)[mask] / np.abs(ref[mask])) <= 1e-12


def test_block_range_nugget_only_on_diagonal_blocks():
    p = MaternParams(1, 1, 0.5, nugget=0.5)
    ev = KernelEvaluator(p, random_points(10))
    full = ev.block(np.arange(10), np.arange(10))
    np.testing.assert_allclose(ev.block_range(0, 10, 0, 10), full, rtol=1e-15)
    np.testing.assert_allclose(ev.block_range(0, 5, 5, 10), full[:5, 5:], rtol=1e-15)


def test_dense_single_point():
    C = dense_covariance(np.array([[0.2, 0.3]]), MaternParams(2, 1, 0.5, nugget=0.1))
    assert C.shape == (1, 1) and C[0, 0] == pytest.approx(2.1)


def test_dense_coincident_points_singular():
    C = dense_covariance(np.array([[0.0, 0], [0, 0]]), MaternParams(1.5, 1, 0.8, nugget=0.0))
    np.testing.assert_allclose(C, 1.5 * np.ones((2, 2)))
    assert abs(np.linalg.det(C)) < 1e-14


def test_dense_min_eigenvalue_at_least_nugget():
    C = dense_covariance(random_points(100, 1), MaternParams(1, 0.3, 0.5, nugget=1e-4))
    assert np.linalg.eigvalsh(C).min() >= 1e-4 * (1 - 1e-8)


def test_dense_exact_symmetry_and_diagonal():
    p = MaternParams(1.4, 0.2, 0.9, nugget=3e-3)
    C = dense_covariance(random_points(80, 2), p)
    assert np.array_equal(C, C.T)
    assert np.all(np.diag(C) == 1.4 + 3e-3)


def test_dense_guard():
    with pytest.raises(ValueError, match="guard"):
        dense_covariance(random_points(30), MaternParams(), max_n=20)
