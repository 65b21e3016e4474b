"""Hierarchical matrices: container, truncated arithmetic, factorization and
error diagnostics."""

from .core import (HBlock, HMatrix, build_hmatrix, identity_hmatrix, matvec,
                   storage_report, symmetrize)
from .arith import truncated_multiply_add
from .diagnostics import (inversion_error, kld, kld_dense, norm2_estimate,
                          spectral_error_metrics)
from .factor import (HFactor, NotPositiveDefiniteError, color, factorize,
                     log_determinant, solve_full, solve_triangular, whiten)

__all__ = [
    "HBlock", "HMatrix", "HFactor", "NotPositiveDefiniteError",
    "build_hmatrix", "identity_hmatrix", "matvec", "storage_report", "symmetrize",
    "truncated_multiply_add", "factorize", "solve_triangular", "solve_full",
    "log_determinant", "whiten", "color", "norm2_estimate",
    "spectral_error_metrics", "inversion_error", "kld", "kld_dense",
]
