"""Hierarchical-matrix Matérn Gaussian log-likelihood and parameter estimation."""

from .geometry import (BlockClusterTree, BoundingBox, ClusterTree, PointSet,
                       apply_permutation, build_block_cluster_tree, build_cluster_tree,
                       is_admissible)
from .kernel import (KernelEvaluator, MaternParams, bessel_k, dense_covariance,
                     kernel_entry, matern_cov)
from .lowrank import LowRankBlock, TruncationControl, aca_approximate, recompress_svd

__version__ = "0.1.0"
