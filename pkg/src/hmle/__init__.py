"""Hierarchical-matrix tools for Gaussian process estimation with Matérn covariances.

Typical use::

    from hmle import MaternParams, evaluate, fit, predict

    ll = evaluate(locations, z, MaternParams(1.0, 0.1, 0.5, 1e-4))
"""

from .covkernel import MaternParams, ParameterError, bessel_k, cov_block, cross_cov, matern
from .geometry import build_block_tree, build_cluster_tree
from .hfactor import FactorizationError, IndefiniteFactorError, h_cholesky, h_ldl, log_det, solve_factored, solve_lower
from .hmatrix import FixedAccuracy, FixedRank, assemble, assemble_covariance, matvec, storage_bytes, to_dense
from .knn import KdTree, knn_predict, select_k
from .krige import kriging_variance_dense, predict
from .loglik import LikelihoodModel, LogLikResult, evaluate
from .metrics import MetricConfig, mloe_mmom, rmse
from .mle import OptimizerConfig, ReparamPoint, brent_max_1d, fit, params_to_reparam, reparam_to_params
from .simgen import TukeyParams, generate_dataset, sample_grf, tukey_gh

__version__ = "0.1.0"
