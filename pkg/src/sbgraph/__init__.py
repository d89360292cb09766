"""Sparse precision matrices through constrained Cholesky factors.

The S-Bartlett prior places distributions on the free entries of the
Cholesky factor ``Q`` of ``Lambda = Q Q^T`` and fills the remaining entries
so that the chosen off-diagonal entries of ``Lambda`` are exactly zero. A
NUTS / Gibbs sampler explores ``(Q, Z)`` jointly for Gaussian data and for
Poisson counts through a latent Gaussian layer.
"""
__version__ = "0.1.0"

from .errors import (
    AllDivergent,
    DivergentTrajectory,
    EmptyChain,
    NotPositiveDefinite,
    Overflow,
    SBGraphError,
)
from .linalg import SparsityPattern, chol_product, cholesky, pattern_of
from .mcmc import PosteriorSummary, SampleRecord, run_chain, summarize
from .metrics import (
    EvalReport,
    crps_empirical,
    kl_discrepancy,
    sensitivity,
    specificity,
)
from .nuts import NutsConfig
from .posterior import ModelSpec
from .sbartlett import SBartlettParams, sample_prior, transform_b_to_q
from .sim import SimScenario, banded_truth, random_truth, run_study, simulate_data

__all__ = [
    "AllDivergent",
    "DivergentTrajectory",
    "EmptyChain",
    "NotPositiveDefinite",
    "Overflow",
    "SBGraphError",
    "SparsityPattern",
    "chol_product",
    "cholesky",
    "pattern_of",
    "PosteriorSummary",
    "SampleRecord",
    "run_chain",
    "summarize",
    "EvalReport",
    "crps_empirical",
    "kl_discrepancy",
    "sensitivity",
    "specificity",
    "NutsConfig",
    "ModelSpec",
    "SBartlettParams",
    "sample_prior",
    "transform_b_to_q",
    "SimScenario",
    "banded_truth",
    "random_truth",
    "run_study",
    "simulate_data",
]
