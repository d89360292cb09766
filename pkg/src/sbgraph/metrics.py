"""Evaluation metrics for estimated precision matrices and imputations."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .linalg import SparsityPattern, cholesky

__all__ = [
    "EvalReport",
    "sensitivity",
    "specificity",
    "kl_discrepancy",
    "crps_empirical",
    "mean_crps",
]


@dataclass
class EvalReport:
    sensitivity: float
    specificity: float
    kl_discrepancy: float
    crps_mean: float
    edge_count_mean: float
    edge_count_lo: float
    edge_count_hi: float
    kl_orientation: str = "estimate||truth"

    def as_dict(self) -> dict:
        return asdict(self)


def _lower(z: SparsityPattern) -> np.ndarray:
    return z.z[np.tril_indices(z.p, -1)]


def sensitivity(z_true: SparsityPattern, z_hat: SparsityPattern) -> float:
    """Fraction of true zeros (sub-diagonal) that are also zero in ``z_hat``.

    Returns 1 when the true pattern has no zeros.
    """
    if z_true.p != z_hat.p:
        raise ValueError("patterns have different dimensions")
    t, h = _lower(z_true), _lower(z_hat)
    zeros = ~t
    if not zeros.any():
        return 1.0
    return float(np.sum(zeros & ~h) / np.sum(zeros))


def specificity(z_true: SparsityPattern, z_hat: SparsityPattern) -> float:
    """Fraction of true edges recovered as edges; 1 when there are none."""
    if z_true.p != z_hat.p:
        raise ValueError("patterns have different dimensions")
    t, h = _lower(z_true), _lower(z_hat)
    if not t.any():
        return 1.0
    return float(np.sum(t & h) / np.sum(t))


def kl_discrepancy(lambda_hat: np.ndarray, lambda_true: np.ndarray, orientation: str = "estimate||truth") -> float:
    """Kullback-Leibler divergence between zero-mean Gaussians with the given precisions.

    With the default orientation this is ``KL(N(0, Lhat^-1) || N(0, L^-1))
    = (tr(L Lhat^-1) - log det(L Lhat^-1) - p) / 2``. Pass
    ``orientation="truth||estimate"`` to swap the arguments.
    """
    a = np.asarray(lambda_hat, dtype=float)
    b = np.asarray(lambda_true, dtype=float)
    if a.shape != b.shape:
        raise ValueError("precision matrices have different shapes")
    if orientation == "truth||estimate":
        a, b = b, a
    elif orientation != "estimate||truth":
        raise ValueError(f"unknown orientation {orientation!r}")
    p = a.shape[0]
    la = cholesky(a)
    lb = cholesky(b)
    # tr(B A^-1) = ||La^-1 Lb||_F^2 ; log det(B A^-1) = 2 (sum log diag Lb - sum log diag La)
    m = np.linalg.solve(la, lb)
    tr = float(np.sum(m * m))
    logdet = 2.0 * (np.log(np.diag(lb)).sum() - np.log(np.diag(la)).sum())
    return max(0.0, 0.5 * (tr - logdet - p))


def crps_empirical(samples, y: float) -> float:
    """CRPS of the empirical distribution of ``samples`` at ``y``.

    ``mean|X - y| - mean|X - X'| / 2`` with the second mean over all ordered
    pairs (self-pairs included), evaluated in ``O(L log L)`` by sorting.
    """
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = len(x)
    if n < 2:
        raise ValueError("need at least two samples")
    term1 = np.mean(np.abs(x - y))
    weights = 2.0 * np.arange(n) - n + 1.0
    pair_sum = 2.0 * float(weights @ x)
    return float(max(0.0, term1 - 0.5 * pair_sum / (n * n)))


def mean_crps(draws: np.ndarray, truth) -> float:
    """Average CRPS over cells; ``draws`` has shape ``(n_draws, n_cells)``."""
    draws = np.asarray(draws, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if draws.ndim != 2 or draws.shape[1] != len(truth):
        raise ValueError("draws must have shape (n_draws, n_cells)")
    if len(truth) == 0:
        return float("nan")
    return float(np.mean([crps_empirical(draws[:, c], truth[c]) for c in range(len(truth))]))
