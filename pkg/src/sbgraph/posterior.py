"""Model specification, log-posterior of ``B`` and its gradient, imputation.

The sampler works on a flat vector ``theta`` holding ``log b_kk`` for
``k = 0..p-1`` followed by the strictly-lower entries of ``B`` in
``np.tril_indices(p, -1)`` order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import gammaln

from .errors import NotPositiveDefinite, Overflow
from .linalg import SparsityPattern, chol_product
from .sbartlett import (
    LOG2,
    LOG_2PI,
    SBartlettParams,
    _forward,
    column_plan,
    log_prior_b,
    transform_b_to_q,
    transform_vjp,
)

__all__ = [
    "FAMILIES",
    "MAX_LOG_RATE",
    "ModelSpec",
    "LatentState",
    "BTarget",
    "pack_b",
    "unpack_b",
    "gaussian_loglik",
    "poisson_loglik",
    "log_posterior_b",
    "grad_log_posterior_b",
    "impute_missing_gaussian",
    "impute_missing_poisson",
    "latent_row_logp_grad",
]

FAMILIES = ("gaussian", "poisson")
MAX_LOG_RATE = 30.0


@dataclass
class ModelSpec:
    """Likelihood family, data and prior.

    ``y`` is ``n x p``; missing cells are given by ``mask`` (``True`` =
    missing) or, when ``mask`` is omitted, by NaNs in ``y``. The Gaussian
    family has mean zero: center the data beforehand.
    """

    family: str
    y: np.ndarray
    pi: np.ndarray
    prior: SBartlettParams
    mask: np.ndarray | None = None
    fit_intercepts: bool = True

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}, got {self.family!r}")
        y = np.array(self.y, dtype=float)
        if y.ndim != 2:
            raise ValueError("y must be a 2-d array")
        p = self.prior.p
        if y.shape[1] != p:
            raise ValueError(f"y has {y.shape[1]} columns but the prior has dimension {p}")
        mask = np.isnan(y) if self.mask is None else np.asarray(self.mask, dtype=bool)
        if mask.shape != y.shape:
            raise ValueError("mask and y dimensions disagree")
        y[mask] = np.nan
        pi = np.broadcast_to(np.asarray(self.pi, dtype=float), (p, p)).copy()
        if np.any((pi < 0) | (pi > 1)):
            raise ValueError("inclusion probabilities must lie in [0, 1]")
        pi = np.tril(pi, -1)
        pi = pi + pi.T
        if self.family == "poisson":
            obs = y[~mask]
            if np.any(obs < 0) or np.any(obs != np.round(obs)):
                raise ValueError("Poisson data must be nonnegative integers")
        self.y, self.mask, self.pi = y, mask, pi

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.y.shape[1]

    @property
    def missing_cells(self) -> tuple[np.ndarray, np.ndarray]:
        return np.nonzero(self.mask)


@dataclass
class LatentState:
    """Imputed values, and for Poisson models the latent field and intercepts."""

    y_missing: np.ndarray
    w: np.ndarray | None = None
    mu: np.ndarray | None = None

    def completed(self, model: ModelSpec) -> np.ndarray:
        y = model.y.copy()
        y[model.mask] = self.y_missing
        return y

    def copy(self) -> "LatentState":
        return LatentState(
            self.y_missing.copy(),
            None if self.w is None else self.w.copy(),
            None if self.mu is None else self.mu.copy(),
        )


def pack_b(b: np.ndarray) -> np.ndarray:
    p = b.shape[0]
    return np.concatenate([np.log(np.diag(b)), b[np.tril_indices(p, -1)]])


def unpack_b(theta: np.ndarray, p: int) -> np.ndarray:
    b = np.zeros((p, p))
    b[np.diag_indices(p)] = np.exp(theta[:p])
    b[np.tril_indices(p, -1)] = theta[p:]
    return b


def gaussian_loglik(y_complete: np.ndarray, q: np.ndarray) -> float:
    """Zero-mean Gaussian log-likelihood of the rows of ``y`` with precision ``Q Q^T``."""
    y = np.atleast_2d(np.asarray(y_complete, dtype=float))
    n, p = y.shape
    v = y @ q
    return float(-0.5 * n * p * LOG_2PI + n * np.log(np.diag(q)).sum() - 0.5 * np.sum(v * v))


def _gaussian_loglik_stats(syy: np.ndarray, n: int, q: np.ndarray) -> float:
    p = q.shape[0]
    d = np.diag(q)
    if np.any(d <= 0) or not np.all(np.isfinite(q)):
        return -np.inf
    quad = np.sum((syy @ q) * q)
    return float(-0.5 * n * p * LOG_2PI + n * np.log(d).sum() - 0.5 * quad)


def poisson_loglik(y: np.ndarray, mask: np.ndarray, w: np.ndarray, mu: np.ndarray) -> float:
    """Poisson log-likelihood (log link) over observed cells."""
    y = np.asarray(y, dtype=float)
    eta = np.asarray(mu)[None, :] + np.asarray(w)
    obs = ~np.asarray(mask, dtype=bool)
    yo, eo = y[obs], eta[obs]
    return float(np.sum(yo * eo - np.exp(eo) - gammaln(yo + 1.0)))


def _likelihood_stats(model: ModelSpec, latent: LatentState) -> tuple[np.ndarray, int]:
    # Gram matrix of the Gaussian layer: completed data, or the latent field
    x = latent.completed(model) if model.family == "gaussian" else latent.w
    return x.T @ x, x.shape[0]


class BTarget:
    """Log-posterior of ``theta`` (packed ``B``) at fixed ``Z`` and Gram matrix."""

    def __init__(self, prior: SBartlettParams, z: SparsityPattern, gram: np.ndarray, n: int):
        self.prior = prior
        self.z = z
        self.gram = gram
        self.n = n
        p = self.p = prior.p
        self._tril = np.tril_indices(p, -1)
        self._diag = np.diag_indices(p)
        self._plan = column_plan(prior, z.z)
        shapes = 0.5 * (prior.nu + z.col_counts)
        self._shapes2 = 2.0 * shapes
        # log Gamma(shape, rate 1/2) normalizer plus the log 2 Jacobian, per column
        self._const = float(np.sum(-shapes * LOG2 - gammaln(shapes) + LOG2)) - 0.5 * LOG_2PI * len(self._tril[0])
        self._const_lik = -0.5 * n * p * LOG_2PI

    def q_of(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        p = self.p
        b = np.zeros((p, p))
        b[self._diag] = np.exp(theta[:p])
        b[self._tril] = theta[p:]
        q = np.zeros((p, p))
        _forward(b, self.prior, self.z.z, q, plan=self._plan)
        return b, q

    def _value(self, theta, b, q):
        p = self.p
        ell = theta[:p]
        d2 = np.exp(2.0 * ell)
        off = theta[p:]
        # in log b_kk: (shape - 1) log b^2 - b^2/2 + log b^2 (Jacobian) = shape * 2 ell - b^2/2
        prior = self._const + float(self._shapes2 @ ell) - 0.5 * d2.sum() - 0.5 * (off @ off)
        quad = np.sum((self.gram @ q) * q)
        lik = self._const_lik + self.n * (np.log(self.prior.psi.diagonal()).sum() + ell.sum()) - 0.5 * quad
        return prior + lik, d2

    def logp(self, theta: np.ndarray) -> float:
        with np.errstate(over="ignore", invalid="ignore"):
            b, q = self.q_of(theta)
            lp, _ = self._value(theta, b, q)
        return float(lp) if np.isfinite(lp) else -np.inf

    def logp_and_grad(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        p = self.p
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            b, q = self.q_of(theta)
            lp, d2 = self._value(theta, b, q)
            if not np.isfinite(lp):
                return -np.inf, np.zeros_like(theta)
            q_bar = -(self.gram @ q)
            b_bar = transform_vjp(b, self.prior, self.z, q, q_bar, plan=self._plan)
        grad = np.empty_like(theta)
        # d/d ell of n * log q_kk is n; the rest flows through b_kk = exp(ell)
        grad[:p] = b_bar[self._diag] * b[self._diag] + self.n + self._shapes2 - d2
        grad[p:] = b_bar[self._tril] - theta[p:]
        return float(lp), grad


def log_posterior_b(b: np.ndarray, z: SparsityPattern, model: ModelSpec, latent: LatentState) -> float:
    """``log_prior_b`` plus the Gaussian-layer likelihood at ``Q = Q*(B)``.

    The Gaussian layer is the completed data (Gaussian family) or the
    latent field ``W`` (Poisson family). All normalizing constants are kept.
    """
    q = transform_b_to_q(b, model.prior, z)
    gram, n = _likelihood_stats(model, latent)
    return float(log_prior_b(b, z, model.prior.nu) + _gaussian_loglik_stats(gram, n, q))


def grad_log_posterior_b(b: np.ndarray, z: SparsityPattern, model: ModelSpec, latent: LatentState) -> np.ndarray:
    """Gradient of :func:`log_posterior_b` in packed ``theta`` coordinates."""
    gram, n = _likelihood_stats(model, latent)
    return BTarget(model.prior, z, gram, n).logp_and_grad(pack_b(b))[1]


def impute_missing_gaussian(
    q: np.ndarray, y_row: np.ndarray, mask_row: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Draw the missing entries of one row given the observed ones.

    Uses ``Y_m | Y_o ~ N(-L_mm^{-1} L_mo y_o, L_mm^{-1})`` with ``L = Q Q^T``.
    """
    return _impute_row(chol_product(q), np.asarray(y_row, dtype=float), np.asarray(mask_row, dtype=bool), rng)


def _impute_row(lam, y_row, mask_row, rng):
    out = y_row.copy()
    m = np.flatnonzero(mask_row)
    if len(m) == 0:
        return out
    o = np.flatnonzero(~mask_row)
    lam_mm = lam[np.ix_(m, m)]
    try:
        chol = np.linalg.cholesky(lam_mm)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite("precision block of missing entries is not PD") from None
    mean = -cho_solve((chol, True), lam[np.ix_(m, o)] @ y_row[o]) if len(o) else np.zeros(len(m))
    eps = rng.standard_normal(len(m))
    out[m] = mean + solve_triangular(chol, eps, lower=True, trans="T")
    return out


def impute_gaussian_rows(lam, y, mask, rng) -> np.ndarray:
    """Impute every incomplete row; returns the values at ``mask`` in C order.

    Rows sharing a missingness pattern are drawn together.
    """
    y = y.copy()
    rows = np.flatnonzero(mask.any(axis=1))
    if len(rows) == 0:
        return y[mask]
    patterns, inverse = np.unique(mask[rows], axis=0, return_inverse=True)
    for g, pat in enumerate(patterns):
        idx = rows[inverse.ravel() == g]
        m = np.flatnonzero(pat)
        o = np.flatnonzero(~pat)
        try:
            chol = np.linalg.cholesky(lam[np.ix_(m, m)])
        except np.linalg.LinAlgError:
            raise NotPositiveDefinite("precision block of missing entries is not PD") from None
        if len(o):
            rhs = lam[np.ix_(m, o)] @ y[np.ix_(idx, o)].T
            mean = -cho_solve((chol, True), rhs)
        else:
            mean = np.zeros((len(m), len(idx)))
        eps = rng.standard_normal((len(idx), len(m))).T
        y[np.ix_(idx, m)] = (mean + solve_triangular(chol, eps, lower=True, trans="T")).T
    return y[mask]


def impute_missing_poisson(latent: LatentState, i: int, j: int, rng: np.random.Generator) -> int:
    """Draw ``Y_ij ~ Poisson(exp(mu_j + w_ij))``."""
    eta = float(latent.mu[j] + latent.w[i, j])
    if eta > MAX_LOG_RATE:
        raise Overflow(f"log-rate {eta:.3g} at cell ({i}, {j}) exceeds {MAX_LOG_RATE}")
    return int(rng.poisson(np.exp(eta)))


def latent_row_logp_grad(w_row, lam, y_row, obs_row, mu) -> tuple[float, np.ndarray]:
    """Log target and gradient of one latent row ``w_i`` given ``Lambda``, ``mu``, ``y_i``.

    Constant terms are dropped.
    """
    lw = lam @ w_row
    eta = mu + w_row
    with np.errstate(over="ignore"):
        rate = np.exp(eta)
    lp = -0.5 * (w_row @ lw) + np.sum(np.where(obs_row, y_row * eta - rate, 0.0))
    grad = -lw + np.where(obs_row, y_row - rate, 0.0)
    if not np.isfinite(lp):
        return -np.inf, np.zeros_like(w_row)
    return float(lp), grad
