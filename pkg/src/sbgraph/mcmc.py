"""MCMC over ``(B, Z)`` and the latent layer.

Each iteration runs a NUTS transition on ``B`` at fixed ``Z``, a Gibbs sweep
over the edge indicators, then the family-specific updates (imputation of
missing Gaussian entries; or latent rows, intercepts and missing counts for
the Poisson family).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import AllDivergent, EmptyChain, NotPositiveDefinite, Overflow
from .linalg import SparsityPattern, chol_product, cholesky
from .nuts import DualAveraging, NutsConfig, find_reasonable_epsilon, nuts_step
from .posterior import (
    BTarget,
    LatentState,
    ModelSpec,
    _gaussian_loglik_stats,
    _likelihood_stats,
    impute_gaussian_rows,
    impute_missing_poisson,
    latent_row_logp_grad,
    pack_b,
    unpack_b,
)
from .sbartlett import _forward, b_from_q, log_gamma_density, log_prior_b

__all__ = [
    "ChainState",
    "SampleRecord",
    "PosteriorSummary",
    "init_state",
    "nuts_update_b",
    "gibbs_update_z",
    "update_latent",
    "run_chain",
    "summarize",
    "format_interval",
    "predictive_draws",
]

log = logging.getLogger(__name__)

INTERCEPT_PRIOR_SD = 10.0
INTERCEPT_STEP = 0.1


@dataclass
class ChainState:
    """Mutable state of one chain. Owned by exactly one chain."""

    b: np.ndarray
    z: SparsityPattern
    latent: LatentState
    rng: np.random.Generator
    step_size: float = 1.0
    adapt: DualAveraging | None = None
    w_step: np.ndarray | None = None
    w_adapt: list | None = None
    mu_step: np.ndarray | None = None
    mu_accepts: np.ndarray | None = None
    iteration: int = 0
    n_divergent: int = 0
    n_divergent_post: int = 0
    n_overflow: int = 0
    accept_stats: list = field(default_factory=list)
    q: np.ndarray | None = None  # Q at the current (B, Z), reset when B moves


@dataclass
class SampleRecord:
    iteration: int
    lam: np.ndarray
    z: SparsityPattern
    edge_count: int
    log_post: float
    imputed: np.ndarray
    q: np.ndarray | None = None
    mu: np.ndarray | None = None


@dataclass
class PosteriorSummary:
    lambda_hat: np.ndarray
    z_prob: np.ndarray
    z_hat: SparsityPattern
    edge_mean: float
    edge_interval: tuple[float, float]
    n_samples: int
    threshold: float = 0.5

    def edge_string(self) -> str:
        return format_interval(self.edge_mean, self.edge_interval)


def format_interval(mean: float, interval) -> str:
    """Format as ``"172 (155, 191)"``."""
    lo, hi = interval
    return f"{mean:.0f} ({lo:.0f}, {hi:.0f})"


def _initial_z(model: ModelSpec) -> SparsityPattern:
    return SparsityPattern(model.pi > 0)


def init_state(model: ModelSpec, cfg: NutsConfig, rng: np.random.Generator) -> ChainState:
    """Deterministic starting point from the data, then step-size initialization."""
    p, n = model.p, model.n
    prior = model.prior
    z = _initial_z(model)
    mask = model.mask
    if model.family == "gaussian":
        latent = LatentState(y_missing=np.zeros(int(mask.sum())))
        x = latent.completed(model)
    else:
        y = model.y
        obs = ~mask
        counts = np.where(obs, y, 0.0)
        col_mean = counts.sum(0) / np.maximum(obs.sum(0), 1)
        mu = np.log(col_mean + 0.5) if model.fit_intercepts else np.zeros(p)
        w = np.where(obs, np.log(counts + 0.5) - mu, 0.0)
        latent = LatentState(
            y_missing=np.round(np.broadcast_to(col_mean, y.shape)[mask]),
            w=w,
            mu=mu,
        )
        x = w
    if n > p:
        cov = x.T @ x / n
        lam0 = np.linalg.inv(cov + 0.1 * np.diag(np.diag(cov)) + 1e-3 * np.eye(p))
    else:
        lam0 = (prior.nu + p) * prior.scale
    q0 = cholesky(0.5 * (lam0 + lam0.T))
    b = b_from_q(q0, prior, z, fill=0.0)
    state = ChainState(b=b, z=z, latent=latent, rng=rng)
    gram, nn = _likelihood_stats(model, latent)
    target = BTarget(prior, z, gram, nn)
    theta = pack_b(b)
    lp, grad = target.logp_and_grad(theta)
    if cfg.initial_step == "auto":
        eps = find_reasonable_epsilon(theta, lp, grad, target.logp_and_grad, rng)
    else:
        eps = float(cfg.initial_step)
    state.step_size = eps
    state.adapt = DualAveraging(eps, cfg.delta)
    if model.family == "poisson":
        state.w_step = np.full(n, 0.1)
        state.w_adapt = [DualAveraging(0.1, cfg.delta) for _ in range(n)]
        state.mu_step = np.full(p, INTERCEPT_STEP)
        state.mu_accepts = np.zeros(p)
    return state


def nuts_update_b(state: ChainState, model: ModelSpec, cfg: NutsConfig, rng: np.random.Generator | None = None) -> ChainState:
    """One NUTS transition on ``B`` at fixed ``Z`` and latent layer (in place)."""
    rng = state.rng if rng is None else rng
    gram, n = _likelihood_stats(model, state.latent)
    target = BTarget(model.prior, state.z, gram, n)
    theta = pack_b(state.b)
    lp, grad = target.logp_and_grad(theta)
    adapting = state.iteration < cfg.m_adapt
    eps = state.step_size
    theta, lp, grad, info = nuts_step(
        theta, lp, grad, target.logp_and_grad, eps, rng,
        cfg.max_tree_depth, cfg.divergence_threshold,
    )
    state.b = unpack_b(theta, model.p)
    state.q = None
    if info.diverged:
        state.n_divergent += 1
        if not adapting:
            state.n_divergent_post += 1
    if adapting:
        state.adapt.update(info.accept_stat)
        state.step_size = (
            state.adapt.final_step_size if state.iteration + 1 >= cfg.m_adapt else state.adapt.step_size
        )
    state.accept_stats.append(info.accept_stat)
    return state


def gibbs_update_z(
    state: ChainState, model: ModelSpec, rng: np.random.Generator | None = None, randomized: bool = False
) -> ChainState:
    """Sweep over all edge indicators holding ``B`` fixed (in place).

    For each pair the two configurations are compared through the Bernoulli
    prior, the Gamma density of ``b_kk^2`` with shape ``(nu + z_k)/2`` and the
    Gaussian-layer likelihood at the rebuilt ``Q``.
    """
    rng = state.rng if rng is None else rng
    prior = model.prior
    p, nu = model.p, prior.nu
    b = state.b
    zb = np.array(state.z.z)
    counts = np.tril(zb, -1).sum(axis=0)
    gram, n = _likelihood_stats(model, state.latent)
    q = np.zeros((p, p))
    _forward(b, prior, zb, q)
    ll = _gaussian_loglik_stats(gram, n, q)
    pairs = [(j, k) for k in range(p - 1) for j in range(k + 1, p)]
    if randomized:
        pairs = [pairs[i] for i in rng.permutation(len(pairs))]
    for j, k in pairs:
        pi = model.pi[j, k]
        cur = bool(zb[j, k])
        if pi >= 1.0 or pi <= 0.0:
            forced = pi >= 1.0
            if forced == cur:
                continue
            zb[j, k] = zb[k, j] = forced
            counts[k] += 1 if forced else -1
            _forward(b, prior, zb, q, start=k)
            ll = _gaussian_loglik_stats(gram, n, q)
            continue
        zb[j, k] = zb[k, j] = not cur
        q_alt = q.copy()
        try:
            _forward(b, prior, zb, q_alt, start=k)
            ll_alt = _gaussian_loglik_stats(gram, n, q_alt)
        except NotPositiveDefinite:
            ll_alt = -np.inf
        x = b[k, k] ** 2
        c_on = counts[k] + (0 if cur else 1)
        ll_on, ll_off = (ll, ll_alt) if cur else (ll_alt, ll)
        log_on = np.log(pi) + log_gamma_density(x, 0.5 * (nu + c_on), 0.5) + ll_on
        log_off = np.log1p(-pi) + log_gamma_density(x, 0.5 * (nu + c_on - 1), 0.5) + ll_off
        with np.errstate(invalid="ignore"):
            prob_on = float(expit(log_on - log_off))
        if np.isnan(prob_on):
            prob_on = 1.0 if log_off == -np.inf else 0.0
        new = bool(rng.random() < prob_on)
        if new != cur:
            q, ll = q_alt, ll_alt
            counts[k] += 1 if new else -1
        else:
            zb[j, k] = zb[k, j] = cur
    state.z = SparsityPattern(zb)
    state.q = q
    return state


def _poisson_intercept_logp(mu_j, y_col, obs_col, w_col):
    eta = mu_j + w_col
    with np.errstate(over="ignore"):
        val = np.sum(np.where(obs_col, y_col * eta - np.exp(eta), 0.0))
    return val - 0.5 * (mu_j / INTERCEPT_PRIOR_SD) ** 2


def update_latent(
    state: ChainState, model: ModelSpec, cfg: NutsConfig, burn_in: int, rng: np.random.Generator | None = None
) -> ChainState:
    """Family-specific updates of the latent layer (in place)."""
    rng = state.rng if rng is None else rng
    mask = model.mask
    if model.family == "gaussian":
        if mask.any():
            q = state.q if state.q is not None else _current_q(state, model)
            state.latent.y_missing = impute_gaussian_rows(chol_product(q), state.latent.completed(model), mask, rng)
        return state

    q = state.q if state.q is not None else _current_q(state, model)
    lam = chol_product(q)
    lat = state.latent
    obs = ~mask
    y0 = np.where(obs, model.y, 0.0)
    adapting = state.iteration < cfg.m_adapt
    for i in range(model.n):
        fn = lambda w, i=i: latent_row_logp_grad(w, lam, y0[i], obs[i], lat.mu)
        lp, grad = fn(lat.w[i])
        w_new, _, _, info = nuts_step(
            lat.w[i], lp, grad, fn, state.w_step[i], rng, cfg.max_tree_depth, cfg.divergence_threshold
        )
        lat.w[i] = w_new
        if adapting:
            da = state.w_adapt[i]
            da.update(info.accept_stat)
            state.w_step[i] = da.final_step_size if state.iteration + 1 >= cfg.m_adapt else da.step_size
    if model.fit_intercepts:
        for j in range(model.p):
            cur = _poisson_intercept_logp(lat.mu[j], y0[:, j], obs[:, j], lat.w[:, j])
            prop = lat.mu[j] + state.mu_step[j] * rng.standard_normal()
            new = _poisson_intercept_logp(prop, y0[:, j], obs[:, j], lat.w[:, j])
            if np.log(rng.random()) < new - cur:
                lat.mu[j] = prop
                state.mu_accepts[j] += 1
        # keep the intercept acceptance in [0.2, 0.5] during burn-in
        if state.iteration < burn_in and (state.iteration + 1) % 50 == 0:
            rate = state.mu_accepts / 50.0
            state.mu_step = np.where(rate < 0.2, state.mu_step / 1.5,
                                     np.where(rate > 0.5, state.mu_step * 1.5, state.mu_step))
            state.mu_accepts[:] = 0
    if mask.any():
        rows, cols = np.nonzero(mask)
        for idx, (i, j) in enumerate(zip(rows, cols)):
            try:
                lat.y_missing[idx] = impute_missing_poisson(lat, i, j, rng)
            except Overflow:
                state.n_overflow += 1
    return state


def _current_q(state: ChainState, model: ModelSpec) -> np.ndarray:
    q = np.zeros_like(state.b)
    _forward(state.b, model.prior, state.z.z, q)
    return q


def _log_joint(state: ChainState, model: ModelSpec, q: np.ndarray) -> float:
    gram, n = _likelihood_stats(model, state.latent)
    lp = log_prior_b(state.b, state.z, model.prior.nu) + _gaussian_loglik_stats(gram, n, q)
    lower = np.tril_indices(model.p, -1)
    pi = model.pi[lower]
    zl = state.z.z[lower]
    with np.errstate(divide="ignore"):
        lz = np.where(zl, np.log(pi), np.log1p(-pi))
    return float(lp + lz.sum())


def run_chain(
    model: ModelSpec,
    cfg: NutsConfig,
    iterations: int,
    burn_in: int,
    thinning: int = 1,
    seed: int | np.random.SeedSequence = 0,
    randomized_sweep: bool = False,
    keep_q: bool = False,
    progress=None,
) -> list[SampleRecord]:
    """Run one chain and return the post-burn-in, thinned records.

    The output is a deterministic function of ``(model, cfg, seed)``.
    """
    if iterations <= burn_in:
        raise ValueError("iterations must exceed burn_in")
    if thinning < 1:
        raise ValueError("thinning must be at least 1")
    rng = np.random.default_rng(seed)
    state = init_state(model, cfg, rng)
    records: list[SampleRecord] = []
    for it in range(iterations):
        state.iteration = it
        state.q = None
        nuts_update_b(state, model, cfg)
        gibbs_update_z(state, model, randomized=randomized_sweep)
        update_latent(state, model, cfg, burn_in)
        if it >= burn_in and (it - burn_in) % thinning == 0:
            q = state.q if state.q is not None else _current_q(state, model)
            records.append(
                SampleRecord(
                    iteration=it,
                    lam=chol_product(q),
                    z=state.z,
                    edge_count=state.z.edge_count,
                    log_post=_log_joint(state, model, q),
                    imputed=state.latent.y_missing.copy(),
                    q=q.copy() if keep_q else None,
                    mu=None if state.latent.mu is None else state.latent.mu.copy(),
                )
            )
        if progress is not None:
            progress(it, state)
    post = iterations - min(cfg.m_adapt, iterations)
    if post > 0 and state.n_divergent_post > 0.9 * post:
        raise AllDivergent(
            f"{state.n_divergent_post} of {post} post-adaptation transitions diverged; "
            "check the data scaling"
        )
    if state.n_divergent:
        log.info("%d divergent transitions", state.n_divergent)
    return records


def summarize(samples: list[SampleRecord], threshold: float = 0.5) -> PosteriorSummary:
    """Posterior mean of ``Lambda``, edge probabilities and the thresholded graph.

    An edge is kept when its inclusion frequency is ``>= threshold``.
    """
    if not samples:
        raise EmptyChain("no samples to summarize")
    lam_hat = np.mean([s.lam for s in samples], axis=0)
    z_prob = np.mean([s.z.z for s in samples], axis=0)
    z_hat = SparsityPattern(z_prob >= threshold)
    counts = np.array([s.edge_count for s in samples], dtype=float)
    lo, hi = np.percentile(counts, [2.5, 97.5])
    return PosteriorSummary(lam_hat, z_prob, z_hat, float(counts.mean()), (float(lo), float(hi)), len(samples), threshold)


def predictive_draws(samples: list[SampleRecord]) -> np.ndarray:
    """Imputed values as an ``(n_samples, n_missing)`` array."""
    if not samples:
        raise EmptyChain("no samples")
    return np.array([s.imputed for s in samples])
