"""No-U-Turn sampler with dual-averaging step-size adaptation.

Implements the efficient slice-sampling NUTS of Hoffman and Gelman
(Algorithm 6) with a unit mass matrix. The target is given as a callable
``fn(theta) -> (logp, grad)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "NutsConfig",
    "NutsInfo",
    "DualAveraging",
    "leapfrog",
    "find_reasonable_epsilon",
    "nuts_step",
]

LogpGrad = Callable[[np.ndarray], "tuple[float, np.ndarray]"]


@dataclass(frozen=True)
class NutsConfig:
    """Sampler settings.

    ``m_adapt`` iterations of dual averaging are run before the step size
    is frozen. ``initial_step`` is a positive float or ``"auto"``.
    """

    m_adapt: int = 10
    delta: float = 0.5
    max_tree_depth: int = 10
    initial_step: float | str = "auto"
    divergence_threshold: float = 1000.0

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if not 1 <= self.max_tree_depth <= 12:
            raise ValueError(f"max_tree_depth must lie in [1, 12], got {self.max_tree_depth}")
        if self.m_adapt < 0:
            raise ValueError("m_adapt must be nonnegative")
        if self.initial_step != "auto":
            if not (isinstance(self.initial_step, (int, float)) and self.initial_step > 0):
                raise ValueError("initial_step must be a positive number or 'auto'")


@dataclass
class NutsInfo:
    accept_stat: float
    n_leapfrog: int
    depth: int
    diverged: bool


class DualAveraging:
    """Nesterov dual averaging of ``log(step_size)`` toward a target acceptance."""

    def __init__(self, step_size: float, delta: float, gamma=0.05, t0=10.0, kappa=0.75):
        self.delta = delta
        self.gamma, self.t0, self.kappa = gamma, t0, kappa
        self.mu = math.log(10.0 * step_size)
        self.log_step = math.log(step_size)
        self.log_step_bar = 0.0
        self.h_bar = 0.0
        self.m = 0

    def update(self, accept_stat: float) -> float:
        self.m += 1
        m = self.m
        eta = 1.0 / (m + self.t0)
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.delta - accept_stat)
        self.log_step = self.mu - math.sqrt(m) / self.gamma * self.h_bar
        x = m ** (-self.kappa)
        self.log_step_bar = x * self.log_step + (1.0 - x) * self.log_step_bar
        return math.exp(self.log_step)

    @property
    def step_size(self) -> float:
        return math.exp(self.log_step)

    @property
    def final_step_size(self) -> float:
        return math.exp(self.log_step_bar) if self.m else math.exp(self.log_step)


def leapfrog(theta, r, grad, eps, fn: LogpGrad):
    r = r + 0.5 * eps * grad
    theta = theta + eps * r
    logp, grad = fn(theta)
    r = r + 0.5 * eps * grad
    return theta, r, logp, grad


def find_reasonable_epsilon(theta, logp, grad, fn: LogpGrad, rng: np.random.Generator) -> float:
    """Heuristic initial step: halve or double until one leapfrog step has acceptance near 1/2."""
    eps = 1.0
    r = rng.standard_normal(len(theta))
    joint0 = logp - 0.5 * r @ r

    def log_ratio(e):
        _, r1, lp1, _ = leapfrog(theta, r, grad, e, fn)
        val = lp1 - 0.5 * r1 @ r1 - joint0
        return val if np.isfinite(val) else -np.inf

    # shrink until the first step is at least finite
    lr = log_ratio(eps)
    while not np.isfinite(lr) and eps > 1e-10:
        eps *= 0.5
        lr = log_ratio(eps)
    a = 1.0 if lr > math.log(0.5) else -1.0
    for _ in range(100):
        if not a * lr > -a * math.log(2.0):
            break
        eps *= 2.0 ** a
        lr = log_ratio(eps)
    return eps


class _Tree:
    __slots__ = (
        "theta_m", "r_m", "grad_m", "theta_p", "r_p", "grad_p",
        "theta", "logp", "grad", "n", "s", "alpha", "n_alpha", "diverged",
    )


def _no_uturn(theta_m, theta_p, r_m, r_p) -> bool:
    d = theta_p - theta_m
    return d @ r_m >= 0 and d @ r_p >= 0


def _build_tree(theta, r, grad, logu, v, depth, eps, joint0, fn, rng, dmax):
    if depth == 0:
        t = _Tree()
        th, r1, lp, g = leapfrog(theta, r, grad, v * eps, fn)
        joint = lp - 0.5 * r1 @ r1
        if not np.isfinite(joint):
            joint = -np.inf
        t.theta_m = t.theta_p = t.theta = th
        t.r_m = t.r_p = r1
        t.grad_m = t.grad_p = t.grad = g
        t.logp = lp
        t.n = int(logu <= joint)
        t.s = logu < joint + dmax
        t.diverged = not t.s
        t.alpha = min(1.0, math.exp(joint - joint0)) if np.isfinite(joint) else 0.0
        t.n_alpha = 1
        return t
    t = _build_tree(theta, r, grad, logu, v, depth - 1, eps, joint0, fn, rng, dmax)
    if not t.s:
        return t
    if v < 0:
        t2 = _build_tree(t.theta_m, t.r_m, t.grad_m, logu, v, depth - 1, eps, joint0, fn, rng, dmax)
        t.theta_m, t.r_m, t.grad_m = t2.theta_m, t2.r_m, t2.grad_m
    else:
        t2 = _build_tree(t.theta_p, t.r_p, t.grad_p, logu, v, depth - 1, eps, joint0, fn, rng, dmax)
        t.theta_p, t.r_p, t.grad_p = t2.theta_p, t2.r_p, t2.grad_p
    tot = t.n + t2.n
    if tot > 0 and rng.random() < t2.n / tot:
        t.theta, t.logp, t.grad = t2.theta, t2.logp, t2.grad
    t.alpha += t2.alpha
    t.n_alpha += t2.n_alpha
    t.diverged = t.diverged or t2.diverged
    t.s = t2.s and _no_uturn(t.theta_m, t.theta_p, t.r_m, t.r_p)
    t.n = tot
    return t


def nuts_step(
    theta: np.ndarray,
    logp: float,
    grad: np.ndarray,
    fn: LogpGrad,
    eps: float,
    rng: np.random.Generator,
    max_tree_depth: int = 10,
    divergence_threshold: float = 1000.0,
):
    """One NUTS transition from ``theta``.

    Returns ``(theta, logp, grad, info)``. A divergence stops tree growth
    and is reported in ``info``; the draw is then taken among the states
    accumulated before it, which keeps the kernel reversible.
    """
    r0 = rng.standard_normal(len(theta))
    joint0 = logp - 0.5 * r0 @ r0
    logu = joint0 - rng.exponential()
    theta_m = theta_p = theta
    r_m = r_p = r0
    grad_m = grad_p = grad
    out_theta, out_logp, out_grad = theta, logp, grad
    n, s, depth = 1, True, 0
    alpha, n_alpha, diverged = 0.0, 0, False
    while s and depth < max_tree_depth:
        v = 1 if rng.random() < 0.5 else -1
        if v < 0:
            t = _build_tree(theta_m, r_m, grad_m, logu, v, depth, eps, joint0, fn, rng, divergence_threshold)
            theta_m, r_m, grad_m = t.theta_m, t.r_m, t.grad_m
        else:
            t = _build_tree(theta_p, r_p, grad_p, logu, v, depth, eps, joint0, fn, rng, divergence_threshold)
            theta_p, r_p, grad_p = t.theta_p, t.r_p, t.grad_p
        if t.s and rng.random() < t.n / n:
            out_theta, out_logp, out_grad = t.theta, t.logp, t.grad
        n += t.n
        alpha += t.alpha
        n_alpha += t.n_alpha
        diverged = diverged or t.diverged
        s = t.s and _no_uturn(theta_m, theta_p, r_m, r_p)
        depth += 1
    info = NutsInfo(alpha / max(n_alpha, 1), n_alpha, depth, diverged)
    return out_theta, out_logp, out_grad, info
