"""The S-Bartlett distribution over sparse Cholesky factors.

A precision matrix ``Lambda = Q Q^T`` is sparse in the pattern ``Z`` when
every ``q[j, k]`` with ``z[j, k] == 0`` is set by :func:`constrained_entry`.
The remaining free entries follow the Bartlett decomposition of a Wishart,
conditioned on the constrained ones, with the diagonal degrees of freedom
reduced to ``nu + z_k``.

Two representations are provided:

* direct sampling of ``Q`` (:func:`sample_prior`), and
* a deterministic map from an unconstrained lower-triangular ``B`` with a
  Bartlett law onto ``Q`` (:func:`transform_b_to_q`), used by the sampler.

Indices are zero-based throughout.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import cho_solve
from scipy.special import gammaln

from .linalg import SparsityPattern, chol_product, cholesky, constrained_entry

__all__ = [
    "SBartlettParams",
    "ColumnConditional",
    "ElementDistributions",
    "sample_sparse_generic",
    "conditional_column",
    "sample_prior",
    "transform_b_to_q",
    "transform_vjp",
    "column_plan",
    "b_from_q",
    "log_prior_b",
    "log_gamma_density",
]

LOG2 = float(np.log(2.0))
LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class _ColumnMap:
    # free entries of column k: q_F = q_kk * drift + gain @ q_C + chol @ b_F
    free: np.ndarray
    constrained: np.ndarray
    gain: np.ndarray
    chol: np.ndarray
    drift: np.ndarray


@dataclass(frozen=True, eq=False)
class SBartlettParams:
    """Degrees of freedom ``nu > 0`` and SPD scale matrix ``S``.

    The lower Cholesky factor ``psi`` of ``S`` is computed once. Column
    conditioning maps are cached per (column, free-row mask).
    """

    nu: float
    scale: np.ndarray
    psi: np.ndarray = field(init=False, repr=False)
    identity_scale: bool = field(init=False, repr=False)
    _maps: dict = field(init=False, repr=False, default_factory=dict)

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError(f"nu must be positive, got {self.nu}")
        scale = np.array(self.scale, dtype=float)
        if scale.ndim != 2 or scale.shape[0] != scale.shape[1]:
            raise ValueError("scale must be a square matrix")
        if not np.array_equal(scale, scale.T):
            raise ValueError("scale must be symmetric")
        scale.setflags(write=False)
        psi = cholesky(scale)
        psi.setflags(write=False)
        object.__setattr__(self, "nu", float(self.nu))
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "psi", psi)
        object.__setattr__(
            self, "identity_scale", bool(np.array_equal(scale, np.eye(len(scale))))
        )

    @classmethod
    def identity(cls, p: int, nu: float = 3.0) -> "SBartlettParams":
        return cls(nu, np.eye(p))

    @property
    def p(self) -> int:
        return self.scale.shape[0]

    def column_map(self, k: int, free_mask: np.ndarray) -> _ColumnMap:
        """Conditioning map for column ``k``; ``free_mask`` covers rows ``k+1:``."""
        free_mask = np.asarray(free_mask, dtype=bool)
        key = (k, free_mask.tobytes())
        cmap = self._maps.get(key)
        if cmap is None:
            cmap = self._build_map(k, free_mask)
            self._maps[key] = cmap
        return cmap

    def _build_map(self, k: int, free_mask: np.ndarray) -> _ColumnMap:
        p = self.p
        rows = np.arange(k + 1, p)
        f_loc = np.flatnonzero(free_mask)
        c_loc = np.flatnonzero(~free_mask)
        nf, nc = len(f_loc), len(c_loc)
        if self.identity_scale:
            return _ColumnMap(
                rows[f_loc], rows[c_loc], np.zeros((nf, nc)), np.eye(nf), np.zeros(nf)
            )
        psi = self.psi
        trailing = psi[k + 1:, k + 1:]
        v = trailing @ trailing.T
        psi_col = psi[k + 1:, k] / psi[k, k]
        v_ff = v[np.ix_(f_loc, f_loc)]
        if nc == 0:
            gain = np.zeros((nf, 0))
            sigma = v_ff
        else:
            l_cc = cholesky(v[np.ix_(c_loc, c_loc)])
            v_cf = v[np.ix_(c_loc, f_loc)]
            gain = cho_solve((l_cc, True), v_cf).T
            sigma = v_ff - gain @ v_cf
            sigma = 0.5 * (sigma + sigma.T)
        chol = cholesky(sigma) if nf else np.zeros((0, 0))
        drift = psi_col[f_loc] - gain @ psi_col[c_loc]
        return _ColumnMap(rows[f_loc], rows[c_loc], gain, chol, drift)


@dataclass(frozen=True)
class ColumnConditional:
    """Gaussian law of the free entries of one column given the constrained ones."""

    mean: np.ndarray
    cov_chol: np.ndarray
    constrained_rows: np.ndarray
    free_rows: np.ndarray

    @property
    def cov(self) -> np.ndarray:
        return self.cov_chol @ self.cov_chol.T


@dataclass(frozen=True)
class ElementDistributions:
    """Samplers ``g_d`` (positive diagonal) and ``g_o`` (free off-diagonal).

    Each is called as ``f(rng, size)`` and returns an array of that size.
    """

    g_d: Callable[[np.random.Generator, int], np.ndarray]
    g_o: Callable[[np.random.Generator, int], np.ndarray]

    @classmethod
    def default(cls, df: float = 3.0) -> "ElementDistributions":
        return cls(
            g_d=lambda rng, size: np.sqrt(rng.chisquare(df, size)),
            g_o=lambda rng, size: rng.standard_normal(size),
        )


def _as_bool(z) -> np.ndarray:
    return z.z if isinstance(z, SparsityPattern) else np.asarray(z, dtype=bool)


def sample_sparse_generic(
    p: int, z: SparsityPattern, dists: ElementDistributions, rng: np.random.Generator
) -> np.ndarray:
    """Draw a sparse SPD matrix with arbitrary element laws.

    Diagonal entries come from ``g_d``, free sub-diagonal entries from
    ``g_o``; the rest are forced column by column so that ``Lambda`` is zero
    wherever ``z`` is.
    """
    if z.p != p:
        raise ValueError(f"pattern has dimension {z.p}, expected {p}")
    zb = z.z
    q = np.zeros((p, p))
    q[np.diag_indices(p)] = dists.g_d(rng, p)
    if np.any(q[np.diag_indices(p)] <= 0):
        raise ValueError("g_d produced a non-positive diagonal entry")
    for k in range(p - 1):
        for j in range(k + 1, p):
            if zb[j, k]:
                q[j, k] = dists.g_o(rng, 1)[0]
            else:
                q[j, k] = constrained_entry(q, q[k, k], j, k)
    return chol_product(q)


def conditional_column(
    params: SBartlettParams,
    z: SparsityPattern,
    k: int,
    q_kk: float,
    q_constrained,
) -> ColumnConditional:
    """Conditional law of the free entries of column ``k``.

    Conditioning is on the diagonal value ``q_kk`` and on the (already
    forced) entries at the constrained rows of the same column.
    """
    p = params.p
    if not 0 <= k < p - 1:
        raise ValueError(f"column index must lie in [0, {p - 2}], got {k}")
    cmap = params.column_map(k, z.z[k + 1:, k])
    q_c = np.asarray(q_constrained, dtype=float).reshape(-1)
    if len(q_c) != len(cmap.constrained):
        raise ValueError(
            f"expected {len(cmap.constrained)} constrained values, got {len(q_c)}"
        )
    mean = q_kk * cmap.drift + cmap.gain @ q_c
    return ColumnConditional(mean, cmap.chol, cmap.constrained, cmap.free)


def sample_prior(
    params: SBartlettParams,
    z: SparsityPattern,
    rng: np.random.Generator,
    size: int | None = None,
) -> np.ndarray:
    """Draw Cholesky factors ``Q`` from the S-Bartlett prior.

    Returns an array of shape ``(p, p)``, or ``(size, p, p)`` when ``size``
    is given (columns are processed once for the whole batch).
    """
    p = params.p
    if z.p != p:
        raise ValueError(f"pattern has dimension {z.p}, expected {p}")
    batch = 1 if size is None else int(size)
    zb = z.z
    counts = z.col_counts
    psi_diag = np.diag(params.psi)
    q = np.zeros((batch, p, p))
    # q_kk^2 ~ Gamma(shape=(nu + z_k)/2, rate=1/(2 psi_kk^2))
    for k in range(p):
        shape = 0.5 * (params.nu + counts[k])
        q[:, k, k] = np.sqrt(rng.gamma(shape, 2.0 * psi_diag[k] ** 2, size=batch))
    for k in range(p - 1):
        cmap = params.column_map(k, zb[k + 1:, k])
        qkk = q[:, k, k]
        c, f = cmap.constrained, cmap.free
        if len(c) and k > 0:
            q[:, c, k] = -np.einsum("nct,nt->nc", q[:, c, :k], q[:, k, :k]) / qkk[:, None]
        if len(f):
            noise = rng.standard_normal((batch, len(f)))
            q[:, f, k] = (
                qkk[:, None] * cmap.drift
                + q[:, c, k] @ cmap.gain.T
                + noise @ cmap.chol.T
            )
    return q[0] if size is None else q


def column_plan(params: SBartlettParams, zb: np.ndarray, start: int = 0) -> list:
    """Per-column ``(constrained, free, map)`` triples for a fixed pattern.

    ``map`` is ``None`` for the identity scale, where free entries of ``Q``
    equal those of ``B``.
    """
    p = params.p
    plan = [None] * start
    for k in range(start, p - 1):
        free_mask = zb[k + 1:, k]
        if params.identity_scale:
            rows = np.arange(k + 1, p)
            plan.append((rows[~free_mask], rows[free_mask], None))
        else:
            cmap = params.column_map(k, free_mask)
            plan.append((cmap.constrained, cmap.free, cmap))
    return plan


def _forward(b, params: SBartlettParams, zb: np.ndarray, q: np.ndarray, start: int = 0, plan=None):
    """Fill columns ``start:`` of ``q`` from ``b``; earlier columns are reused."""
    p = params.p
    psi = params.psi
    if plan is None:
        plan = column_plan(params, zb, start)
    for k in range(start, p - 1):
        qkk = psi[k, k] * b[k, k]
        q[k, k] = qkk
        c, f, cmap = plan[k]
        if len(c):
            q[c, k] = (-(q[c, :k] @ q[k, :k]) / qkk) if k else 0.0
        if len(f):
            if cmap is None:
                q[f, k] = b[f, k]
            else:
                q[f, k] = qkk * cmap.drift + cmap.gain @ q[c, k] + cmap.chol @ b[f, k]
    q[p - 1, p - 1] = psi[p - 1, p - 1] * b[p - 1, p - 1]
    return q


def transform_b_to_q(b: np.ndarray, params: SBartlettParams, z: SparsityPattern) -> np.ndarray:
    """Deterministic map from an unconstrained Bartlett factor ``B`` to ``Q``.

    Entries of ``B`` at constrained positions are inert: they do not enter
    ``Q``. When ``B`` follows the Bartlett law with diagonal degrees of
    freedom ``nu + z_k``, ``Q`` follows the S-Bartlett prior.
    """
    b = np.asarray(b, dtype=float)
    q = np.zeros_like(b)
    return _forward(b, params, _as_bool(z), q)


def transform_vjp(
    b: np.ndarray,
    params: SBartlettParams,
    z,
    q: np.ndarray,
    q_bar: np.ndarray,
    plan=None,
) -> np.ndarray:
    """Pull a cotangent on ``Q`` back to ``B`` (reverse accumulation).

    ``q`` must be ``transform_b_to_q(b, params, z)``. ``q_bar`` holds
    ``d f / d q[j, k]``; only its lower triangle is read and it is not
    modified. Returns ``d f / d b`` in the same lower-triangular layout.
    """
    p = params.p
    psi = params.psi
    if plan is None:
        plan = column_plan(params, _as_bool(z))
    qb = np.array(q_bar, dtype=float)
    b_bar = np.zeros_like(qb)
    b_bar[p - 1, p - 1] = psi[p - 1, p - 1] * qb[p - 1, p - 1]
    # Later columns only read earlier ones, so a reverse sweep sees complete adjoints.
    for k in range(p - 2, -1, -1):
        qkk = q[k, k]
        qkk_bar = qb[k, k]
        c, f, cmap = plan[k]
        if len(f):
            if cmap is None:
                b_bar[f, k] = qb[f, k]
            else:
                gf = qb[f, k]
                qkk_bar += cmap.drift @ gf
                if len(c):
                    qb[c, k] += cmap.gain.T @ gf
                b_bar[f, k] = cmap.chol.T @ gf
        if k and len(c):
            gc = qb[c, k]
            qb[c, :k] -= np.outer(gc, q[k, :k] / qkk)
            qb[k, :k] -= (gc @ q[c, :k]) / qkk
            qkk_bar -= (gc @ q[c, k]) / qkk
        b_bar[k, k] = psi[k, k] * qkk_bar
    return b_bar


def b_from_q(q: np.ndarray, params: SBartlettParams, z: SparsityPattern, fill=0.0) -> np.ndarray:
    """Invert the transform on the free coordinates.

    Inert coordinates (constrained positions) are not recoverable from ``Q``;
    they are set to ``fill`` (a scalar or a matrix supplying the values).
    """
    q = np.asarray(q, dtype=float)
    zb = z.z
    p = params.p
    psi = params.psi
    b = np.array(np.broadcast_to(fill, q.shape), dtype=float)
    b = np.tril(b, -1)
    for k in range(p):
        b[k, k] = q[k, k] / psi[k, k]
        if k == p - 1:
            break
        cmap = params.column_map(k, zb[k + 1:, k])
        f, c = cmap.free, cmap.constrained
        if len(f):
            resid = q[f, k] - q[k, k] * cmap.drift - cmap.gain @ q[c, k]
            b[f, k] = np.linalg.solve(cmap.chol, resid) if not params.identity_scale else resid
    return b


def log_gamma_density(x, shape, rate):
    """Log density of Gamma(shape, rate) at ``x > 0``."""
    x = np.asarray(x, dtype=float)
    return shape * np.log(rate) - gammaln(shape) + (shape - 1.0) * np.log(x) - rate * x


def log_prior_b(b: np.ndarray, z: SparsityPattern, nu: float) -> float:
    """Log density of ``B | Z`` in the sampler's coordinates.

    Diagonal entries are parameterized by ``log b_kk``; the density of
    ``b_kk^2 ~ Gamma((nu + z_k)/2, rate 1/2)`` is combined with the Jacobian
    ``log 2 + 2 log b_kk``. Every sub-diagonal entry, inert or not, carries
    a standard-normal term.
    """
    b = np.asarray(b, dtype=float)
    p = b.shape[0]
    d = np.diag(b)
    if np.any(d <= 0):
        return -np.inf
    shapes = 0.5 * (nu + z.col_counts)
    log_d = np.log(d)
    diag_term = log_gamma_density(d * d, shapes, 0.5) + LOG2 + 2.0 * log_d
    off = b[np.tril_indices(p, -1)]
    off_term = -0.5 * off @ off - 0.5 * LOG_2PI * len(off)
    return float(diag_term.sum() + off_term)


def log_prior_b_grad_log_diag(b_diag: np.ndarray, z: SparsityPattern, nu: float) -> np.ndarray:
    """Derivative of :func:`log_prior_b` with respect to ``log b_kk``."""
    return (nu + z.col_counts) - b_diag * b_diag
