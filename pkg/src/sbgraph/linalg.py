"""Triangular and SPD primitives, sparsity patterns and the zero-forcing map.

Cholesky factors and SPD matrices are plain ``numpy`` arrays; the helpers
here validate them where it matters and leave the hot paths alone.
"""
from __future__ import annotations

import numpy as np

from .errors import NotPositiveDefinite

__all__ = [
    "SparsityPattern",
    "chol_product",
    "cholesky",
    "constrained_entry",
    "pattern_of",
    "is_positive_definite",
    "min_eigenvalue",
    "random_spd",
]


class SparsityPattern:
    """Symmetric binary matrix ``Z`` encoding the edges of a graph.

    ``z[j, k] == 1`` for ``j != k`` means the precision entry is free,
    ``0`` means it is forced to zero. The diagonal is always on.

    Parameters
    ----------
    z : array_like, shape (p, p)
        Binary matrix. Only the strictly lower triangle is read; the upper
        triangle is mirrored from it and the diagonal is set to one.
    """

    __slots__ = ("_z", "_counts")

    def __init__(self, z):
        z = np.asarray(z)
        if z.ndim != 2 or z.shape[0] != z.shape[1]:
            raise ValueError(f"pattern must be square, got shape {z.shape}")
        lower = np.tril(z != 0, -1)
        full = lower | lower.T
        np.fill_diagonal(full, True)
        full.setflags(write=False)
        self._z = full
        self._counts = lower.sum(axis=0).astype(np.int64)
        self._counts.setflags(write=False)

    @classmethod
    def full(cls, p: int) -> "SparsityPattern":
        return cls(np.ones((p, p), dtype=bool))

    @classmethod
    def identity(cls, p: int) -> "SparsityPattern":
        return cls(np.eye(p, dtype=bool))

    @classmethod
    def band(cls, p: int, w: int) -> "SparsityPattern":
        idx = np.arange(p)
        return cls(np.abs(idx[:, None] - idx[None, :]) <= w)

    @classmethod
    def from_lower_flags(cls, p: int, flags) -> "SparsityPattern":
        """Build from the strictly-lower entries in ``np.tril_indices(p, -1)`` order."""
        z = np.zeros((p, p), dtype=bool)
        z[np.tril_indices(p, -1)] = np.asarray(flags, dtype=bool)
        return cls(z)

    @property
    def p(self) -> int:
        return self._z.shape[0]

    @property
    def z(self) -> np.ndarray:
        """Read-only boolean view of the symmetric pattern."""
        return self._z

    @property
    def col_counts(self) -> np.ndarray:
        """Number of free sub-diagonal entries per column (``z_k``)."""
        return self._counts

    @property
    def edge_count(self) -> int:
        return int(self._counts.sum())

    def lower_flags(self) -> np.ndarray:
        return self._z[np.tril_indices(self.p, -1)].copy()

    def free_rows(self, k: int) -> np.ndarray:
        rows = np.arange(k + 1, self.p)
        return rows[self._z[k + 1:, k]]

    def constrained_rows(self, k: int) -> np.ndarray:
        rows = np.arange(k + 1, self.p)
        return rows[~self._z[k + 1:, k]]

    def with_edge(self, j: int, k: int, on: bool) -> "SparsityPattern":
        if j == k:
            raise ValueError("diagonal entries of a pattern cannot be changed")
        z = self._z.copy()
        z[j, k] = z[k, j] = bool(on)
        return SparsityPattern(z)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparsityPattern):
            return NotImplemented
        return self._z.shape == other._z.shape and bool(np.all(self._z == other._z))

    def __hash__(self) -> int:
        return hash((self.p, np.packbits(self.lower_flags()).tobytes()))

    def __repr__(self) -> str:
        return f"SparsityPattern(p={self.p}, edges={self.edge_count})"


def chol_product(q: np.ndarray) -> np.ndarray:
    """Return ``Q @ Q.T`` with the upper half mirrored from the lower half.

    Leading axes are treated as a batch.
    """
    q = np.asarray(q, dtype=float)
    lam = q @ np.swapaxes(q, -1, -2)
    il = np.triu_indices(q.shape[-1], 1)
    lam[..., il[0], il[1]] = lam[..., il[1], il[0]]
    return lam


def cholesky(m: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of a symmetric matrix.

    Raises
    ------
    NotPositiveDefinite
        If any pivot is not strictly positive.
    """
    m = np.asarray(m, dtype=float)
    try:
        psi = np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    if not np.all(np.diagonal(psi, axis1=-2, axis2=-1) > 0):
        raise NotPositiveDefinite("non-positive Cholesky pivot")
    return psi


def constrained_entry(q_cols: np.ndarray, q_kk: float, j: int, k: int) -> float:
    """Value of ``q[j, k]`` that makes ``(Q Q^T)[j, k]`` vanish.

    ``q_cols`` holds (at least) the first ``k`` columns of the factor, rows
    indexed as in the full matrix. Indices are zero-based, ``0 <= k < j``.
    """
    if not 0 <= k < j:
        raise ValueError(f"need 0 <= k < j, got j={j}, k={k}")
    if k == 0:
        return 0.0
    q_cols = np.asarray(q_cols, dtype=float)
    return -float(q_cols[j, :k] @ q_cols[k, :k]) / q_kk


def pattern_of(m: np.ndarray, tol: float = 0.0) -> SparsityPattern:
    """Zero pattern of ``m``; entries with ``|m_jk| <= tol * max(diag(m))`` are off."""
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    m = np.asarray(m, dtype=float)
    scale = float(np.max(np.diag(m)))
    return SparsityPattern(np.abs(m) > tol * scale)


def is_positive_definite(m: np.ndarray) -> bool:
    try:
        cholesky(m)
    except NotPositiveDefinite:
        return False
    return True


def min_eigenvalue(m: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(np.asarray(m, dtype=float))[0])


def random_spd(p: int, rng: np.random.Generator, jitter: float = 0.5) -> np.ndarray:
    """Random well-conditioned SPD matrix, used by tests and demos."""
    a = rng.standard_normal((p, p))
    return a @ a.T / p + jitter * np.eye(p)
