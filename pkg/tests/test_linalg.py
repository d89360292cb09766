import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sbgraph.errors import NotPositiveDefinite
from sbgraph.linalg import (
    SparsityPattern,
    chol_product,
    cholesky,
    constrained_entry,
    is_positive_definite,
    min_eigenvalue,
    pattern_of,
    random_spd,
)


def test_pattern_invariants():
    z = SparsityPattern.band(5, 2)
    assert np.array_equal(z.z, z.z.T)
    assert z.z.diagonal().all()
    # column k has min(2, p-1-k) free sub-diagonal rows
    assert z.col_counts.tolist() == [2, 2, 2, 1, 0]
    assert z.edge_count == 7
    assert z.free_rows(0).tolist() == [1, 2]
    assert z.constrained_rows(0).tolist() == [3, 4]


def test_pattern_reads_lower_triangle_and_forces_diagonal():
    m = np.zeros((3, 3), dtype=bool)
    m[2, 0] = True
    m[0, 1] = True  # upper entry is ignored
    z = SparsityPattern(m)
    assert z.z[0, 2] and z.z[2, 0]
    assert not z.z[1, 0] and not z.z[0, 1]
    assert z.z.diagonal().all()


def test_pattern_is_read_only_and_with_edge_copies():
    z = SparsityPattern.identity(3)
    with pytest.raises(ValueError):
        z.z[1, 0] = True
    z2 = z.with_edge(0, 2, True)
    assert z2.edge_count == 1 and z.edge_count == 0
    assert z2 == SparsityPattern.from_lower_flags(3, z2.lower_flags())
    assert hash(z2) == hash(z2.with_edge(2, 0, True))


def test_chol_product_examples():
    assert np.array_equal(chol_product(np.eye(3)), np.eye(3))
    lam = chol_product(np.array([[1.0, 0.0], [0.5, 1.0]]))
    assert np.allclose(lam, [[1.0, 0.5], [0.5, 1.25]], rtol=0, atol=1e-15)
    assert np.array_equal(chol_product(np.diag([2.0, 1.0, 3.0])), np.diag([4.0, 1.0, 9.0]))


def test_chol_product_is_exactly_symmetric_and_batched():
    rng = np.random.default_rng(0)
    q = np.tril(rng.standard_normal((7, 6, 6)))
    lam = chol_product(q)
    assert lam.shape == (7, 6, 6)
    assert np.array_equal(lam, np.swapaxes(lam, 1, 2))
    assert np.allclose(lam[3], q[3] @ q[3].T)


def test_cholesky_examples():
    assert np.array_equal(cholesky(np.eye(3)), np.eye(3))
    assert np.allclose(cholesky(np.array([[4.0, 2.0], [2.0, 2.0]])), [[2.0, 0.0], [1.0, 1.0]])
    with pytest.raises(NotPositiveDefinite):
        cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))


@pytest.mark.parametrize("p", [1, 5, 50, 200])
def test_cholesky_reconstructs(p):
    m = random_spd(p, np.random.default_rng(p))
    lam = chol_product(cholesky(m))
    assert np.linalg.norm(lam - m) / np.linalg.norm(m) < 1e-12


def test_constrained_entry_examples():
    q = np.zeros((3, 3))
    q[0, 0], q[1, 0], q[2, 0], q[1, 1] = 1.0, 0.5, 0.3, 1.0
    assert constrained_entry(q, 1.0, 2, 0) == 0.0
    val = constrained_entry(q, q[1, 1], 2, 1)
    assert val == pytest.approx(-0.15, abs=1e-15)
    q[2, 1] = val
    q[2, 2] = 1.0
    lam = chol_product(q)
    assert abs(lam[2, 1]) < 1e-15
    # the forced zero is reported by pattern_of
    assert not pattern_of(lam, 1e-12).z[2, 1]
    # no earlier correlation: forced value is zero
    q2 = np.eye(3)
    assert constrained_entry(q2, 1.0, 2, 1) == 0.0


def test_pattern_of_examples():
    assert pattern_of(np.diag([1.0, 2.0, 3.0]), 1e-10) == SparsityPattern.identity(3)
    dense = np.full((3, 3), 0.1) + np.eye(3)
    assert pattern_of(dense, 0.0) == SparsityPattern.full(3)


@settings(max_examples=50, deadline=None)
@given(p=st.integers(2, 12), seed=st.integers(0, 2**32 - 1))
def test_forced_entries_cancel(p, seed):
    rng = np.random.default_rng(seed)
    z = SparsityPattern.from_lower_flags(p, rng.random(p * (p - 1) // 2) < 0.5)
    q = np.tril(rng.standard_normal((p, p)), -1)
    q[np.diag_indices(p)] = rng.uniform(0.2, 2.0, p)
    for k in range(p - 1):
        for j in range(k + 1, p):
            if not z.z[j, k]:
                q[j, k] = constrained_entry(q, q[k, k], j, k)
    lam = chol_product(q)
    eps = np.finfo(float).eps
    for j, k in zip(*np.nonzero(np.tril(~z.z, -1))):
        bound = 64 * eps * p * np.max(np.abs(q[j, : k + 1] * q[k, : k + 1]))
        assert abs(lam[j, k]) <= bound
    # forced entries can make lam badly conditioned; pivots are the robust check
    assert is_positive_definite(lam)


def test_min_eigenvalue_positive_for_positive_diagonal():
    rng = np.random.default_rng(3)
    for _ in range(20):
        q = np.tril(0.3 * rng.standard_normal((8, 8)), -1) + np.diag(rng.uniform(1e-8, 1.0, 8))
        assert min_eigenvalue(chol_product(q)) > 0
