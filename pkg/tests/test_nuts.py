import numpy as np
import pytest

from sbgraph.nuts import (
    DualAveraging,
    NutsConfig,
    find_reasonable_epsilon,
    leapfrog,
    nuts_step,
)


def gaussian_target(cov):
    prec = np.linalg.inv(cov)

    def fn(x):
        g = -prec @ x
        return 0.5 * float(x @ g), g

    return fn


def test_config_validation():
    with pytest.raises(ValueError):
        NutsConfig(delta=1.0)
    with pytest.raises(ValueError):
        NutsConfig(max_tree_depth=0)
    with pytest.raises(ValueError):
        NutsConfig(initial_step=-1.0)
    assert NutsConfig().m_adapt == 10


def test_leapfrog_is_reversible():
    fn = gaussian_target(np.array([[1.0, 0.5], [0.5, 2.0]]))
    x0 = np.array([0.3, -1.2])
    r0 = np.array([0.7, 0.1])
    _, g0 = fn(x0)
    x1, r1, _, g1 = leapfrog(x0, r0, g0, 0.1, fn)
    x2, r2, _, _ = leapfrog(x1, -r1, g1, 0.1, fn)
    assert np.allclose(x2, x0, atol=1e-14)
    assert np.allclose(-r2, r0, atol=1e-14)


def test_find_reasonable_epsilon_scales_with_target():
    rng = np.random.default_rng(0)
    wide = gaussian_target(np.eye(3) * 100.0)
    narrow = gaussian_target(np.eye(3) * 0.01)
    x = np.zeros(3)
    e_wide = find_reasonable_epsilon(x, *wide(x), wide, rng)
    e_narrow = find_reasonable_epsilon(x, *narrow(x), narrow, rng)
    assert e_wide > e_narrow > 0


def test_dual_averaging_moves_toward_target():
    da = DualAveraging(1.0, 0.8)
    # always accepting: step size should grow
    for _ in range(50):
        da.update(1.0)
    assert da.final_step_size > 1.0
    da = DualAveraging(1.0, 0.8)
    for _ in range(50):
        da.update(0.0)
    assert da.final_step_size < 1.0


def test_nuts_samples_correlated_gaussian():
    cov = np.array([[1.0, 0.8, 0.0], [0.8, 1.0, 0.3], [0.0, 0.3, 2.0]])
    fn = gaussian_target(cov)
    rng = np.random.default_rng(1)
    x = np.zeros(3)
    lp, g = fn(x)
    eps = find_reasonable_epsilon(x, lp, g, fn, rng)
    da = DualAveraging(eps, 0.8)
    draws = []
    for it in range(6000):
        step = da.step_size if it < 500 else da.final_step_size
        x, lp, g, info = nuts_step(x, lp, g, fn, step, rng)
        if it < 500:
            da.update(info.accept_stat)
        else:
            draws.append(x)
        assert not info.diverged
    draws = np.array(draws)
    assert np.allclose(draws.mean(0), 0.0, atol=0.1)
    assert np.allclose(np.cov(draws.T), cov, atol=0.12)


def test_divergence_is_reported():
    fn = gaussian_target(np.eye(2) * 1e-4)
    rng = np.random.default_rng(2)
    x = np.ones(2)
    lp, g = fn(x)
    *_, info = nuts_step(x, lp, g, fn, 5.0, rng)
    assert info.diverged
