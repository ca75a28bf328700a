import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from dseg.games import PlayerLayout
from dseg.geometry import (DomainError, Geometry, bregman_entropy, project_simplex, prox_map)
from dseg.rng import make_rng

finite = st.floats(-10, 10, allow_nan=False)


def grid_projection(v, step=1e-4):
    # brute force over the 1-simplex (2 coordinates)
    a = np.arange(0, 1 + step / 2, step)
    pts = np.stack([a, 1 - a], axis=1)
    return pts[np.argmin(((pts - v) ** 2).sum(1))]


def test_projection_examples():
    assert np.allclose(project_simplex([0.2, 0.3, 0.5]), [0.2, 0.3, 0.5], atol=1e-15)
    assert np.array_equal(project_simplex([10.0, 0.0, 0.0]), [1.0, 0.0, 0.0])
    v = np.array([1.2, 0.4])
    assert np.linalg.norm(project_simplex(v) - grid_projection(v)) < 1e-3


def test_projection_rejects_nonfinite():
    with pytest.raises(DomainError):
        project_simplex([np.nan, 1.0])


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(1, 8), elements=finite))
def test_projection_feasible_idempotent(v):
    p = project_simplex(v)
    assert p.min() >= 0 and abs(p.sum() - 1) < 1e-12
    assert np.allclose(project_simplex(p), p, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6).flatmap(lambda m: st.tuples(arrays(np.float64, m, elements=finite),
                                                     arrays(np.float64, m, elements=finite))))
def test_projection_nonexpansive(pair):
    u, v = pair
    assert np.linalg.norm(project_simplex(u) - project_simplex(v)) <= np.linalg.norm(u - v) + 1e-12


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, 4, elements=finite))
def test_projection_is_nearest_point(v):
    p = project_simplex(v)
    probe = make_rng(0).dirichlet(np.ones(4), size=500)
    assert np.linalg.norm(p - v) <= np.linalg.norm(probe - v, axis=1).min() + 1e-12


def test_projection_rowwise():
    V = make_rng(3).standard_normal((5, 4))
    P = project_simplex(V)
    for v, p in zip(V, P):
        assert np.array_equal(project_simplex(v), p)


def test_geometry_constants():
    lay = PlayerLayout((3, 3, 4))
    assert Geometry.entropy(lay).omega == pytest.approx(2 * np.log(3) + np.log(4))
    assert Geometry.euclidean_simplex(lay).omega == 6.0
    assert Geometry.euclidean_simplex(lay).diameter == pytest.approx(np.sqrt(6))
    assert Geometry.unconstrained(lay, omega=2.5).omega == 2.5


@pytest.mark.parametrize("make", [Geometry.entropy, Geometry.euclidean_simplex, Geometry.unconstrained])
def test_zero_step_identity(make):
    lay = PlayerLayout((3, 2))
    z = np.array([0.2, 0.3, 0.5, 0.4, 0.6])
    assert np.allclose(prox_map(make(lay), z, np.zeros(5)), z, atol=1e-15)


def test_entropy_example():
    geo = Geometry.entropy(PlayerLayout((2,)))
    out = prox_map(geo, np.array([0.5, 0.5]), np.array([np.log(2), 0.0]))
    assert np.allclose(out, [1 / 3, 2 / 3], atol=1e-15)


def test_unconstrained_example():
    geo = Geometry.unconstrained(PlayerLayout((1, 1)))
    assert np.array_equal(prox_map(geo, np.array([1.0, 1.0]), np.array([0.5, -0.5])), [0.5, 1.5])


def test_entropy_rejects_zero():
    geo = Geometry.entropy(PlayerLayout((2,)))
    with pytest.raises(DomainError):
        prox_map(geo, np.array([1.0, 0.0]), np.zeros(2))


def test_entropy_large_steps_stay_positive():
    geo = Geometry.entropy(PlayerLayout((3, 3)))
    z = np.full(6, 1 / 3)
    xi = np.array([800.0, -800.0, 0.0, 1e4, 0.0, 0.0])
    out = prox_map(geo, z, xi)
    assert np.all(out > 0) and np.allclose(out.reshape(2, 3).sum(1), 1, atol=1e-12)


def test_euclidean_prox_is_blockwise_projection():
    lay = PlayerLayout((3, 2))
    rng = make_rng(2)
    z = np.concatenate([rng.dirichlet(np.ones(3)), rng.dirichlet(np.ones(2))])
    xi = rng.standard_normal(5)
    out = prox_map(Geometry.euclidean_simplex(lay), z, xi)
    assert np.array_equal(out[:3], project_simplex(z[:3] - xi[:3]))
    assert np.array_equal(out[3:], project_simplex(z[3:] - xi[3:]))


def test_entropy_prox_minimizes_bregman_objective():
    """<xi,u> + D(u,z) at the prox point is below every random feasible probe."""
    rng = make_rng(7)
    geo = Geometry.entropy(PlayerLayout((4,)))
    for _ in range(100):
        z = rng.dirichlet(np.ones(4))
        xi = 3 * rng.standard_normal(4)
        u = prox_map(geo, z, xi)
        assert np.all(u > 0) and abs(u.sum() - 1) < 1e-12
        f = lambda w: xi @ w + bregman_entropy(w, z)
        probes = rng.dirichlet(np.ones(4), size=200)
        assert f(u) <= min(f(p) for p in probes) + 1e-9


def test_sparse_prox_matches_dense():
    lay = PlayerLayout((3, 3, 3))
    rng = make_rng(4)
    z = rng.dirichlet(np.ones(3), size=3).ravel()
    xi = np.zeros(9)
    xi[3:6] = rng.standard_normal(3)
    for geo in (Geometry.entropy(lay), Geometry.euclidean_simplex(lay)):
        assert np.allclose(prox_map(geo, z, xi, players=(1,)), prox_map(geo, z, xi), atol=1e-15)


def test_unequal_dims():
    lay = PlayerLayout((2, 3))
    geo = Geometry.entropy(lay)
    z = np.array([0.5, 0.5, 0.2, 0.3, 0.5])
    out = prox_map(geo, z, np.array([np.log(2), 0, 0, 0, 0]))
    assert np.allclose(out[:2], [1 / 3, 2 / 3]) and np.allclose(out[2:], z[2:])
