import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from constraintmaps.exceptions import NonUniqueProjection, NotOnBoundary
from constraintmaps.geometry import (Ball, Ellipsoid, PlanarCurve, c_obstacle, obstacle_from_config,
                                     project_to_boundary, ray_condition_check,
                                     second_fundamental_form, signed_distance)
from constraintmaps.exceptions import ConfigError

coords = st.floats(-3, 3, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(st.lists(coords, min_size=3, max_size=3))
def test_ball_decomposition(y):
    B = Ball(0.7, 3, center=[0.1, -0.2, 0.3])
    y = np.array(y)
    P, nu, rho, unique = B.closest(y)
    if unique[0]:
        assert np.allclose(P[0] + rho[0] * nu[0], y, atol=1e-12)
        assert abs(np.linalg.norm(P[0] - B.center) - 0.7) < 1e-12


def test_ball_signs():
    B = Ball(1.0, 2)
    assert signed_distance(B, [2.0, 0.0]) == pytest.approx(1.0)
    assert signed_distance(B, [0.5, 0.0]) == pytest.approx(-0.5)


def test_projection_of_centre_not_unique():
    with pytest.raises(NonUniqueProjection):
        project_to_boundary(Ball(1.0, 2), [0.0, 0.0])


def test_sphere_second_fundamental_form():
    B = Ball(2.0, 3)
    y = np.array([0.0, 0.0, 2.0])
    xi = np.array([1.0, 2.0, 5.0])  # normal part is discarded
    A = second_fundamental_form(B, y, xi)
    assert np.allclose(A, -(1 + 4) / 2.0 * np.array([0, 0, 1.0]))


def test_sff_requires_boundary_point():
    with pytest.raises(NotOnBoundary):
        second_fundamental_form(Ball(1.0, 2), [1.5, 0.0], [0.0, 1.0])


def brute_ellipsoid_distance(E, y, k=400):
    # dense parametrisation of the ellipse boundary
    t = np.linspace(0, 2 * np.pi, 200001)
    pts = E.center + np.column_stack([E.semi_axes[0] * np.cos(t), E.semi_axes[1] * np.sin(t)])
    return np.min(np.linalg.norm(pts - y, axis=1))


@settings(max_examples=30, deadline=None)
@given(st.lists(coords, min_size=2, max_size=2))
def test_ellipse_distance_matches_dense_sampling(y):
    E = Ellipsoid([1.0, 0.5])
    y = np.array(y)
    rho = E.signed_distance(y)
    if rho > 0:
        assert rho == pytest.approx(brute_ellipsoid_distance(E, y), abs=1e-6)


def test_ellipsoid_decomposition_outside(rng):
    E = Ellipsoid([1.0, 0.6, 0.4])
    Y = rng.normal(size=(200, 3)) * 2
    P, nu, rho, unique = E.closest(Y)
    out = rho > 0
    assert np.allclose(P[out] + rho[out, None] * nu[out], Y[out], atol=1e-9)
    level = np.sum((P / E.semi_axes) ** 2, axis=1)
    assert np.allclose(level[unique], 1.0, atol=1e-9)


def test_polygon_matches_brute_force(rng):
    C = c_obstacle()
    Y = rng.uniform(-3, 3, size=(500, 2))
    P, nu, rho, unique = C.closest(Y)
    A, E = C._A, C._E
    W = Y[:, None, :] - A
    s = np.clip(np.sum(W * E, axis=2) / np.sum(E * E, axis=1), 0, 1)
    d = np.linalg.norm(W - s[..., None] * E, axis=2).min(axis=1)
    assert np.allclose(np.abs(rho), d, atol=1e-12)


def test_square_is_convex_and_signed():
    S = PlanarCurve([[0, 0], [1, 0], [1, 1], [0, 1]])
    assert S.is_convex
    assert S.signed_distance([0.5, 0.5]) == pytest.approx(-0.5)
    assert S.signed_distance([2.0, 0.5]) == pytest.approx(1.0)


def test_distance_is_one_lipschitz(rng):
    C = c_obstacle()
    Y = rng.uniform(-3, 3, size=(300, 2))
    Z = Y + rng.normal(scale=0.05, size=Y.shape)
    diff = np.abs(C.signed_distance(Y) - C.signed_distance(Z))
    assert np.all(diff <= np.linalg.norm(Y - Z, axis=1) + 1e-12)


def test_ray_condition():
    assert ray_condition_check(Ball(1.0, 2), 256)[0]
    assert ray_condition_check(Ellipsoid([1.0, 0.6, 0.4]), 256)[0]
    holds, viol = ray_condition_check(c_obstacle(), 256)
    assert not holds and len(viol) > 0


def test_obstacle_config_round_trip():
    for obs in (Ball(0.5, 2), Ellipsoid([1.0, 0.5]), c_obstacle()):
        again = obstacle_from_config(obs.to_config())
        Y = np.array([[1.3, 0.2], [-0.4, 2.0]])
        assert np.allclose(again.signed_distance(Y), obs.signed_distance(Y))
    with pytest.raises(ConfigError, match="obstacle.kind"):
        obstacle_from_config({"kind": "torus"})
