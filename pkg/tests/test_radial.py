import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from constraintmaps.exceptions import DivergentIntegrand, InvalidDimension
from constraintmaps.radial import (RadialObstacleSolver, closed_form_parameters,
                                   closed_form_radial, ellipsoid_lambda_min, equivariant_lift,
                                   gradient_identity_check, hardy_check, radial_minimize,
                                   write_profile)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 12), st.floats(0.02, 0.98))
def test_free_boundary_polynomial(n, a):
    ra, ta = closed_form_parameters(n, a)
    assert a / n <= ra < 1
    assert abs(a * ra**n - n * ra + a * (n - 1)) <= 1e-12
    assert ta == pytest.approx(a * (n - 1) / (n * ra), rel=1e-12)


def test_profile_is_continuous_and_c1():
    p = closed_form_radial(5, 0.4)
    eps = 1e-7
    left, right = p.evaluate(np.array([p.r_a - eps, p.r_a + eps]))
    assert abs(right - left) < 1e-6
    assert abs(p.derivative(np.array([p.r_a + 1e-12]))[0]) < 1e-9
    assert p.evaluate(np.array([1.0]))[0] == 1.0


def test_degenerate_small_obstacle():
    p = radial_minimize(3, 0.01, spacing=1e-3)
    assert p.r_a < 0.02
    r = p.r_nodes[p.r_nodes >= 0.1]
    assert np.max(np.abs(p.evaluate(r) - r)) <= 1e-2


def test_numeric_n7():
    p = radial_minimize(7, 0.5, spacing=1e-3)
    ref = closed_form_radial(7, 0.5)
    assert np.max(np.abs(p.w - ref.evaluate(p.r_nodes))) <= 5e-3
    assert abs(p.r_a - ref.r_a) <= 5e-3


def test_gradient_identity_exact_on_closed_form():
    for n in (3, 7):
        assert gradient_identity_check(closed_form_radial(n, 0.5)) < 1e-12


def test_hardy_linear_and_errors():
    lhs, rhs = hardy_check(7, lambda r: 1 - r)
    assert lhs / rhs == pytest.approx(5 / 12, abs=1e-3)
    with pytest.raises(DivergentIntegrand):
        hardy_check(2, lambda r: 1 - r)
    with pytest.raises(ValueError):
        hardy_check(5, lambda r: 2 - r)


def test_hardy_random(rng):
    r = np.linspace(0, 1, 2001)
    for _ in range(10):
        knots = np.concatenate([[0], np.sort(rng.uniform(0, 1, 6)), [1]])
        vals = rng.normal(size=knots.size)
        vals[-1] = 0
        lhs, rhs = hardy_check(4, np.interp(r, knots, vals), r)
        assert lhs <= rhs


def test_ellipsoid_threshold():
    assert ellipsoid_lambda_min(7) == pytest.approx(0.97980, abs=1e-5)
    with pytest.raises(InvalidDimension):
        ellipsoid_lambda_min(2)


def test_lift_and_io(tmp_path):
    p = closed_form_radial(3, 0.5)
    X = np.array([[0.0, 0.0, 0.0], [0.0, 0.9, 0.0]])
    U = equivariant_lift(p, X)
    assert np.allclose(U[0], [0.5, 0, 0])
    assert np.allclose(np.linalg.norm(U[1]), p.evaluate(np.array([0.9]))[0])
    csv, side = write_profile(str(tmp_path / "p.csv"), p)
    data = np.loadtxt(csv, delimiter=",", skiprows=1)
    assert np.allclose(data[:, 1], p.w)


def test_estimator():
    est = RadialObstacleSolver(n=3, a=0.5, method="closed_form").fit()
    assert est.r_a_ == pytest.approx(closed_form_parameters(3, 0.5)[0])
    assert est.predict([0.1])[0] == pytest.approx(0.5)
    assert est.get_params() == {"n": 3, "a": 0.5, "spacing": 1e-3, "method": "closed_form"}
