import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from constraintmaps.exceptions import BallOutsideDomain, DeepPenetration, InfeasibleBoundaryData
from constraintmaps.geometry import Ball, c_obstacle
from constraintmaps.grid import (CachedProjector, GridDomain, MapField, _project_values,
                                 dirichlet_energy, energy_gradient, project_field, read_field_csv,
                                 scaled_energy, write_field_csv)

from conftest import identity_field


def test_identity_energy_converges(disk128):
    E = dirichlet_energy(identity_field(disk128))
    assert E == pytest.approx(2 * np.pi, rel=0.02)


def test_scaled_energy_identity(disk128):
    f = identity_field(disk128)
    # |Du|^2 = 2, so r^{2-n} int_{B_r} |Du|^2 = 2 pi r^2 in 2-D
    for r in (0.2, 0.5, 0.8):
        assert scaled_energy(f, [0, 0], r) == pytest.approx(2 * np.pi * r**2, rel=1e-2)


def test_scaled_energy_outside(disk64):
    with pytest.raises(BallOutsideDomain):
        scaled_energy(identity_field(disk64), [0.5, 0], 0.6)
    with pytest.raises(ValueError, match="2h"):
        scaled_energy(identity_field(disk64), [0, 0], disk64.h)


def test_gradient_matches_central_differences(disk64, rng):
    U = rng.normal(size=(disk64.num_nodes, 2))
    f = MapField(disk64, U)
    g = energy_gradient(f).values
    for _ in range(10):
        phi = np.zeros_like(U)
        phi[disk64.interior] = rng.normal(size=(disk64.interior.size, 2))
        for eps in (1e-3,):
            Ep = disk64.energy(U + eps * phi)
            Em = disk64.energy(U - eps * phi)
            assert (Ep - Em) / (2 * eps) == pytest.approx(np.sum(g * phi), rel=1e-8)


def test_affine_maps_are_discretely_harmonic(disk64):
    A = np.array([[1.0, 2.0], [-0.5, 3.0]])
    lap = disk64.laplacian(disk64.nodes @ A.T)
    assert np.max(np.abs(lap)) < 1e-9


def test_box_domain(rng):
    D = GridDomain(3, 0.1, shape="box", half_widths=[0.5, 0.5, 0.5])
    assert D.num_nodes == 10**3
    assert D.boundary_mask.sum() == 10**3 - 8**3


def test_infeasible_boundary_data(disk64):
    with pytest.raises(InfeasibleBoundaryData):
        MapField(disk64, 0.1 * disk64.nodes, obstacle=Ball(0.5, 2))


def test_projection_feasible(disk64, ball05):
    f = MapField(disk64, 1.0 * disk64.nodes)
    p = project_field(f, ball05)
    assert np.all(ball05.signed_distance(p.values) >= -1e-12)
    assert np.array_equal(p.values[disk64.boundary_mask], f.values[disk64.boundary_mask])


def test_deep_penetration_for_nonconvex():
    C = c_obstacle()
    with pytest.raises(DeepPenetration):
        _project_values(np.array([[0.0, -1.5]]), C)  # middle of the wall, far from both arcs


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6))
def test_cached_projector_is_exact(seed):
    rng = np.random.default_rng(seed)
    C = c_obstacle()
    X = rng.uniform(-2.8, 2.8, size=(200, 2))
    X = X[C.signed_distance(X) > 0.05]
    proj = CachedProjector(C)
    a = proj(X)
    for _ in range(3):
        X = X + rng.normal(scale=0.03, size=X.shape)
        try:
            exact = _project_values(X, C)
        except DeepPenetration:
            return
        assert np.array_equal(proj(X), exact)


def test_field_csv_round_trip(tmp_path, disk64, ball05):
    f = MapField(disk64, 1.2 * disk64.nodes + 0.01)
    p = write_field_csv(tmp_path / "f.csv", f, ball05)
    g = read_field_csv(p, disk64)
    assert np.array_equal(g.values, f.values)


def test_interpolate_linear_exact(disk64, rng):
    A = np.array([[1.0, -2.0], [0.3, 0.5]])
    U = disk64.nodes @ A.T
    P = rng.uniform(-0.5, 0.5, size=(50, 2))
    vals, valid = disk64.interpolate(U, P)
    assert valid.all()
    assert np.allclose(vals, P @ A.T, atol=1e-12)
