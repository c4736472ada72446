import json

import numpy as np
import pytest

from constraintmaps.analysis import (BallScanConfig, WeightSample, ainfty_report, annulus_decay,
                                     caccioppoli_constant, coincidence_and_free_boundary,
                                     critical_scale, dist_subharmonicity, dpi_field, frequency,
                                     monotonicity_scan, rank_field)
from constraintmaps.exceptions import (ConstantOnSphere, EmptyScan, NonConvexObstacle,
                                       ZeroEnergy)
from constraintmaps.geometry import Ball, c_obstacle
from constraintmaps.grid import GridDomain, MapField
from constraintmaps.radial import closed_form_radial, equivariant_lift

from conftest import identity_field


def constant_field(domain, v=(0.3, -0.2)):
    return MapField(domain, np.tile(v, (domain.num_nodes, 1)))


def harmonic2(X):
    return np.column_stack([X[:, 0] ** 2 - X[:, 1] ** 2, 2 * X[:, 0] * X[:, 1]])


# -- coincidence and free boundary ----------------------------------------------


def test_coincidence_of_radial_oracle():
    dom = GridDomain(2, 1 / 256)
    prof = closed_form_radial(2, 0.5)
    f = MapField(dom, equivariant_lift(prof, dom.nodes))
    coin, free = coincidence_and_free_boundary(f, Ball(0.5, 2))
    disk = np.linalg.norm(dom.nodes, axis=1) <= prof.r_a
    wrong = coin ^ disk
    dist = np.abs(np.linalg.norm(dom.nodes[wrong], axis=1) - prof.r_a)
    assert dist.max(initial=0.0) <= 3 * dom.h
    assert np.all(coin[free])


def test_masks_empty_far_from_obstacle(disk64):
    f = MapField(disk64, 0.5 * disk64.nodes + 5.0)
    coin, free = coincidence_and_free_boundary(f, Ball(0.5, 2), tol=1e-3)
    assert not coin.any() and not free.any()


def test_constant_on_boundary(disk64):
    coin, free = coincidence_and_free_boundary(constant_field(disk64, (0.5, 0.0)), Ball(0.5, 2))
    assert coin.all() and not free.any()


# -- subharmonicity -----------------------------------------------------------------


def test_identity_distance_laplacian(disk128):
    f = identity_field(disk128)
    B = Ball(0.5, 2)
    far = np.linalg.norm(disk128.nodes, axis=1) >= 0.6
    v = dist_subharmonicity(f, B, region=far)
    # Laplacian of |x| - a is 1/|x|, at least 1 on the unit disk
    assert v >= 1.0 - 1e-3
    d = np.maximum(B.signed_distance(f.values), 0)
    lap = disk128.laplacian(d[:, None])[:, 0]
    X = disk128.nodes[disk128.interior]
    keep = np.linalg.norm(X, axis=1) >= 0.6
    assert np.allclose(lap[keep], 1 / np.linalg.norm(X[keep], axis=1), atol=1e-3)


def test_subharmonicity_constant_and_nonconvex(disk64):
    f = constant_field(disk64, (0.8, 0.1))
    assert dist_subharmonicity(f, Ball(0.5, 2)) == pytest.approx(0.0, abs=1e-9)
    g = MapField(disk64, disk64.nodes * 0.2 + np.array([0.0, 2.6]))
    with pytest.raises(NonConvexObstacle):
        dist_subharmonicity(g, c_obstacle())
    assert np.isfinite(dist_subharmonicity(g, c_obstacle(), allow_nonconvex=True))


# -- frequency and critical scale ---------------------------------------------------------


def test_frequency_examples(disk128):
    assert frequency(identity_field(disk128), [0, 0], 0.5) == pytest.approx(1.0, abs=1e-3)
    q = MapField.from_function(disk128, harmonic2)
    assert frequency(q, [0, 0], 0.5) == pytest.approx(2.0, abs=1e-2)
    with pytest.raises(ConstantOnSphere):
        frequency(constant_field(disk128), [0, 0], 0.5)


def test_frequency_scaling_invariance(disk128):
    lam = 0.5

    def u(X):
        return X + harmonic2(X)

    f = MapField.from_function(disk128, u)
    g = MapField.from_function(disk128, lambda X: u(lam * X))
    assert frequency(g, [0, 0], 0.8) == pytest.approx(frequency(f, [0, 0], 0.4), rel=0.02)


def test_frequency_3d():
    dom = GridDomain(3, 1 / 24)
    f = MapField(dom, dom.nodes.copy())
    assert frequency(f, [0, 0, 0], 0.6) == pytest.approx(1.0, rel=1e-2)


def test_critical_scale_examples(disk128):
    h = disk128.h
    assert critical_scale(constant_field(disk128), [0, 0], r_max=0.7) == pytest.approx(0.7)
    r = critical_scale(identity_field(disk128), [0, 0], eps0=np.sqrt(2.0), ell0=2.0)
    assert abs(r - np.sqrt(0.5 / (2 * np.pi))) <= h
    with pytest.raises(ValueError):
        critical_scale(identity_field(disk128), [0, 0], ell0=1.0)


def test_critical_scale_monotone_in_eps(disk128):
    prof = closed_form_radial(2, 0.5)
    f = MapField(disk128, equivariant_lift(prof, disk128.nodes))
    x0 = [prof.r_a, 0.0]
    rs = [critical_scale(f, x0, eps0=e, r_max=0.3) for e in (0.8, 0.4, 0.2)]
    assert rs[0] >= rs[1] >= rs[2]
    assert rs[-1] < 0.1


# -- A_infinity -----------------------------------------------------------------------------


def scan(centers, r_min, r_max, num=4):
    return BallScanConfig.geometric(centers, r_min, r_max, num)


def test_ainfty_constant_weight(disk128):
    rep = ainfty_report(WeightSample(disk128, np.ones(disk128.num_nodes)),
                        scan=scan([[0, 0], [0.2, -0.1]], 0.05, 0.3))
    assert rep["doubling_C"] == pytest.approx(4.0, rel=0.02)
    assert rep["rh_C"] == pytest.approx(1.0, rel=0.02)
    assert rep["char_C"] == pytest.approx(1.0, rel=0.02)


def test_ainfty_power_weight(disk128):
    w = np.linalg.norm(disk128.nodes, axis=1)
    rep = ainfty_report(WeightSample(disk128, w), scan=scan([[0, 0]], 0.05, 0.45))
    assert rep["doubling_C"] == pytest.approx(8.0, rel=0.02)


def test_ainfty_half_plane_is_flagged(disk128):
    w = (disk128.nodes[:, 0] > 0).astype(float)
    rep = ainfty_report(WeightSample(disk128, w), scan=scan([[0, 0]], 0.1, 0.3, 3))
    assert np.isinf(rep["char_C"])
    assert rep.entry("char_C")["flags"]["infinite"]
    doc = json.loads(rep.to_json())
    char = [m for m in doc["metrics"] if m["metric"] == "char_C"][0]
    assert char["value"] == "inf"
    assert set(char) >= {"metric", "value", "extremizer_ball", "config"}


def test_char_monotone_in_gamma(disk64, rng):
    w = np.exp(rng.normal(size=disk64.num_nodes))
    sc = scan([[0, 0], [0.1, 0.2]], 0.05, 0.3)
    ws = WeightSample(disk64, w)
    vals = [ainfty_report(ws, gamma=g, scan=sc)["char_C"] for g in (0.25, 0.5, 1.0, 2.0)]
    assert all(a <= b * (1 + 1e-12) for a, b in zip(vals, vals[1:]))


def test_empty_scan(disk64):
    with pytest.raises(EmptyScan):
        ainfty_report(WeightSample(disk64, np.ones(disk64.num_nodes)),
                      scan=scan([[0.9, 0]], 0.2, 0.3))


# -- Caccioppoli and annulus decay -----------------------------------------------------------


def test_caccioppoli_identity(disk128):
    rep = caccioppoli_constant(identity_field(disk128), scan([[0, 0]], 0.1, 0.45, 5))
    assert rep["caccioppoli_C"] == pytest.approx(1.0, rel=0.03)
    assert rep.entry("caccioppoli_C")["flags"]["valid_balls"] == 5


def test_caccioppoli_constant_skips(disk64):
    rep = caccioppoli_constant(constant_field(disk64), scan([[0, 0]], 0.1, 0.45, 3))
    flags = rep.entry("caccioppoli_C")["flags"]
    assert flags["valid_balls"] == 0 and flags["skipped_balls"] == 3


def test_annulus_identity(disk128):
    res = annulus_decay(identity_field(disk128), [0, 0], [0.05, 0.1, 0.2], unit_scale=0.4)
    ratios = dict(res.ratios)
    assert ratios[0.1] == pytest.approx(0.0525, rel=0.05)
    for d, q in res.ratios:
        assert q == pytest.approx(((1 + d) ** 2 - 1) / 4, rel=0.05)
    assert res.theta > 0
    with pytest.raises(ZeroEnergy):
        annulus_decay(constant_field(disk128), [0, 0], [0.1], unit_scale=0.4)


# -- rank and dpi ----------------------------------------------------------------------------


def test_rank_fields(disk64):
    inner = disk64.interior
    assert np.all(rank_field(identity_field(disk64))[inner] == 2)
    assert np.all(rank_field(constant_field(disk64))[inner] == 0)
    e1 = MapField.from_function(disk64, lambda X: np.column_stack([X[:, 0], 0 * X[:, 0]]))
    assert np.all(rank_field(e1)[inner] == 1)


def test_dpi_on_a_normal_ray(disk64):
    B = Ball(0.5, 2)
    f = MapField.from_function(disk64, lambda X: np.column_stack([0.6 + 0.1 * X[:, 0], 0 * X[:, 0]]))
    d = dpi_field(f, B)
    assert d.defined.any()
    assert np.nanmax(d.values) < 1e-12
    assert d.zero_fraction == 1.0


def test_dpi_speed_one_on_circle(disk64):
    a = 0.5
    B = Ball(a, 2)
    f = MapField.from_function(disk64, lambda X: a * np.column_stack([np.cos(X[:, 0] / a),
                                                                      np.sin(X[:, 0] / a)]))
    d = dpi_field(f, B)
    assert np.allclose(d.values[d.defined], 1.0, atol=1e-3)


def test_dpi_mask_matches_tube(disk64):
    a = 0.5
    B = Ball(a, 2)
    # |u| < 2a exactly on x1 > 0
    f = MapField.from_function(disk64, lambda X: np.column_stack([a * (2 - X[:, 0]), 0 * X[:, 0]]))
    d = dpi_field(f, B)
    X = disk64.nodes
    in_tube = X[:, 0] > 0
    expected = np.zeros(disk64.num_nodes, dtype=bool)
    inner = disk64.interior
    nb = disk64.neighbors[inner]
    expected[inner] = in_tube[inner] & np.all(in_tube[nb], axis=1)
    assert np.array_equal(d.defined, expected)
    assert np.all(np.isnan(d.values[~expected]))


def test_monotonicity_identity(disk64):
    out = monotonicity_scan(identity_field(disk64), [[0, 0], [0.2, 0.1]], np.linspace(0.05, 0.7, 12))
    assert out["max_violation"] == 0.0
    assert out["evaluated"] > 0
