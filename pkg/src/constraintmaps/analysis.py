"""Diagnostics for discrete constraint maps.

Ball integrals use the same clipped cell quadrature as
:func:`constraintmaps.grid.scaled_energy`: node samples carry the volume of
their cube of side ``h`` inside the ball, edge terms the volume of the cube
centred at the edge midpoint.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import (BallOutsideDomain, ConstantOnSphere, EmptyScan, NonConvexObstacle,
                         ZeroEnergy)
from .validation import check_point, check_points, check_scalar

__all__ = [
    "WeightSample",
    "BallScanConfig",
    "DiagnosticsReport",
    "coincidence_and_free_boundary",
    "dist_subharmonicity",
    "ball_energy",
    "frequency",
    "critical_scale",
    "ainfty_report",
    "caccioppoli_constant",
    "annulus_decay",
    "rank_field",
    "dpi_field",
    "monotonicity_scan",
    "gradient_magnitude",
]


# -- containers ----------------------------------------------------------------


@dataclass
class WeightSample:
    """Nonnegative node weights ``w`` on a grid domain."""

    domain: object
    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float).ravel()
        if w.shape[0] != self.domain.num_nodes:
            raise ValueError("one weight per node is required")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("weights must be finite and nonnegative")
        self.w = w


@dataclass
class BallScanConfig:
    """Balls ``B_r(c)`` for every centre and radius; the dilation factor is 2.

    Balls whose double is not inside the scan region are dropped. The
    region is the domain shape unless ``region_center``/``region_radius``
    describe a smaller ball.
    """

    centers: np.ndarray
    radii: np.ndarray
    dilation: float = 2.0
    region_center: object = None
    region_radius: float = None

    @classmethod
    def geometric(cls, centers, r_min, r_max, num, **kwargs):
        return cls(np.atleast_2d(np.asarray(centers, dtype=float)),
                   np.geomspace(r_min, r_max, int(num)), **kwargs)

    def balls(self, domain):
        C = check_points(self.centers, domain.n, "centers")
        out = []
        for c in C:
            for r in np.asarray(self.radii, dtype=float):
                R = self.dilation * r
                if self.region_radius is not None:
                    rc = np.zeros(domain.n) if self.region_center is None else np.asarray(self.region_center, float)
                    ok = np.linalg.norm(c - rc) + R <= self.region_radius * (1 + 1e-12)
                else:
                    ok = domain.contains_ball(c, R)
                if ok and r >= domain.h:
                    out.append((c, float(r)))
        if not out:
            raise EmptyScan("no scanned ball satisfies 2B inside the scan region")
        return out

    def to_dict(self):
        return {"centers": np.asarray(self.centers).tolist(), "radii": np.asarray(self.radii).tolist(),
                "dilation": self.dilation, "region_center": None if self.region_center is None
                else list(map(float, self.region_center)), "region_radius": self.region_radius}


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return v


@dataclass
class DiagnosticsReport:
    """Named metrics with the balls that attained them and the producing config.

    Each entry of ``metrics`` is ``{"metric", "value", "extremizer_ball",
    "flags"}``; non-finite values serialise as strings.
    """

    metrics: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)

    def add(self, name, value, extremizer=None, **flags):
        ball = None if extremizer is None else {"center": list(map(float, extremizer[0])),
                                                "r": float(extremizer[1])}
        self.metrics.append({"metric": name, "value": value, "extremizer_ball": ball,
                             "flags": flags})

    def __getitem__(self, name):
        for m in self.metrics:
            if m["metric"] == name:
                return m["value"]
        raise KeyError(name)

    def entry(self, name):
        for m in self.metrics:
            if m["metric"] == name:
                return m
        raise KeyError(name)

    def to_dict(self):
        return _jsonable({"metrics": [dict(m, config=self.config) for m in self.metrics],
                          "grid": self.grid})

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


# -- helpers -------------------------------------------------------------------


def _node_mass(domain, x0, r):
    return domain.node_weights(x0, r)


def ball_energy(field, x0, r):
    """``int_{B_r(x0)} |Du|^2`` with clipped edge cells."""
    dom = field.domain
    x0 = check_point(x0, dom.n, "x0")
    if not dom.contains_ball(x0, r):
        raise BallOutsideDomain(f"B_{r}({x0.tolist()}) is not inside the domain")
    return dom.energy(field.values, dom.edge_weights(x0, r))


def gradient_magnitude(field):
    """``|Du|`` at nodes from central differences (one-sided on boundary nodes)."""
    dom = field.domain
    U = field.values
    nb = dom.neighbors
    h = dom.h
    acc = np.zeros(dom.num_nodes)
    for d in range(dom.n):
        fwd, bwd = nb[:, 2 * d], nb[:, 2 * d + 1]
        up = np.where(fwd[:, None] >= 0, U[np.maximum(fwd, 0)], U)
        dn = np.where(bwd[:, None] >= 0, U[np.maximum(bwd, 0)], U)
        span = ((fwd >= 0).astype(float) + (bwd >= 0)) * h
        span[span == 0] = np.inf
        acc += np.sum(((up - dn) / span[:, None]) ** 2, axis=1)
    return np.sqrt(acc)


# -- free boundary and subharmonicity -------------------------------------------


def coincidence_and_free_boundary(field, obstacle, tol=None):
    """Coincidence nodes ``|rho(u)| <= tol`` and those with a non-coincidence neighbour."""
    tol = obstacle.tol if tol is None else tol
    rho = obstacle.signed_distance(field.values)
    coin = np.abs(rho) <= tol
    nb = field.domain.neighbors
    exists = nb >= 0
    nb_coin = np.where(exists, coin[np.maximum(nb, 0)], True)
    free = coin & ~np.all(nb_coin, axis=1)
    return coin, free


def dist_subharmonicity(field, obstacle, region=None, allow_nonconvex=False):
    """Smallest discrete Laplacian of ``max(rho(u), 0)`` over interior nodes.

    Parameters
    ----------
    region : ndarray of bool, optional
        Restrict the minimum to these nodes.
    allow_nonconvex : bool
        Compute for non-convex obstacles too (informational only).
    """
    if not getattr(obstacle, "is_convex", False) and not allow_nonconvex:
        raise NonConvexObstacle("subharmonicity of the distance is only asserted for convex obstacles")
    dom = field.domain
    d = np.maximum(obstacle.signed_distance(field.values), 0.0)
    lap = dom.laplacian(d[:, None])[:, 0]
    if region is not None:
        keep = np.asarray(region, dtype=bool)[dom.interior]
        lap = lap[keep]
    if lap.size == 0:
        raise EmptyScan("no interior nodes in the region")
    return float(lap.min())


# -- frequency and critical scale -----------------------------------------------


def _sphere_quadrature(n, x0, r, h, resolution=None):
    """Points and weights for ``int_{dB_r(x0)}``."""
    if n == 1:
        return np.array([[x0[0] - r], [x0[0] + r]]), np.ones(2)
    if n == 2:
        M = resolution or max(64, int(np.ceil(8 * np.pi * r / h)))
        th = 2 * np.pi * (np.arange(M) + 0.5) / M
        P = x0 + r * np.column_stack([np.cos(th), np.sin(th)])
        return P, np.full(M, 2 * np.pi * r / M)
    M = resolution or max(16, int(np.ceil(4 * np.pi * r / h)))
    z, wz = np.polynomial.legendre.leggauss(M)
    K = 2 * M
    ph = 2 * np.pi * (np.arange(K) + 0.5) / K
    Z, PH = np.meshgrid(z, ph, indexing="ij")
    s = np.sqrt(1 - Z**2)
    P = x0 + r * np.column_stack([(s * np.cos(PH)).ravel(), (s * np.sin(PH)).ravel(), Z.ravel()])
    W = (np.repeat(wz, K) * (2 * np.pi / K)) * r**2
    return P, W


def frequency(field, x0, r, resolution=None):
    """Almgren-type frequency ``r int_{B_r}|Du|^2 / int_{dB_r}|u - mean|^2``.

    The mean is the spherical mean; sphere values come from multilinear
    interpolation on a latitude-longitude (Gauss-Legendre) sampling.
    """
    dom = field.domain
    x0 = check_point(x0, dom.n, "x0")
    num = r * ball_energy(field, x0, r)
    P, W = _sphere_quadrature(dom.n, x0, r, dom.h, resolution)
    vals, valid = dom.interpolate(field.values, P)
    if not np.all(valid):
        raise BallOutsideDomain("sphere samples fall outside the lattice")
    mean = (W @ vals) / W.sum()
    den = float(W @ np.sum((vals - mean) ** 2, axis=1))
    scale = W.sum() * max(1.0, float(np.mean(np.sum(vals**2, axis=1))))
    if den <= 1e-14 * scale:
        raise ConstantOnSphere(f"u is constant on the sphere of radius {r}")
    return float(num / den)


def critical_scale(field, x0, eps0=0.3, ell0=2.0, r_max=None, radii=None):
    """Largest grid radius with ``E(u, x0, r) <= eps0^2 / ell0^2``.

    The radius grid runs from ``2h`` to ``r_max`` with spacing at most ``h``.
    When even the smallest radius exceeds the threshold it is returned as
    the grid proxy for a vanishing scale.
    """
    from .grid import scaled_energy

    dom = field.domain
    check_scalar(ell0, "ell0", min_val=2.0)
    x0 = check_point(x0, dom.n, "x0")
    bound = dom.distance_to_boundary(x0)
    r_max = bound if r_max is None else min(r_max, bound)
    if radii is None:
        m = max(2, int(np.ceil((r_max - 2 * dom.h) / dom.h)) + 1)
        radii = np.linspace(2 * dom.h, r_max, m)
    thr = eps0**2 / ell0**2
    E = np.array([scaled_energy(field, x0, r) for r in radii])
    ok = np.flatnonzero(E <= thr)
    if ok.size == 0:
        return float(radii[0])
    return float(min(radii[ok[-1]], r_max))


# -- A_infinity scans ------------------------------------------------------------


def ainfty_report(weight, eps=0.5, gamma=1.0, scan=None, zero_tol=0.0):
    """Doubling, weak reverse Hoelder and mean characterisation constants.

    For every scanned ball ``B``:

    * ``doubling_C``: ``int_{2B} w / int_B w``;
    * ``rh_C``: ``(avg_B w^(1+eps))^(1/(1+eps)) / avg_{2B} w``;
    * ``char_C``: ``(avg_B w) (avg_B w^(-gamma))^(1/gamma)``, the ratio of the
      arithmetic mean to the negative power mean of order ``gamma``.

    Each metric is the maximum over balls. Balls with no mass, or with
    ``w <= zero_tol`` on a positive fraction of the ball for ``char_C``, give
    ``inf`` and set the ``infinite`` flag.
    """
    check_scalar(eps, "eps", min_val=0.0, include_min=False)
    check_scalar(gamma, "gamma", min_val=0.0, include_min=False)
    dom = weight.domain
    if scan is None:
        raise EmptyScan("a ball scan is required")
    balls = scan.balls(dom)
    w = weight.w
    best = {"doubling_C": (-np.inf, None), "rh_C": (-np.inf, None), "char_C": (-np.inf, None)}
    for c, r in balls:
        m1 = _node_mass(dom, c, r)
        m2 = _node_mass(dom, c, scan.dilation * r)
        v1, v2 = m1.sum(), m2.sum()
        I1, I2 = m1 @ w, m2 @ w
        dbl = I2 / I1 if I1 > 0 else np.inf
        rh = ((m1 @ w ** (1 + eps)) / v1) ** (1 / (1 + eps)) / (I2 / v2) if I2 > 0 else np.inf
        inside = m1 > 0
        if np.any(w[inside] <= zero_tol):
            ch = np.inf
        else:
            neg = (m1[inside] @ w[inside] ** (-gamma)) / v1
            ch = (I1 / v1) * neg ** (1 / gamma)
        for name, val in (("doubling_C", dbl), ("rh_C", rh), ("char_C", ch)):
            if val > best[name][0]:
                best[name] = (val, (c, r))
    rep = DiagnosticsReport(config={"eps": eps, "gamma": gamma, "zero_tol": zero_tol,
                                    "scan": scan.to_dict(), "num_balls": len(balls)},
                            grid=dom.describe())
    for name, (val, ball) in best.items():
        rep.add(name, float(val), ball, infinite=bool(np.isinf(val)))
    return rep


def caccioppoli_constant(field, scan, floor=1e-14):
    """Largest ``int_{B_{r/2}}|Du|^2 / (r^-2 int_{B_r}|u - u_{x0,r}|^2)`` over the scan.

    ``u_{x0,r}`` is the ball mean. Balls whose right side is below
    ``floor`` times ``|B_r| max(1, avg |u|^2)`` are skipped and counted.
    """
    dom = field.domain
    balls = scan.balls(dom)
    U = field.values
    best, arg, valid, skipped = -np.inf, None, 0, 0
    for c, r in balls:
        m = _node_mass(dom, c, r)
        vol = m.sum()
        mean = (m @ U) / vol
        rhs = r**-2 * float(m @ np.sum((U - mean) ** 2, axis=1))
        scale = vol * max(1.0, float((m @ np.sum(U**2, axis=1)) / vol))
        if rhs <= floor * scale:
            skipped += 1
            continue
        lhs = dom.energy(U, dom.edge_weights(c, 0.5 * r))
        valid += 1
        if lhs / rhs > best:
            best, arg = lhs / rhs, (c, r)
    rep = DiagnosticsReport(config={"scan": scan.to_dict(), "floor": floor}, grid=dom.describe())
    rep.add("caccioppoli_C", float(best) if valid else float("nan"), arg,
            valid_balls=valid, skipped_balls=skipped)
    return rep


@dataclass
class AnnulusDecay:
    ratios: list
    theta: float
    config: dict

    def to_dict(self):
        return _jsonable({"ratios": self.ratios, "theta": self.theta, "config": self.config})


def annulus_decay(field, x0, deltas, unit_scale=None):
    """Energy in ``B_{(1+delta)s} minus B_s`` relative to ``B_{2s}``, and the log-log slope.

    Parameters
    ----------
    unit_scale : float, optional
        The radius ``s`` playing the role of the unit ball; default the
        largest ``s`` with ``B_{2s}(x0)`` inside the domain.
    """
    dom = field.domain
    x0 = check_point(x0, dom.n, "x0")
    deltas = np.asarray(deltas, dtype=float).ravel()
    if deltas.size == 0 or np.any(deltas <= 0):
        raise ValueError("deltas must be positive")
    s = 0.5 * dom.distance_to_boundary(x0) if unit_scale is None else float(unit_scale)
    big = max(2.0, 1.0 + deltas.max()) * s
    if not dom.contains_ball(x0, big):
        raise BallOutsideDomain(f"B_{big}({x0.tolist()}) is not inside the domain")
    E2 = ball_energy(field, x0, 2 * s)
    if E2 <= 0:
        raise ZeroEnergy("the field has no energy in the double ball")
    E1 = ball_energy(field, x0, s)
    ratios = [(float(d), float((ball_energy(field, x0, (1 + d) * s) - E1) / E2)) for d in deltas]
    R = np.array([q for _, q in ratios])
    theta = float("nan")
    if deltas.size >= 2 and np.all(R > 0):
        theta = float(np.polyfit(np.log(deltas), np.log(R), 1)[0])
    return AnnulusDecay(ratios, theta, {"x0": x0.tolist(), "unit_scale": s,
                                        "deltas": deltas.tolist()})


# -- rank and projected image -----------------------------------------------------


def rank_field(field, sv_tol=1e-8):
    """Numerical rank of the central-difference Jacobian at interior nodes (-1 elsewhere)."""
    dom = field.domain
    J = dom.central_jacobian(field.values)
    sv = np.linalg.svd(J, compute_uv=False)
    floor = np.finfo(float).tiny
    cut = sv_tol * (sv[:, :1] + floor)
    out = np.full(dom.num_nodes, -1, dtype=int)
    out[dom.interior] = np.sum(sv > cut, axis=1)
    return out


@dataclass
class DpiField:
    values: np.ndarray
    defined: np.ndarray
    tol: float

    @property
    def zero_fraction(self):
        """Fraction of defined nodes with ``|D(Pi o u)| < tol``."""
        d = self.defined
        return float(np.mean(self.values[d] < self.tol)) if np.any(d) else float("nan")

    def summary(self):
        return {"tol": self.tol, "defined_nodes": int(self.defined.sum()),
                "zero_fraction": self.zero_fraction}


def dpi_field(field, obstacle, tol=1e-6):
    """``|D(Pi o u)|`` by central differences of the projected values.

    Defined at interior nodes whose value and axis-neighbour values all lie
    in the tubular neighbourhood ``|rho| < tubular_radius``; NaN elsewhere.
    """
    dom = field.domain
    U = field.values
    P, _, rho, unique = obstacle._closest(U)
    in_tube = unique & (np.abs(rho) < obstacle.tubular_radius)
    inner = dom.interior
    nb = dom._nbr_int
    ok = in_tube[inner] & np.all(in_tube[nb], axis=1)
    out = np.full(dom.num_nodes, np.nan)
    J = dom.central_jacobian(P)
    vals = np.sqrt(np.sum(J**2, axis=(1, 2)))
    out[inner[ok]] = vals[ok]
    defined = np.zeros(dom.num_nodes, dtype=bool)
    defined[inner[ok]] = True
    return DpiField(out, defined, tol)


# -- monotonicity of the scaled energy ------------------------------------------------


def monotonicity_scan(field, centers, radii):
    """Largest decrease of ``E(u, x0, r)`` between consecutive radii.

    Returns
    -------
    dict
        ``max_violation`` (0 if monotone), the centre and radius where it
        occurs, and the number of (centre, radius) pairs evaluated.
    """
    from .grid import scaled_energy

    dom = field.domain
    worst, where, count = 0.0, None, 0
    radii = np.sort(np.asarray(radii, dtype=float))
    for c in check_points(centers, dom.n):
        rs = [r for r in radii if r >= 2 * dom.h and dom.contains_ball(c, r)]
        E = [scaled_energy(field, c, r) for r in rs]
        count += len(E)
        for k in range(len(E) - 1):
            drop = E[k] - E[k + 1]
            if drop > worst:
                worst, where = drop, (c.tolist(), float(rs[k]))
    return {"max_violation": float(worst), "where": where, "evaluated": count}
