"""One-dimensional constraint maps: discrete geodesics around planar obstacles.

A curve ``u: [0, 1] -> R^2`` is represented by ``N`` nodes on a uniform
parameter grid. Its energy ``(N - 1) sum |u_{i+1} - u_i|^2`` is the
forward-difference version of ``int |u'|^2``; minimisers are constant speed
and their length squared equals their energy.
"""

import csv
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .exceptions import DeepPenetration, InfeasibleEndpoint
from .solver import SolverConfig, projected_descent
from .validation import check_point, check_scalar

__all__ = [
    "Polyline",
    "ProjectedImageProfile",
    "minimize_geodesic",
    "initial_curve",
    "projected_image_profile",
    "geodesic_conditions",
    "constant_run_affinity",
    "write_curve_csv",
    "GeodesicSolver",
]


@dataclass
class Polyline:
    points: np.ndarray
    energy: float = float("nan")
    converged: bool = False
    iterations: int = 0
    energy_trace: list = field(default_factory=list)
    init: str = ""
    final_projected_grad_norm: float = float("nan")

    @property
    def N(self):
        return len(self.points)

    @property
    def params(self):
        return np.linspace(0.0, 1.0, self.N)

    @property
    def length(self):
        return float(np.sum(np.linalg.norm(np.diff(self.points, axis=0), axis=1)))

    def discrete_energy(self):
        return float((self.N - 1) * np.sum(np.diff(self.points, axis=0) ** 2))

    def reversed(self):
        return Polyline(self.points[::-1].copy(), self.energy, self.converged, self.iterations,
                        list(self.energy_trace), self.init, self.final_projected_grad_norm)

    def summary(self):
        return {"N": self.N, "length": self.length, "energy": self.discrete_energy(),
                "converged": bool(self.converged), "iterations": int(self.iterations),
                "init": self.init,
                "final_projected_grad_norm": float(self.final_projected_grad_norm)}


@dataclass
class ProjectedImageProfile:
    """Projected image ``Pi o u`` of a curve and its speed.

    ``pi_points`` rows are NaN where the projection is not defined; ``dpi``
    has one entry per segment (NaN when either end is undefined).
    """

    params: np.ndarray
    pi_points: np.ndarray
    defined: np.ndarray
    dpi: np.ndarray
    dpi_tol: float
    locally_constant_runs: list

    def moving_fraction(self):
        """Parameter measure of segments with ``dpi > dpi_tol``."""
        ok = np.isfinite(self.dpi)
        return float(np.sum(self.dpi[ok] > self.dpi_tol) / len(self.dpi))

    def summary(self):
        return {"dpi_tol": self.dpi_tol,
                "locally_constant_runs": [list(map(float, r)) for r in self.locally_constant_runs],
                "moving_fraction": self.moving_fraction(),
                "defined_fraction": float(np.mean(self.defined))}


def _resample(points, N):
    """``N`` points equally spaced in arclength along a polyline."""
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    keep = np.concatenate([[True], seg > 0])
    s, points = s[keep], points[keep]
    target = np.linspace(0.0, s[-1], N)
    return np.column_stack([np.interp(target, s, points[:, k]) for k in range(points.shape[1])])


def _segments_penetrate(obstacle, pts, tol):
    mids = 0.5 * (pts[1:] + pts[:-1])
    return bool(np.any(obstacle.signed_distance(mids) < -tol))


def _detour(obstacle, p, q, N):
    """Route around the bounding circle on a side fixed by the unordered pair ``{p, q}``."""
    c = obstacle.bounding_center
    R = 1.25 * obstacle.bounding_radius
    d = q - p
    nrm = np.array([-d[1], d[0]])
    if nrm[1] < 0 or (nrm[1] == 0 and nrm[0] < 0):
        nrm = -nrm
    if not np.any(nrm):
        nrm = np.array([0.0, 1.0])
    ang = lambda v: np.arctan2(v[1], v[0])
    a0, a1, an = ang(p - c), ang(q - c), ang(nrm)
    ccw = (a1 - a0) % (2 * np.pi)
    # go counter-clockwise from p to q iff that arc contains the side direction
    if (an - a0) % (2 * np.pi) <= ccw:
        th = a0 + np.linspace(0.0, ccw, 256)
    else:
        th = a0 - np.linspace(0.0, 2 * np.pi - ccw, 256)
    rp, rq = max(np.linalg.norm(p - c), R), max(np.linalg.norm(q - c), R)
    arc = c + (np.linspace(rp, rq, th.size)[:, None]) * np.column_stack([np.cos(th), np.sin(th)])
    return _resample(np.vstack([p, arc, q]), N)


def initial_curve(obstacle, p, q, N, init="auto", waypoints=None):
    """Feasible starting polyline.

    ``init`` is ``"chord"``, ``"detour"``, ``"waypoints"`` or ``"auto"``
    (chord, falling back to the detour when the projected chord is not a
    valid curve in the complement of the obstacle).

    Returns
    -------
    points : ndarray of shape (N, 2)
    used : str
    """
    from .grid import _project_values

    if waypoints is not None and init in ("auto", "waypoints"):
        W = np.vstack([p, np.asarray(waypoints, dtype=float).reshape(-1, 2), q])
        pts = _resample(W, N)
        used = "waypoints"
    elif init in ("auto", "chord"):
        t = np.linspace(0.0, 1.0, N)[:, None]
        pts = (1 - t) * p + t * q
        used = "chord"
    elif init == "detour":
        pts, used = _detour(obstacle, p, q, N), "detour"
    else:
        raise ValueError(f"unknown init {init!r}")
    if obstacle is None:
        return pts, used
    fixed = np.zeros(N, dtype=bool)
    fixed[[0, -1]] = True
    tol = 0.25 * obstacle.tubular_radius
    try:
        out = _project_values(pts, obstacle, skip=fixed)
        if used == "chord" and init == "auto" and _segments_penetrate(obstacle, out, tol):
            raise DeepPenetration("projected chord cuts through the obstacle")
        return out, used
    except DeepPenetration:
        if init != "auto" or used == "detour":
            raise
    pts = _detour(obstacle, p, q, N)
    return _project_values(pts, obstacle, skip=fixed), "detour"


def minimize_geodesic(obstacle, p, q, N=2000, config=None, init="auto", waypoints=None,
                      continuation=True):
    """Discrete minimising geodesic from ``p`` to ``q`` avoiding ``obstacle``.

    Parameters
    ----------
    obstacle : planar obstacle or None
    p, q : array_like of shape (2,)
        Feasible endpoints.
    N : int
        Node count, at least 64.
    config : SolverConfig, optional
        ``grad_tol`` is measured in units of the second derivative ``|u''|``;
        the default 1e-4 sits above the floor (about 1e-5 for N = 2000) where
        rounding in the projection of contact nodes hides any further descent.
    init : str
        See :func:`initial_curve`.
    waypoints : array_like, optional
        Intermediate points for ``init="waypoints"`` (or ``"auto"``).
    continuation : bool
        Solve on successively doubled node counts, starting near 64, and
        interpolate each solution as the next starting curve.

    Returns
    -------
    Polyline
    """
    from .grid import CachedProjector, _project_values

    p = check_point(p, 2, "p")
    q = check_point(q, 2, "q")
    N = check_scalar(N, "N", min_val=64, integer=True)
    config = config or SolverConfig(max_iters=20000, grad_tol=1e-4, check_every=10)
    if obstacle is not None:
        for name, y in (("p", p), ("q", q)):
            r = obstacle.signed_distance(y)
            if r < -config.constraint_tol:
                raise InfeasibleEndpoint(f"{name} = {y.tolist()} lies inside the obstacle (rho = {r:.3e})")
    levels = [N]
    if continuation:
        while levels[-1] // 2 >= 64:
            levels.append(levels[-1] // 2)
    levels = levels[::-1]
    pts, used = initial_curve(obstacle, p, q, levels[0], init, waypoints)
    total_iters, trace, converged = 0, [], False
    for lev, M in enumerate(levels):
        if lev > 0:
            t_old = np.linspace(0.0, 1.0, len(pts))
            t_new = np.linspace(0.0, 1.0, M)
            pts = np.column_stack([np.interp(t_new, t_old, pts[:, k]) for k in range(2)])
        fixed = np.zeros(M, dtype=bool)
        fixed[[0, -1]] = True
        pts[0], pts[-1] = p, q
        if obstacle is not None:
            pts = _project_values(pts, obstacle, skip=fixed)
        scale = 2.0 * (M - 1)

        def hess(X, scale=scale):
            G = np.zeros_like(X)
            G[1:-1] = scale * (2 * X[1:-1] - X[:-2] - X[2:])
            return G

        if obstacle is None:
            def project(X):
                return X
        else:
            project = CachedProjector(obstacle, skip=fixed)

        E0 = float((M - 1) * np.sum(np.diff(pts, axis=0) ** 2))
        pts, tr, _, _, converged, pg = projected_descent(
            pts, hess, project, 4.0 * scale, config, E0, pg_scale=2.0 / (M - 1), fixed=fixed)
        total_iters += len(tr) - 1
        trace = tr
    curve = Polyline(pts, converged=converged, iterations=total_iters, energy_trace=trace, init=used,
                     final_projected_grad_norm=pg)
    curve.energy = curve.discrete_energy()
    return curve


def projected_image_profile(curve, obstacle, dpi_tol=None, min_run=3):
    """Projected image ``Pi o u`` along a curve and its locally constant runs.

    Parameters
    ----------
    curve : Polyline or ndarray of shape (N, 2)
    obstacle : planar obstacle
    dpi_tol : float, optional
        Zero threshold for the speed of ``Pi o u``; default ``1e-3`` times the
        curve length.
    min_run : int
        Minimum number of segments in a reported run.

    Returns
    -------
    ProjectedImageProfile
        Runs are ``(t_start, t_end)`` parameter intervals of maximal chains of
        at least ``min_run`` consecutive segments with ``dpi < dpi_tol``.
    """
    pts = curve.points if isinstance(curve, Polyline) else np.asarray(curve, dtype=float)
    N = len(pts)
    t = np.linspace(0.0, 1.0, N)
    P, _, rho, unique = obstacle._closest(pts)
    defined = unique.copy()
    pi = np.where(defined[:, None], P, np.nan)
    dpi = np.linalg.norm(np.diff(pi, axis=0), axis=1) * (N - 1)
    length = float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))
    tol = 1e-3 * length if dpi_tol is None else float(dpi_tol)
    small = np.isfinite(dpi) & (dpi < tol)
    runs = []
    i = 0
    while i < len(small):
        if small[i]:
            j = i
            while j + 1 < len(small) and small[j + 1]:
                j += 1
            if j - i + 1 >= min_run:
                runs.append((float(t[i]), float(t[j + 1])))
            i = j + 1
        else:
            i += 1
    return ProjectedImageProfile(t, pi, defined, dpi, tol, runs)


def geodesic_conditions(curve, obstacle, contact_tol=None):
    """Discrete geodesic conditions.

    Returns
    -------
    dict
        ``free_curvature``: largest ``|u''|`` at nodes off the obstacle;
        ``contact_tangential``: largest tangential part of ``u''`` at contact
        nodes; ``speed_spread``: relative spread of segment lengths.
    """
    X = curve.points
    N = len(X)
    dd = (X[2:] - 2 * X[1:-1] + X[:-2]) * (N - 1) ** 2
    rho = obstacle.signed_distance(X[1:-1]) if obstacle is not None else np.full(N - 2, np.inf)
    tol = (obstacle.tol * 1e3 if obstacle is not None else 0.0) if contact_tol is None else contact_tol
    contact = np.abs(rho) <= tol
    out = {"free_curvature": float(np.max(np.linalg.norm(dd[~contact], axis=1), initial=0.0))}
    if np.any(contact):
        _, nu, _, _ = obstacle._closest(X[1:-1][contact])
        c = dd[contact]
        tang = c - np.sum(c * nu, axis=1, keepdims=True) * nu
        out["contact_tangential"] = float(np.max(np.linalg.norm(tang, axis=1)))
    else:
        out["contact_tangential"] = 0.0
    seg = np.linalg.norm(np.diff(X, axis=0), axis=1)
    out["speed_spread"] = float((seg.max() - seg.min()) / seg.mean())
    return out


def constant_run_affinity(curve, obstacle, profile):
    """Largest deviation of ``rho(u)`` from an affine function of ``t`` on each constant run."""
    X = curve.points if isinstance(curve, Polyline) else np.asarray(curve)
    t = profile.params
    rho = obstacle.signed_distance(X)
    out = []
    for t0, t1 in profile.locally_constant_runs:
        m = (t >= t0 - 1e-15) & (t <= t1 + 1e-15)
        coef = np.polyfit(t[m], rho[m], 1)
        out.append(float(np.max(np.abs(np.polyval(coef, t[m]) - rho[m]))))
    return out


def write_curve_csv(path, curve, obstacle=None, profile=None):
    """Rows ``t,x,y,rho,dpi``; segment speeds are stored on the starting node."""
    X = curve.points
    N = len(X)
    rho = obstacle.signed_distance(X) if obstacle is not None else np.full(N, np.nan)
    dpi = np.full(N, np.nan)
    if profile is not None:
        dpi[:-1] = profile.dpi
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "y", "rho", "dpi"])
        for row in zip(np.linspace(0.0, 1.0, N), X[:, 0], X[:, 1], rho, dpi):
            w.writerow([repr(float(v)) for v in row])
    return path


class GeodesicSolver(BaseEstimator):
    """Estimator wrapper: ``fit(p, q)`` computes the geodesic, ``predict(t)`` evaluates it."""

    def __init__(self, obstacle=None, N=2000, init="auto", waypoints=None, max_iters=20000,
                 grad_tol=1e-4):
        self.obstacle = obstacle
        self.N = N
        self.init = init
        self.waypoints = waypoints
        self.max_iters = max_iters
        self.grad_tol = grad_tol

    def fit(self, p, q):
        cfg = SolverConfig(max_iters=self.max_iters, grad_tol=self.grad_tol, check_every=10)
        self.curve_ = minimize_geodesic(self.obstacle, p, q, self.N, cfg, self.init, self.waypoints)
        self.length_ = self.curve_.length
        return self

    def predict(self, t):
        t = np.asarray(t, dtype=float).ravel()
        grid = self.curve_.params
        return np.column_stack([np.interp(t, grid, self.curve_.points[:, k]) for k in range(2)])
