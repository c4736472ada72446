"""Obstacles in the target space and their boundary geometry.

Every obstacle exposes the signed distance ``rho`` (positive in the admissible
region, negative inside the obstacle), the nearest point projection onto the
boundary together with the unit normal pointing away from the obstacle, and
the normal-valued second fundamental form of the boundary.

The array methods (``signed_distance``, ``closest``) are vectorised over the
leading axis; the module level functions operate on single points and raise
on degenerate input.
"""

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist

from .exceptions import NonUniqueProjection, NotOnBoundary
from .validation import check_point, check_points, check_scalar

__all__ = [
    "Ball",
    "Ellipsoid",
    "PlanarCurve",
    "c_obstacle",
    "obstacle_from_config",
    "signed_distance",
    "project_to_boundary",
    "second_fundamental_form",
    "ray_condition_check",
]


class _Obstacle:
    """Shared behaviour; subclasses implement ``_closest`` and ``_sff``."""

    kind = None
    is_convex = True

    def signed_distance(self, Y):
        Y = np.asarray(Y, dtype=float)
        single = Y.ndim == 1
        rho = self._signed_distance(np.atleast_2d(Y))
        return float(rho[0]) if single else rho

    def closest(self, Y):
        """Nearest boundary points for a batch of points.

        Returns
        -------
        P : ndarray of shape (k, m)
            Nearest points on the boundary.
        nu : ndarray of shape (k, m)
            Unit normals at ``P`` pointing away from the obstacle, chosen so
            that ``Y = P + rho * nu``.
        rho : ndarray of shape (k,)
            Signed distances.
        unique : ndarray of bool, shape (k,)
            False where the projection is not single valued (medial axis or
            deeper than ``tubular_radius`` inside a non-convex region).
        """
        Y = check_points(Y, self.dim)
        return self._closest(Y)

    def in_tubular_neighborhood(self, Y):
        rho = self.signed_distance(np.atleast_2d(Y))
        return np.abs(rho) < self.tubular_radius

    def second_fundamental_form(self, P, Xi, nu=None):
        """Vectorised ``A_P(xi, xi)`` for boundary points ``P`` (no checks)."""
        P = np.atleast_2d(np.asarray(P, dtype=float))
        Xi = np.atleast_2d(np.asarray(Xi, dtype=float))
        if nu is None:
            _, nu, _, _ = self._closest(P)
        xi_t = Xi - np.sum(Xi * nu, axis=1, keepdims=True) * nu
        return self._sff(P, nu, xi_t)

    def sample_boundary(self, k):
        """``k`` boundary points and their normals."""
        raise NotImplementedError

    def to_config(self):
        raise NotImplementedError

    def __repr__(self):
        params = ", ".join(f"{k}={v!r}" for k, v in self.to_config().items() if k != "kind")
        return f"{type(self).__name__}({params})"


class Ball(_Obstacle):
    """Closed ball ``{|y - center| <= radius}`` in R^m."""

    kind = "ball"
    cheap_distance = True

    def __init__(self, radius, dim=2, center=None):
        self.radius = check_scalar(radius, "radius", min_val=0.0, include_min=False)
        self.dim = check_scalar(dim, "dim", min_val=1, integer=True)
        if center is None:
            center = np.zeros(self.dim)
        self.center = check_point(center, self.dim, "center")
        self.center.setflags(write=False)
        self.tubular_radius = self.radius
        self.diameter = 2.0 * self.radius
        self.bounding_center = self.center
        self.bounding_radius = self.radius
        self.tol = 1e-9 * self.radius

    def _signed_distance(self, Y):
        return np.linalg.norm(Y - self.center, axis=1) - self.radius

    def _closest(self, Y):
        D = Y - self.center
        r = np.linalg.norm(D, axis=1)
        unique = r > 1e-12 * self.radius
        safe = np.where(unique, r, 1.0)
        nu = D / safe[:, None]
        nu[~unique] = 0.0
        nu[~unique, 0] = 1.0
        P = self.center + self.radius * nu
        return P, nu, r - self.radius, unique

    def _sff(self, P, nu, xi_t):
        return -(np.sum(xi_t**2, axis=1) / self.radius)[:, None] * nu

    def sample_boundary(self, k):
        u = _sphere_samples(self.dim, k)
        return self.center + self.radius * u, u

    def to_config(self):
        return {"kind": "ball", "radius": self.radius, "dim": self.dim,
                "center": self.center.tolist()}


class Ellipsoid(_Obstacle):
    """Axis aligned ellipsoid ``{sum((y_i - c_i)^2 / s_i^2) <= 1}``."""

    kind = "ellipsoid"

    def __init__(self, semi_axes, center=None):
        s = check_point(semi_axes, name="semi_axes")
        if np.any(s <= 0):
            raise ValueError("semi_axes must be positive")
        self.semi_axes = s
        self.semi_axes.setflags(write=False)
        self.dim = s.shape[0]
        if center is None:
            center = np.zeros(self.dim)
        self.center = check_point(center, self.dim, "center")
        # minimal radius of curvature
        self.tubular_radius = float(s.min() ** 2 / s.max())
        self.diameter = 2.0 * float(s.max())
        self.bounding_center = self.center
        self.bounding_radius = float(s.max())
        self.tol = 1e-9 * float(s.max())

    def _signed_distance(self, Y):
        return self._closest(Y)[2]

    def _closest(self, Y):
        s2 = self.semi_axes**2
        D = Y - self.center
        level = np.sum(D**2 / s2, axis=1) - 1.0
        smin2 = s2.min()
        mins = np.isclose(s2, smin2, rtol=1e-14, atol=0.0)

        def F(t):
            return np.sum((self.semi_axes * D / (t[:, None] + s2)) ** 2, axis=1) - 1.0

        k = D.shape[0]
        lo = np.where(level > 0, 0.0, -smin2)
        hi = np.where(level > 0, np.linalg.norm(self.semi_axes * D, axis=1) + 1e-300, 0.0)
        # F decreases on (-smin2, inf); bisect to full double precision
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if np.all((mid == lo) | (mid == hi)):
                break
            pos = F(mid) > 0
            lo = np.where(pos, mid, lo)
            hi = np.where(pos, hi, mid)
        t = 0.5 * (lo + hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            # t = -smin2 only on the degenerate rows repaired below
            P = s2 * D / (t[:, None] + s2)
        unique = np.ones(k, dtype=bool)

        # inside with vanishing component along the shortest axis: the
        # stationary point may leave that axis (two symmetric solutions)
        inside = level < 0
        on_axis = np.all(np.abs(D[:, mins]) <= 1e-14 * self.semi_axes.max(), axis=1)
        deg = inside & on_axis
        if np.any(deg):
            rest = ~mins
            Pd = np.zeros((deg.sum(), self.dim))
            Pd[:, rest] = s2[rest] * D[deg][:, rest] / (s2[rest] - smin2)
            frac = np.sum(Pd[:, rest] ** 2 / s2[rest], axis=1)
            off = frac < 1.0
            if np.any(off):
                # put the off-axis mass on the first short axis
                j = np.flatnonzero(mins)[0]
                Pd[off, j] = np.sqrt(smin2 * (1.0 - frac[off]))
                idx = np.flatnonzero(deg)[off]
                P[idx] = Pd[off]
                unique[idx] = frac[off] >= 1.0 - 1e-12
        P = P + self.center
        rho = np.linalg.norm(Y - P, axis=1) * np.sign(level)
        grad = (P - self.center) / s2
        nu = grad / np.linalg.norm(grad, axis=1, keepdims=True)
        big = np.abs(rho) > 1e-13 * self.semi_axes.max()
        nu[big] = (Y[big] - P[big]) / rho[big, None]
        unique &= ~(inside & (np.abs(rho) >= self.tubular_radius))
        return P, nu, rho, unique

    def _sff(self, P, nu, xi_t):
        s2 = self.semi_axes**2
        grad = (P - self.center) / s2
        curv = np.sum(xi_t**2 / s2, axis=1) / np.linalg.norm(grad, axis=1)
        return -curv[:, None] * nu

    def sample_boundary(self, k):
        u = _sphere_samples(self.dim, k)
        P = self.center + self.semi_axes * u
        g = u / self.semi_axes
        return P, g / np.linalg.norm(g, axis=1, keepdims=True)

    def to_config(self):
        return {"kind": "ellipsoid", "semi_axes": self.semi_axes.tolist(),
                "center": self.center.tolist()}


class PlanarCurve(_Obstacle):
    """Obstacle in R^2 bounded by a closed simple polyline.

    Parameters
    ----------
    vertices : array-like of shape (V, 2)
        Polyline vertices, without repeating the first vertex. Either
        orientation is accepted; the curve is stored counter-clockwise.
    tubular_radius : float, optional
        Upper bound on the tubular radius. The effective value is the minimum
        of this override and the reach estimated from discrete curvature.
    name : str, optional
        Label used in reports.
    """

    kind = "planar_curve"
    is_convex = False

    def __init__(self, vertices, tubular_radius=None, name=None):
        V = check_points(vertices, 2, "vertices")
        if np.allclose(V[0], V[-1]):
            V = V[:-1]
        if V.shape[0] < 3:
            raise ValueError("a closed curve needs at least 3 vertices")
        x, y = V[:, 0], V[:, 1]
        area = 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
        if area < 0:
            V = V[::-1].copy()
        self.vertices = V
        self.vertices.setflags(write=False)
        self.name = name
        self.dim = 2
        self._override = tubular_radius
        A = V
        B = np.roll(V, -1, axis=0)
        E = B - A
        L = np.linalg.norm(E, axis=1)
        if np.any(L <= 0):
            raise ValueError("repeated consecutive vertices")
        self._A, self._E, self._L = A, E, L
        self._T = E / L[:, None]
        self._N = np.column_stack([self._T[:, 1], -self._T[:, 0]])
        vn = self._N + np.roll(self._N, 1, axis=0)
        self._VN = vn / np.linalg.norm(vn, axis=1, keepdims=True)
        # turning angle / dual length; positive at left turns (convex corners)
        Tp = np.roll(self._T, 1, axis=0)
        turn = np.arctan2(Tp[:, 0] * self._T[:, 1] - Tp[:, 1] * self._T[:, 0],
                          np.sum(Tp * self._T, axis=1))
        self.vertex_curvature = turn / (0.5 * (L + np.roll(L, 1)))
        self.is_convex = bool(np.all(turn >= -1e-12))
        reach = 1.0 / max(np.abs(self.vertex_curvature).max(), 1e-300)
        self.reach_estimate = float(reach)
        self.tubular_radius = float(min(reach, tubular_radius) if tubular_radius else reach)
        self.diameter = float(pdist(V).max()) if V.shape[0] < 6000 else float(
            2 * np.linalg.norm(V - V.mean(0), axis=1).max())
        self.bounding_center = 0.5 * (V.min(0) + V.max(0))
        self.bounding_radius = float(np.linalg.norm(V - self.bounding_center, axis=1).max())
        self.length = float(L.sum())
        self._cum = np.concatenate([[0.0], np.cumsum(L)])
        self._tree = cKDTree(A + 0.5 * E)
        self.tol = 1e-9 * self.diameter

    def _segment_distances(self, Y, seg):
        """Distances from ``Y[i]`` to segments ``seg[i, :]``; returns (d2, s)."""
        A = self._A[seg]
        E = self._E[seg]
        W = Y[:, None, :] - A
        s = np.clip(np.sum(W * E, axis=2) / (self._L[seg] ** 2), 0.0, 1.0)
        R = W - s[..., None] * E
        return np.sum(R**2, axis=2), s

    def _nearest_segment(self, Y):
        S = self._A.shape[0]
        half = 0.5 * self._L.max()
        out_seg = np.zeros(len(Y), dtype=np.int64)
        out_s = np.zeros(len(Y))
        todo = np.arange(len(Y))
        # widen the candidate set until the midpoint bound certifies the result:
        # a segment outside the k candidates is at least dmid_k - L/2 away
        for k in (16, 64, 256):
            if todo.size == 0:
                return out_seg, out_s
            if k >= S:
                break
            dmid, seg = self._tree.query(Y[todo], k=k)
            d2, s = self._segment_distances(Y[todo], seg)
            j = np.argmin(d2, axis=1)
            rows = np.arange(todo.size)
            safe = np.sqrt(d2[rows, j]) <= dmid[:, -1] - half
            out_seg[todo[safe]] = seg[rows, j][safe]
            out_s[todo[safe]] = s[rows, j][safe]
            todo = todo[~safe]
        for chunk in np.array_split(todo, max(1, todo.size // 512)):
            if chunk.size == 0:
                continue
            allseg = np.broadcast_to(np.arange(S), (len(chunk), S))
            d2c, sc = self._segment_distances(Y[chunk], allseg)
            jc = np.argmin(d2c, axis=1)
            out_seg[chunk] = jc
            out_s[chunk] = sc[np.arange(len(chunk)), jc]
        return out_seg, out_s

    def _closest(self, Y):
        seg, s = self._nearest_segment(Y)
        P = self._A[seg] + s[:, None] * self._E[seg]
        # pseudo-normal of the closest feature decides the sign
        n = self._N[seg].copy()
        at_start = s <= 0.0
        at_end = s >= 1.0
        n[at_start] = self._VN[seg[at_start]]
        nxt = (seg[at_end] + 1) % self._A.shape[0]
        n[at_end] = self._VN[nxt]
        D = Y - P
        dist = np.linalg.norm(D, axis=1)
        sign = np.sign(np.sum(D * n, axis=1))
        rho = sign * dist
        nu = n.copy()
        big = dist > 1e-14 * self.diameter
        nu[big] = D[big] / rho[big, None]
        unique = np.abs(rho) < self.tubular_radius
        unique |= rho > 0 if self.is_convex else False
        return P, nu, rho, unique

    def _signed_distance(self, Y):
        return self._closest(Y)[2]

    def curvature_at(self, P):
        """Signed curvature at boundary points, interpolated between vertices."""
        P = check_points(P, 2)
        seg, s = self._nearest_segment(P)
        k0 = self.vertex_curvature[seg]
        k1 = self.vertex_curvature[(seg + 1) % self._A.shape[0]]
        return (1.0 - s) * k0 + s * k1

    def _sff(self, P, nu, xi_t):
        kappa = self.curvature_at(P)
        return -(kappa * np.sum(xi_t**2, axis=1))[:, None] * nu

    def point_at(self, arclength):
        """Boundary point and normal at given arclength positions."""
        sarr = np.mod(np.atleast_1d(np.asarray(arclength, dtype=float)), self.length)
        seg = np.clip(np.searchsorted(self._cum, sarr, side="right") - 1, 0, len(self._L) - 1)
        frac = (sarr - self._cum[seg]) / self._L[seg]
        return self._A[seg] + frac[:, None] * self._E[seg], self._N[seg]

    def sample_boundary(self, k):
        return self.point_at(np.arange(k) * self.length / k + 0.5 * self.length / k)

    def to_config(self):
        cfg = {"kind": "planar_curve", "vertices": self.vertices.tolist()}
        if self._override:
            cfg["tubular_radius"] = self._override
        if self.name:
            cfg["name"] = self.name
        return cfg


def _sphere_samples(m, k):
    """Deterministic, roughly uniform unit vectors in R^m."""
    if m == 1:
        return np.array([[1.0], [-1.0]] * ((k + 1) // 2))[:k]
    if m == 2:
        th = 2 * np.pi * (np.arange(k) + 0.5) / k
        return np.column_stack([np.cos(th), np.sin(th)])
    if m == 3:
        i = np.arange(k) + 0.5
        z = 1 - 2 * i / k
        phi = np.pi * (3 - np.sqrt(5)) * i
        r = np.sqrt(1 - z**2)
        return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    g = np.random.default_rng(12345).standard_normal((k, m))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def c_obstacle(inner_radius=1.0, outer_radius=2.0, half_opening=np.pi / 4, ds=0.01):
    """The built-in C-shaped obstacle, an annular sector with round caps.

    The sector spans angles ``[half_opening, 2*pi - half_opening]`` between
    the two radii; the open side faces the positive x axis. Caps are
    half-discs joining the arcs tangentially. The inner arc is discretised
    so that the point ``launch_point`` sits at a segment midpoint: its normal
    ray crosses the cavity and grazes the upper cap, which is what makes the
    obstacle violate the ray condition.

    Returns
    -------
    PlanarCurve
        With extra attributes ``launch_point``, ``launch_normal`` and
        ``graze_point``.
    """
    R1, R2, al = float(inner_radius), float(outer_radius), float(half_opening)
    Rm, rc = 0.5 * (R1 + R2), 0.5 * (R2 - R1)
    beta = al - np.arcsin(rc / Rm)
    phi_a = beta + np.pi

    def arc(center, radius, t0, t1):
        n = max(8, int(np.ceil(abs(t1 - t0) * radius / ds)))
        t = np.linspace(t0, t1, n + 1)[:-1]
        return center + radius * np.column_stack([np.cos(t), np.sin(t)])

    er_u = np.array([np.cos(al), np.sin(al)])
    er_l = np.array([np.cos(al), -np.sin(al)])
    cu, cl = Rm * er_u, Rm * er_l
    outer = arc(np.zeros(2), R2, al, 2 * np.pi - al)
    # lower cap: outer end -> inner end, bulging towards the opening
    th_l = np.arctan2(er_l[1], er_l[0])
    lower = arc(cl, rc, th_l, th_l + np.pi)
    # inner arc, clockwise, with phi_a a segment midpoint
    dth = ds / R1
    j = np.arange(-int(4 * np.pi / dth), int(4 * np.pi / dth))
    th = phi_a + (j + 0.5) * dth
    th = th[(th > al + 0.3 * dth) & (th < 2 * np.pi - al - 0.3 * dth)]
    th = np.concatenate([[2 * np.pi - al], th[::-1]])
    inner = R1 * np.column_stack([np.cos(th), np.sin(th)])
    # upper cap: inner end -> outer end
    upper = arc(cu, rc, al + np.pi, al + 2 * np.pi)
    V = np.vstack([outer, lower, inner, upper])
    curve = PlanarCurve(V, name="c_obstacle")
    ua = np.array([np.cos(phi_a), np.sin(phi_a)])
    curve.launch_point = R1 * np.cos(0.5 * dth) * ua
    curve.launch_normal = -ua
    d = np.array([np.cos(beta), np.sin(beta)])
    curve.graze_point = np.sqrt(Rm**2 - rc**2) * d
    curve._builtin = {"kind": "c_obstacle", "inner_radius": R1, "outer_radius": R2,
                      "half_opening": al, "ds": ds}
    curve.to_config = lambda: dict(curve._builtin)
    return curve


def obstacle_from_config(cfg, dim=None):
    """Build an obstacle from a config mapping (see the scenario docs)."""
    from .exceptions import ConfigError

    kind = cfg.get("kind")
    if kind == "ball":
        d = cfg.get("dim", dim if dim is not None else 2)
        return Ball(float(cfg["radius"]), dim=int(d), center=cfg.get("center"))
    if kind == "ellipsoid":
        return Ellipsoid(cfg["semi_axes"], center=cfg.get("center"))
    if kind == "planar_curve":
        if "vertices" in cfg:
            V = np.asarray(cfg["vertices"], dtype=float)
        elif "csv" in cfg:
            V = np.loadtxt(cfg["csv"], delimiter=",", ndmin=2)
        else:
            raise ConfigError("obstacle.vertices", "planar_curve needs vertices or csv")
        return PlanarCurve(V, tubular_radius=cfg.get("tubular_radius"), name=cfg.get("name"))
    if kind == "c_obstacle":
        keys = ("inner_radius", "outer_radius", "half_opening", "ds")
        return c_obstacle(**{k: float(cfg[k]) for k in keys if k in cfg})
    raise ConfigError("obstacle.kind", f"unknown obstacle kind {kind!r}")


def signed_distance(obstacle, y):
    """Signed distance of a single point (positive outside the obstacle)."""
    y = check_point(y, obstacle.dim)
    return float(obstacle._signed_distance(y[None, :])[0])


def project_to_boundary(obstacle, y):
    """Nearest boundary point of ``y`` and the unit normal there.

    Raises
    ------
    NonUniqueProjection
        If ``y`` lies on the medial axis or too deep inside the obstacle.
    """
    y = check_point(y, obstacle.dim)
    P, nu, _, unique = obstacle._closest(y[None, :])
    if not unique[0]:
        raise NonUniqueProjection(f"projection of {y.tolist()} is not unique")
    return P[0], nu[0]


def second_fundamental_form(obstacle, y, xi):
    """``A_y(xi, xi)`` at a boundary point; normal components of ``xi`` are dropped."""
    y = check_point(y, obstacle.dim)
    xi = check_point(xi, obstacle.dim, "xi")
    P, nu, rho, _ = obstacle._closest(y[None, :])
    if abs(rho[0]) > obstacle.tol:
        raise NotOnBoundary(f"|rho(y)| = {abs(rho[0]):.3e} exceeds {obstacle.tol:.1e}")
    return obstacle.second_fundamental_form(y[None, :], xi[None, :], nu=nu)[0]


def ray_condition_check(obstacle, boundary_samples=256, t_max=None, max_steps=200000):
    """March normal rays from sampled boundary points.

    Each ray ``y + t nu(y)`` is advanced by the current distance to the
    boundary, which can never step over the obstacle because the distance
    function is 1-Lipschitz.

    Returns
    -------
    holds : bool
        True when no ray comes back to the obstacle within ``t_max``.
    violations : list of (ndarray, float)
        Ray origin and hitting parameter for every offending ray.
    """
    boundary_samples = check_scalar(boundary_samples, "boundary_samples", min_val=16, integer=True)
    diam = obstacle.diameter
    if t_max is None:
        t_max = 2.0 * diam
    if t_max < diam:
        raise ValueError("t_max must be at least the obstacle diameter")
    Y, N = obstacle.sample_boundary(boundary_samples)
    min_step = 1e-6 * diam
    hit_tol = 0.25 * min_step
    t = np.full(len(Y), min_step)
    active = np.ones(len(Y), dtype=bool)
    hit = np.zeros(len(Y), dtype=bool)
    for _ in range(max_steps):
        if not np.any(active):
            break
        idx = np.flatnonzero(active)
        rho = obstacle.signed_distance(Y[idx] + t[idx, None] * N[idx])
        h = rho <= hit_tol
        hit[idx[h]] = True
        active[idx[h]] = False
        t[idx[~h]] += np.maximum(rho[~h], min_step)
        active[idx[~h]] &= t[idx[~h]] <= t_max
    violations = [(Y[i].copy(), float(t[i])) for i in np.flatnonzero(hit)]
    return len(violations) == 0, violations
