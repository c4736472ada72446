"""Radial reduction of equivariant maps into the complement of a ball.

For ``u(x) = w(|x|) x / |x|`` on the unit ball of R^n and the obstacle
``B_a`` the Dirichlet energy reduces to

    nw_n * int_0^1 (w'^2 + (n - 1) w^2 / r^2) r^(n-1) dr,

with ``w >= a`` and ``w(1) = 1``. The critical point is ``w = a`` on
``[0, r_a]`` and ``t_a r + (1 - t_a) r^(1-n)`` on ``(r_a, 1]``; the two
free boundary conditions ``w(r_a) = a`` and ``w'(r_a) = 0`` reduce, after
eliminating ``t_a``, to the polynomial ``a r^n - n r + a (n - 1) = 0``.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid
from scipy.linalg import solve_banded
from scipy.special import gamma as gamma_fn
from sklearn.base import BaseEstimator

from .exceptions import DivergentIntegrand, InvalidDimension, StepCollapse
from .validation import check_scalar

__all__ = [
    "RadialProfile",
    "closed_form_radial",
    "closed_form_parameters",
    "radial_minimize",
    "gradient_identity_check",
    "hardy_check",
    "ellipsoid_lambda_min",
    "sphere_area",
    "equivariant_lift",
    "write_profile",
    "RadialObstacleSolver",
]


def sphere_area(n):
    """Surface area ``n w_n`` of the unit sphere in R^n."""
    return 2.0 * np.pi ** (n / 2) / gamma_fn(n / 2)


@dataclass
class RadialProfile:
    """Samples of a radial profile ``w`` together with its free boundary data.

    ``dw`` holds exact derivatives for closed-form profiles and is None for
    numerical ones.
    """

    n: int
    a: float
    r_nodes: np.ndarray
    w: np.ndarray
    t_a: float
    r_a: float
    source: str = "closed_form"
    dw: np.ndarray = None
    residuals: dict = field(default_factory=dict)
    iterations: int = 0

    def evaluate(self, r):
        """Profile at arbitrary radii (exact for closed form, else linear interpolation)."""
        r = np.asarray(r, dtype=float)
        if self.source == "closed_form":
            return _w_exact(r, self.n, self.a, self.t_a, self.r_a)
        return np.interp(r, self.r_nodes, self.w)

    def derivative(self, r):
        r = np.asarray(r, dtype=float)
        if self.source == "closed_form":
            return _dw_exact(r, self.n, self.a, self.t_a, self.r_a)
        return np.interp(r, self.r_nodes, np.gradient(self.w, self.r_nodes))

    def energy(self):
        """Reduced energy including the sphere area factor (discrete, trapezoid on segments)."""
        return float(sphere_area(self.n) * _discrete_energy(self.r_nodes, self.w, self.n))

    def summary(self):
        return {"n": self.n, "a": self.a, "t_a": self.t_a, "r_a": self.r_a,
                "source": self.source, "num_nodes": int(len(self.r_nodes)),
                "iterations": int(self.iterations),
                "residuals": {k: float(v) for k, v in sorted(self.residuals.items())}}


def _coef(n, a, t, ra):
    # 1 - t equals a r_a^(n-1) / n at the root; the product form avoids the
    # cancellation in 1 - t when r_a^(1-n) is large
    return a * ra ** (n - 1) / n


def _w_exact(r, n, a, t, ra):
    r = np.asarray(r, dtype=float)
    out = np.full(r.shape, float(a))
    m = r > ra
    out[m] = t * r[m] + _coef(n, a, t, ra) * r[m] ** (1 - n)
    out[r == 1.0] = t + (1 - t)
    return out


def _dw_exact(r, n, a, t, ra):
    r = np.asarray(r, dtype=float)
    out = np.zeros(r.shape)
    m = r > ra
    out[m] = t + _coef(n, a, t, ra) * (1 - n) * r[m] ** (-n)
    return out


def _check_na(n, a):
    n = check_scalar(n, "n", min_val=2, integer=True)
    a = check_scalar(a, "a", min_val=0.0, max_val=1.0, include_min=False, include_max=False)
    return n, a


def closed_form_parameters(n, a, xtol=0.0):
    """Free boundary radius ``r_a`` and slope ``t_a`` by bisection.

    ``p(r) = a r^n - n r + a (n - 1)`` is convex on ``(0, 1)`` with
    ``p(a / n) > 0`` and ``p(1) = n (a - 1) < 0``, so the bracket holds a
    single sign change. Bisection runs to machine resolution unless a
    coarser ``xtol`` is given.
    """
    n, a = _check_na(n, a)

    def p(r):
        return a * r**n - n * r + a * (n - 1)

    lo, hi = a / n, 1.0
    plo = p(lo)
    while hi - lo > xtol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        pm = p(mid)
        if (pm > 0) == (plo > 0):
            lo, plo = mid, pm
        else:
            hi = mid
    r_a = 0.5 * (lo + hi)
    t_a = a * (n - 1) / (n * r_a)
    return r_a, t_a


def closed_form_radial(n, a, r_nodes=None):
    """Closed-form radial critical point sampled on ``r_nodes``.

    Parameters
    ----------
    n : int
        Domain dimension, at least 2.
    a : float
        Obstacle radius in (0, 1).
    r_nodes : array_like, optional
        Increasing nodes in [0, 1]; default 1001 uniform nodes.

    Returns
    -------
    RadialProfile
        ``residuals`` records ``polynomial`` (``a r^n - n r + a(n-1)``),
        ``value`` (``w(r_a) - a``), ``slope`` (``w'(r_a)``) and
        ``slope_identity`` (``t r^n - (n-1)(1-t)``).
    """
    n, a = _check_na(n, a)
    r_a, t_a = closed_form_parameters(n, a)
    r = np.linspace(0.0, 1.0, 1001) if r_nodes is None else _check_grid(r_nodes)
    w = _w_exact(r, n, a, t_a, r_a)
    c = _coef(n, a, t_a, r_a)
    res = {
        "polynomial": a * r_a**n - n * r_a + a * (n - 1),
        "value": t_a * r_a + c * r_a ** (1 - n) - a,
        "slope": t_a + c * (1 - n) * r_a ** (-n),
        "slope_identity": t_a * r_a**n - (n - 1) * (1 - t_a),
    }
    return RadialProfile(n, a, r, w, t_a, r_a, "closed_form", _dw_exact(r, n, a, t_a, r_a), res)


def _check_grid(r):
    r = np.asarray(r, dtype=float).ravel()
    if r.size < 3 or np.any(np.diff(r) <= 0) or r[0] < 0 or r[-1] > 1 + 1e-15:
        raise ValueError("r_nodes must be an increasing grid in [0, 1] with at least 3 nodes")
    return r


def _weights(r, n):
    """Segment stiffness ``k_j`` and dual-cell potential weights ``c_j``."""
    d = np.diff(r)
    k = (r[1:] ** n - r[:-1] ** n) / (n * d**2)
    mids = np.concatenate([[r[0]], 0.5 * (r[1:] + r[:-1]), [r[-1]]])
    lo, hi = mids[:-1], mids[1:]
    if n == 2:
        c = np.zeros(len(r))
        ok = lo > 0
        c[ok] = np.log(hi[ok] / lo[ok])
        # the first dual cell touches r = 0; its log weight diverges and is dropped
    else:
        c = (hi ** (n - 2) - lo ** (n - 2)) / (n - 2)
    return k, c


def _discrete_energy(r, w, n):
    k, c = _weights(r, n)
    return float(np.sum(k * np.diff(w) ** 2) + (n - 1) * np.sum(c * w**2))


def radial_minimize(n, a, r_grid=None, config=None, spacing=1e-3):
    """Minimise the discrete reduced energy subject to ``w >= a`` and ``w(1) = 1``.

    The discrete energy is quadratic with a tridiagonal M-matrix Hessian, so
    the bound-constrained problem is solved exactly by a primal-dual active
    set iteration (each step one banded solve). The iteration count is
    bounded by ``config.max_iters`` when a config is given.

    Returns
    -------
    RadialProfile
        ``r_a`` is the largest node with ``w <= a + spacing**2``.
    """
    n, a = _check_na(n, a)
    if r_grid is None:
        m = int(round(1.0 / spacing))
        r = np.linspace(0.0, 1.0, m + 1)
    else:
        r = _check_grid(r_grid)
        if abs(r[-1] - 1.0) > 1e-12:
            raise ValueError("r_grid must end at r = 1")
    h = float(np.max(np.diff(r)))
    max_iters = getattr(config, "max_iters", 500) if config is not None else 500
    k, c = _weights(r, n)
    N = len(r) - 1
    # Hessian (halved) on the free unknowns w_0..w_{N-1}; w_N = 1 is fixed
    diag = (n - 1) * c[:N].copy()
    diag[:N] += k
    diag[1:N] += k[:N - 1]
    off = -k[:N - 1]
    rhs = np.zeros(N)
    rhs[N - 1] = k[N - 1] * 1.0

    def matvec(w):
        out = diag * w
        out[:-1] += off * w[1:]
        out[1:] += off * w[:-1]
        return out

    w = np.maximum(np.interp(r[:N], [0, 1], [a, 1.0]), a)
    active = np.zeros(N, dtype=bool)
    for it in range(1, max_iters + 1):
        free = ~active
        wn = np.full(N, a)
        idx = np.flatnonzero(free)
        if idx.size:
            # restrict the tridiagonal system to the free set; the active
            # neighbours contribute known values to the right-hand side
            b = rhs - matvec(np.where(active, a, 0.0))
            sub = _tridiag_restrict(diag, off, idx)
            wn[idx] = solve_banded((1, 1), sub, b[idx])
        mu = matvec(wn) - rhs
        new_active = (mu + diag * (a - wn)) > 0
        w = wn
        if np.array_equal(new_active, active):
            break
        active = new_active
    else:
        raise StepCollapse("active set iteration did not settle")
    w = np.concatenate([w, [1.0]])
    tol = h**2
    below = np.flatnonzero(w <= a + tol)
    r_hat = float(r[below[-1]]) if below.size else float(r[0])
    r_a, t_a = closed_form_parameters(n, a)
    kkt = matvec(w[:N]) - rhs
    res = {"min_constraint": float(w.min() - a),
           "stationarity": float(np.max(np.abs(np.where(w[:N] > a + 1e-14, kkt, 0.0)))),
           "multiplier_min": float(np.min(np.where(w[:N] <= a + 1e-14, kkt, 0.0)))}
    prof = RadialProfile(n, a, r, w, t_a=_fit_t(r, w, n, r_hat), r_a=r_hat,
                         source="numeric", residuals=res, iterations=it)
    return prof


def _tridiag_restrict(diag, off, idx):
    """Banded storage of the tridiagonal matrix restricted to ``idx``."""
    m = idx.size
    ab = np.zeros((3, m))
    ab[1] = diag[idx]
    adj = np.diff(idx) == 1
    ab[0, 1:] = np.where(adj, off[idx[:-1]], 0.0)
    ab[2, :-1] = np.where(adj, off[idx[:-1]], 0.0)
    return ab


def _fit_t(r, w, n, r_hat):
    """Least-squares slope ``t`` of ``t r + (1 - t) r^(1-n)`` on the free part."""
    m = r > r_hat
    if not np.any(m):
        return float("nan")
    g = r[m] - r[m] ** (1 - n)
    return float(np.dot(g, w[m] - r[m] ** (1 - n)) / np.dot(g, g))


def gradient_identity_check(profile, r_min=None):
    """Largest relative deviation of ``|Du|^2`` from ``(n-1) a^2 / r^2`` on ``(0, r_a]``.

    ``|Du|^2 = w'^2 + (n-1) w^2 / r^2`` for the equivariant lift. Exact
    derivatives are used for closed-form profiles and second-order finite
    differences otherwise.
    """
    r = profile.r_nodes
    n, a = profile.n, profile.a
    if profile.dw is not None:
        dw = profile.dw
    else:
        dw = np.gradient(profile.w, r)
    lo = 0.0 if r_min is None else r_min
    m = (r > 0) & (r >= lo) & (r <= profile.r_a)
    if not np.any(m):
        return 0.0
    rm = r[m]
    du2 = dw[m] ** 2 + (n - 1) * profile.w[m] ** 2 / rm**2
    ref = (n - 1) * a**2 / rm**2
    return float(np.max(np.abs(du2 - ref) / ref))


def hardy_check(n, phi, r=None):
    """Both sides of the sharp Hardy inequality for a radial test function.

    Parameters
    ----------
    n : int
        Dimension, at least 3.
    phi : array_like or callable
        Samples of ``phi`` on ``r`` (or a callable evaluated there); ``phi(1)``
        must vanish.
    r : array_like, optional
        Increasing nodes on [0, 1]; default 4001 uniform nodes.

    Returns
    -------
    lhs, rhs : float
        ``(n-2)^2/4 * n w_n * int phi^2 r^(n-3) dr`` (trapezoid) and
        ``n w_n * int phi'^2 r^(n-1) dr`` (exact per linear segment).
    """
    n = check_scalar(n, "n", integer=True)
    if n <= 2:
        raise DivergentIntegrand(f"the weight r^(n-3) is not integrable at 0 for n = {n}")
    r = np.linspace(0.0, 1.0, 4001) if r is None else _check_grid(r)
    f = np.asarray(phi(r) if callable(phi) else phi, dtype=float).ravel()
    if f.shape != r.shape:
        raise ValueError("phi must have one sample per node")
    if not np.all(np.isfinite(f)):
        raise ValueError("phi must be finite")
    if abs(f[-1]) > 1e-10 * max(1.0, np.max(np.abs(f))):
        raise ValueError("phi must vanish at r = 1")
    area = sphere_area(n)
    integrand = f**2 * r ** (n - 3)
    lhs = (n - 2) ** 2 / 4.0 * area * trapezoid(integrand, r)
    slope = np.diff(f) / np.diff(r)
    rhs = area * np.sum(slope**2 * (r[1:] ** n - r[:-1] ** n) / n)
    return float(lhs), float(rhs)


def ellipsoid_lambda_min(n):
    """Smallest ``lambda`` with ``lambda^2 >= 4 (n-1) / (n-2)^2``."""
    n = check_scalar(n, "n", integer=True)
    if n <= 2:
        raise InvalidDimension(f"the threshold needs n >= 3, got {n}")
    return 2.0 * np.sqrt(n - 1) / (n - 2)


def equivariant_lift(profile, X):
    """Values ``w(|x|) x / |x|`` at points ``X``; the direction at 0 is ``e_1``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    r = np.linalg.norm(X, axis=1)
    w = profile.evaluate(np.minimum(r, 1.0)) if callable(getattr(profile, "evaluate", None)) else profile(r)
    d = np.zeros_like(X)
    pos = r > 0
    d[pos] = X[pos] / r[pos, None]
    d[~pos, 0] = 1.0
    return w[:, None] * d


def write_profile(path, profile):
    """Two-column ``r,w`` CSV plus a JSON sidecar ``<path>.json``."""
    np.savetxt(path, np.column_stack([profile.r_nodes, profile.w]), delimiter=",",
               header="r,w", comments="", fmt="%.17g")
    side = os.path.splitext(path)[0] + ".json"
    with open(side, "w") as fh:
        json.dump(profile.summary(), fh, indent=2, sort_keys=True)
    return path, side


class RadialObstacleSolver(BaseEstimator):
    """Estimator wrapper around :func:`radial_minimize`.

    Parameters
    ----------
    n : int
    a : float
    spacing : float
        Uniform radial spacing.
    method : {"numeric", "closed_form"}
    """

    def __init__(self, n=3, a=0.5, spacing=1e-3, method="numeric"):
        self.n = n
        self.a = a
        self.spacing = spacing
        self.method = method

    def fit(self, X=None, y=None):
        if self.method == "closed_form":
            grid = np.linspace(0.0, 1.0, int(round(1 / self.spacing)) + 1)
            self.profile_ = closed_form_radial(self.n, self.a, grid)
        elif self.method == "numeric":
            self.profile_ = radial_minimize(self.n, self.a, spacing=self.spacing)
        else:
            raise ValueError(f"unknown method {self.method!r}")
        self.r_a_ = self.profile_.r_a
        return self

    def predict(self, r):
        """Profile values at radii ``r``."""
        return self.profile_.evaluate(np.asarray(r, dtype=float).ravel())

    def transform(self, X):
        """Equivariant lift of the fitted profile at points ``X``."""
        return equivariant_lift(self.profile_, X)
