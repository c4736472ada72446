"""Projected gradient descent for the constrained Dirichlet energy.

The discrete energy is ``E(U) = h^(n-2) tr(U^T K U)`` with ``K`` the edge
graph Laplacian, so its gradient ``2 h^(n-2) K U`` (masked to interior
nodes) comes out of the same sparse product and is Lipschitz with constant
at most ``8 n h^(n-2)``. Steps are taken relative to ``1 / L``.

The iteration keeps a monotone accepted sequence: an extrapolated
(accelerated) trial is accepted only if it lowers the energy, otherwise the
momentum is reset and a plain projected gradient step with Armijo
backtracking is taken.
"""

import csv
import os
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu
from sklearn.base import BaseEstimator

from .exceptions import DeepPenetration, InfeasibleField, StepCollapse
from .grid import MapField, _project_values
from .validation import check_scalar

__all__ = [
    "SolverConfig",
    "SolveResult",
    "projected_descent",
    "harmonic_extension",
    "minimize",
    "el_residual",
    "write_journal",
    "ConstraintMapSolver",
]

_INIT_CHOICES = ("boundary-harmonic", "radial-symmetric")


@dataclass
class SolverConfig:
    """Settings shared by the grid, radial and geodesic solvers.

    Parameters
    ----------
    max_iters : int
    step0 : float
        Initial step as a multiple of ``1 / L``.
    armijo_factor : float
        Step shrink factor on rejection, in (0, 1).
    armijo_c : float
        Sufficient decrease constant, in (0, 1).
    grad_tol : float
        Stop when the projected gradient norm (in Laplacian units, i.e. the
        largest ``|Delta_h u|`` on free nodes) falls below this.
    constraint_tol : float
        Feasibility tolerance on ``rho``.
    init : str or ndarray
        ``"boundary-harmonic"``, ``"radial-symmetric"`` or node values.
    accelerate : bool
        Use monotone extrapolation; False gives plain projected gradient.
    check_every : int
        Evaluate the projected gradient norm every this many iterations.
    min_step : float
        Relative step floor. Reaching it while the projection keeps failing
        raises ``StepCollapse``; reaching it because no energy decrease is
        resolvable in floating point ends the run on the current iterate.
    """

    max_iters: int = 20000
    step0: float = 1.0
    armijo_factor: float = 0.5
    armijo_c: float = 1e-4
    grad_tol: float = 1e-8
    constraint_tol: float = 1e-10
    init: object = "boundary-harmonic"
    accelerate: bool = True
    check_every: int = 1
    min_step: float = 1e-8

    def __post_init__(self):
        check_scalar(self.max_iters, "max_iters", min_val=0, integer=True)
        check_scalar(self.step0, "step0", min_val=0.0, include_min=False)
        check_scalar(self.armijo_factor, "armijo_factor", min_val=0.0, max_val=1.0,
                     include_min=False, include_max=False)
        check_scalar(self.armijo_c, "armijo_c", min_val=0.0, max_val=1.0,
                     include_min=False, include_max=False)
        check_scalar(self.grad_tol, "grad_tol", min_val=0.0, include_min=False)
        check_scalar(self.constraint_tol, "constraint_tol", min_val=0.0, include_min=False)
        check_scalar(self.check_every, "check_every", min_val=1, integer=True)
        if isinstance(self.init, str) and self.init not in _INIT_CHOICES:
            raise ValueError(f"init must be one of {_INIT_CHOICES} or an array, got {self.init!r}")

    def to_dict(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        if not isinstance(d["init"], str):
            d["init"] = "custom"
        return d


@dataclass
class SolveResult:
    field: object
    iterations: int
    energy_trace: list
    converged: bool
    final_projected_grad_norm: float
    journal: list = dc_field(default_factory=list)
    step_trace: list = dc_field(default_factory=list)

    def summary(self):
        return {"iterations": int(self.iterations), "converged": bool(self.converged),
                "final_energy": float(self.energy_trace[-1]) if self.energy_trace else None,
                "final_projected_grad_norm": float(self.final_projected_grad_norm)}


def projected_descent(x0, hess, project, lipschitz, config, energy0, pg_scale=1.0,
                      fixed=None):
    """Monotone (optionally accelerated) projected gradient descent for a quadratic.

    The objective is ``E(x) = 1/2 <x, H x>`` restricted to the free rows, with
    ``hess(x)`` returning ``H x`` (zero on fixed rows). Energy changes are
    evaluated from the increment, ``dE = <d, H x> + 1/2 <d, H d>``, which keeps
    them accurate long after ``E`` itself stops changing in floating point;
    the trace is the starting energy plus the accumulated increments, so it is
    non-increasing by construction.

    Parameters
    ----------
    x0 : ndarray
        Feasible starting point.
    hess : callable
        ``x -> H x`` (the gradient at x).
    project : callable
        Projection onto the feasible set; may raise ``DeepPenetration``.
    lipschitz : float
        Lipschitz constant of the gradient.
    config : SolverConfig
    energy0 : float
        Energy at ``x0``.
    pg_scale : float
        The reported projected gradient norm is the largest row norm of the
        gradient mapping divided by ``pg_scale``.
    fixed : ndarray of bool, optional
        Rows that never move (skipped in the norm).

    Returns
    -------
    x, energy_trace, step_trace, journal, converged, pgnorm
    """
    t0 = config.step0 / lipschitz
    t_floor = config.min_step / lipschitz
    sigma = config.armijo_c
    x = x0
    g = hess(x)
    E = float(energy0)
    trace, steps, journal = [E], [0.0], []

    def pg_norm(x, g, t):
        z = project(x - t * g)
        G = (x - z) / t
        nrm = np.sqrt(np.einsum("ij,ij->i", G, G)) if G.ndim == 2 else np.abs(G)
        if fixed is not None:
            nrm = np.where(fixed, 0.0, nrm)
        return float(nrm.max() / pg_scale) if nrm.size else 0.0

    def trial(x, g, z):
        d = z - x
        Hd = hess(d)
        dE = float(np.sum(d * g) + 0.5 * np.sum(d * Hd))
        return d, dE

    pg = pg_norm(x, g, t0)
    journal.append((0, E, 0.0, pg))
    if pg <= config.grad_tol:
        return x, trace, steps, journal, True, pg
    x_prev, g_prev = x, g
    theta = 1.0
    converged = stalled = False
    for it in range(1, config.max_iters + 1):
        accepted = False
        if config.accelerate and theta > 1.0:
            theta_next = 0.5 * (1 + np.sqrt(1 + 4 * theta**2))
            beta = (theta - 1.0) / theta_next
            y = x + beta * (x - x_prev)
            gy = g + beta * (g - g_prev)  # the gradient is linear
            try:
                z = project(y - t0 * gy)
                d, dE = trial(x, g, z)
                if dE <= 0.0:
                    accepted, t_used = True, t0
                    theta = theta_next
            except DeepPenetration:
                pass
        if not accepted:
            # restart: plain projected gradient step from x with backtracking
            t = t0
            deep = False
            while True:
                try:
                    z = project(x - t * g)
                    d, dE = trial(x, g, z)
                    if dE <= -sigma / t * float(np.sum(d * d)):
                        break
                except DeepPenetration:
                    deep = True
                t *= config.armijo_factor
                if t < t_floor:
                    break
            if t < t_floor:
                if deep:
                    raise StepCollapse(f"step fell below {t_floor:.3e} at iteration {it}")
                # no descent is resolvable in floating point: stop on the current iterate
                stalled = True
                pg = pg_norm(x, g, t0)
                journal.append((it, E, 0.0, pg))
                converged = pg <= config.grad_tol
                break
            t_used = t
            theta = 0.5 * (1 + np.sqrt(5.0))
        x_prev, g_prev = x, g
        x = z
        g = hess(x)
        E = E + dE
        trace.append(E)
        steps.append(t_used * lipschitz)
        if it % config.check_every == 0 or it == config.max_iters:
            pg = pg_norm(x, g, t0)
            journal.append((it, E, t_used * lipschitz, pg))
            if pg <= config.grad_tol:
                converged = True
                break
        else:
            journal.append((it, E, t_used * lipschitz, float("nan")))
    return x, trace, steps, journal, converged, pg


def _interior_system(domain):
    K = domain.graph_laplacian.tocsr()
    inner = domain.interior
    bnd = np.flatnonzero(domain.boundary_mask)
    return K[inner][:, inner].tocsc(), K[inner][:, bnd], inner, bnd


def harmonic_extension(domain, boundary_values):
    """Discrete harmonic extension of boundary values (sparse direct solve).

    ``boundary_values`` may be full node values (only boundary rows are
    read) or an array with one row per boundary node.
    """
    V = np.asarray(boundary_values, dtype=float)
    if V.ndim == 1:
        V = V[:, None]
    A, B, inner, bnd = _interior_system(domain)
    UB = V[bnd] if V.shape[0] == domain.num_nodes else V
    U = np.zeros((domain.num_nodes, UB.shape[1]))
    U[bnd] = UB
    if inner.size:
        U[inner] = splu(A).solve(np.asarray(-(B @ UB)))
    return U


def _radial_init(domain, obstacle, boundary):
    from .geometry import Ball
    from .radial import equivariant_lift, radial_minimize

    if not isinstance(obstacle, Ball) or domain.shape != "ball" or obstacle.dim != domain.n:
        raise ValueError("radial-symmetric init needs a ball domain and a ball obstacle in R^n")
    X = (np.asarray(domain.nodes) - domain.center) / domain.radius
    bvals = boundary[domain.boundary_mask] - obstacle.center
    b = float(np.mean(np.linalg.norm(bvals, axis=1)))
    a = obstacle.radius / b
    if not 0 < a < 1:
        raise ValueError("radial-symmetric init needs boundary data outside the obstacle")
    spacing = min(1e-3, 0.25 * domain.h / domain.radius)
    prof = radial_minimize(domain.n, a, spacing=spacing)
    return obstacle.center + b * equivariant_lift(prof, X)


def minimize(domain, obstacle, boundary_data, config=None):
    """Minimise the discrete Dirichlet energy among feasible fields.

    Parameters
    ----------
    domain : GridDomain
    obstacle : obstacle or None
    boundary_data : MapField, ndarray or callable
        Full node values (only boundary rows are used), a callable of node
        coordinates, or a MapField.
    config : SolverConfig, optional

    Returns
    -------
    SolveResult
    """
    config = config or SolverConfig()
    if isinstance(boundary_data, MapField):
        V = boundary_data.values
    elif callable(boundary_data):
        V = np.asarray(boundary_data(np.array(domain.nodes)), dtype=float)
    else:
        V = np.asarray(boundary_data, dtype=float)
    if V.ndim == 1:
        V = V[:, None]
    # the constructor checks boundary feasibility
    data = MapField(domain, V, obstacle=obstacle, constraint_tol=config.constraint_tol)
    bmask = domain.boundary_mask
    init = config.init
    if isinstance(init, str):
        if init == "boundary-harmonic":
            U0 = harmonic_extension(domain, V)
        else:
            U0 = _radial_init(domain, obstacle, V)
    else:
        U0 = np.array(init, dtype=float).reshape(V.shape)
    U0[bmask] = V[bmask]
    if obstacle is not None:
        U0 = _project_values(U0, obstacle, skip=bmask)

    K = domain.graph_laplacian
    scale = domain.h ** (domain.n - 2)
    interior = ~bmask

    def hess(U):
        G = (2.0 * scale) * (K @ U)
        G[bmask] = 0.0
        return G

    if obstacle is None:
        def project(U):
            return U
    else:
        def project(U):
            return _project_values(U, obstacle, skip=bmask)

    L = 8.0 * domain.n * scale
    # gradient mapping rows are 2 h^n |Delta_h u| on free nodes
    U, trace, steps, journal, converged, pg = projected_descent(
        U0, hess, project, L, config, domain.energy(U0), pg_scale=2.0 * domain.h**domain.n,
        fixed=~interior)
    result_field = data.with_values(U)
    return SolveResult(result_field, len(trace) - 1, trace, converged, pg, journal, steps)


def el_residual(field, obstacle, coincidence_tol=None, exclude=None):
    """Euler-Lagrange residual ``Delta_h u - chi A_{Pi u}(Du^T, Du^T)`` at interior nodes.

    Parameters
    ----------
    field : MapField
    obstacle : obstacle
    coincidence_tol : float, optional
        Nodes with ``|rho(u)| <= coincidence_tol`` form the coincidence set;
        default ``obstacle.tol``.
    exclude : ndarray of bool, optional
        Interior nodes to leave out of the norm (e.g. a neighbourhood of a
        known singular point). Excluded nodes still get a residual.

    Returns
    -------
    residual : ndarray of shape (num_nodes, m)
        Zero on boundary nodes.
    l2_norm : float
        ``sqrt(h^n sum |residual|^2)`` over interior nodes.
    """
    dom = field.domain
    U = field.values
    rho = obstacle.signed_distance(U)
    if np.any(rho < -field.constraint_tol):
        raise InfeasibleField(f"field penetrates the obstacle (min rho = {rho.min():.3e})")
    tol = obstacle.tol if coincidence_tol is None else coincidence_tol
    inner = dom.interior
    R = np.zeros_like(U)
    res = dom.laplacian(U)
    contact = np.abs(rho[inner]) <= tol
    if np.any(contact):
        idx = inner[contact]
        P, nu, _, _ = obstacle._closest(U[idx])
        J = dom.central_jacobian(U)[contact]  # (k, m, n)
        src = np.zeros((idx.size, U.shape[1]))
        for k in range(dom.n):
            src += obstacle.second_fundamental_form(P, J[:, :, k], nu=nu)
        res[contact] -= src
    R[inner] = res
    keep = np.ones(inner.size, dtype=bool) if exclude is None else ~np.asarray(exclude)[inner]
    l2 = float(np.sqrt(dom.h**dom.n * np.sum(res[keep] ** 2)))
    return R, l2


def write_journal(path, journal):
    """Write ``iter,energy,step,pgnorm`` rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "energy", "step", "pgnorm"])
        for it, E, t, pg in journal:
            w.writerow([it, repr(float(E)), repr(float(t)), repr(float(pg))])
    return path


class ConstraintMapSolver(BaseEstimator):
    """Estimator interface to :func:`minimize`.

    ``fit(domain, boundary_data)`` solves; ``predict(points)`` interpolates
    the minimiser multilinearly.

    Parameters
    ----------
    obstacle : obstacle or None
    max_iters, grad_tol, init, accelerate, step0 : see :class:`SolverConfig`
    """

    def __init__(self, obstacle=None, max_iters=20000, grad_tol=1e-8,
                 init="boundary-harmonic", accelerate=True, step0=1.0):
        self.obstacle = obstacle
        self.max_iters = max_iters
        self.grad_tol = grad_tol
        self.init = init
        self.accelerate = accelerate
        self.step0 = step0

    def _config(self):
        return SolverConfig(max_iters=self.max_iters, grad_tol=self.grad_tol, init=self.init,
                            accelerate=self.accelerate, step0=self.step0)

    def fit(self, domain, boundary_data):
        self.result_ = minimize(domain, self.obstacle, boundary_data, self._config())
        self.field_ = self.result_.field
        self.energy_ = self.result_.energy_trace[-1]
        self.n_iter_ = self.result_.iterations
        return self

    def predict(self, points):
        vals, valid = self.field_.domain.interpolate(self.field_.values, points)
        return vals

    def transform(self, domain=None):
        return self.field_.values.copy()
