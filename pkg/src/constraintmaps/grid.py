"""Lattice domains, discrete maps and the forward-difference Dirichlet energy.

The energy of a field ``u`` on a domain with spacing ``h`` is the sum over
lattice edges ``(i, i + e_k)`` with both endpoints in the domain of
``|u_j - u_i|^2 h^(n-2)``, i.e. forward differences squared times the cell
volume ``h^n``. Each edge is a "cell" of the quadrature; its dual box is the
axis aligned cube of side ``h`` centred at the edge midpoint.
"""

import os
import tempfile

import numpy as np
import scipy.sparse as sp

from .exceptions import BallOutsideDomain, DeepPenetration, InfeasibleBoundaryData
from .validation import check_point, check_points, check_scalar

__all__ = [
    "GridDomain",
    "MapField",
    "GradientField",
    "dirichlet_energy",
    "scaled_energy",
    "energy_gradient",
    "project_field",
    "CachedProjector",
    "write_field_csv",
    "read_field_csv",
]


class GridDomain:
    """Uniform lattice nodes inside a ball or a box in R^n.

    Parameters
    ----------
    n : int
        Dimension, 1 to 3.
    h : float
        Lattice spacing.
    shape : {"ball", "box"}
    radius : float
        Radius for ``shape="ball"``.
    half_widths : sequence of float
        Half side lengths for ``shape="box"``.
    center : sequence of float, optional
        Centre of the shape, default the origin.
    offset : {"cell", "node"}
        ``"cell"`` puts nodes at ``center + (k + 1/2) h`` so that the centre
        is a cell centre and the lattice is symmetric under the hyperoctahedral
        group; ``"node"`` puts a node at the centre.
    clip_refine : int
        Sub-samples per axis used to estimate the volume fraction of cells cut
        by a ball boundary.
    """

    def __init__(self, n, h, shape="ball", radius=1.0, half_widths=None, center=None,
                 offset="cell", clip_refine=6):
        self.n = check_scalar(n, "n", min_val=1, max_val=3, integer=True)
        self.h = check_scalar(h, "h", min_val=0.0, include_min=False)
        if shape not in ("ball", "box"):
            raise ValueError(f"shape must be 'ball' or 'box', got {shape!r}")
        if offset not in ("cell", "node"):
            raise ValueError(f"offset must be 'cell' or 'node', got {offset!r}")
        self.shape = shape
        self.offset = offset
        self.clip_refine = check_scalar(clip_refine, "clip_refine", min_val=1, integer=True)
        self.center = np.zeros(self.n) if center is None else check_point(center, self.n, "center")
        if shape == "ball":
            self.radius = check_scalar(radius, "radius", min_val=0.0, include_min=False)
            self.half_widths = np.full(self.n, self.radius)
        else:
            if half_widths is None:
                raise ValueError("box domains need half_widths")
            hw = np.broadcast_to(np.asarray(half_widths, dtype=float), (self.n,)).copy()
            if np.any(hw <= 0):
                raise ValueError("half_widths must be positive")
            self.half_widths = hw
            self.radius = None
        self._build()

    def _build(self):
        n, h = self.n, self.h
        shift = 0.5 if self.offset == "cell" else 0.0
        kmax = np.floor(self.half_widths / h - shift + 1e-9).astype(int)
        # lattice index k runs over [-kmax - 1, kmax] for cells, [-kmax, kmax] for nodes
        klo = -kmax - (1 if shift else 0)
        axes = [np.arange(klo[d], kmax[d] + 1) for d in range(n)]
        mesh = np.meshgrid(*axes, indexing="ij")
        K = np.stack([m.ravel() for m in mesh], axis=1)
        X = self.center + (K + shift) * h
        if self.shape == "ball":
            inside = np.linalg.norm(X - self.center, axis=1) <= self.radius * (1 + 1e-12)
        else:
            inside = np.all(np.abs(X - self.center) <= self.half_widths * (1 + 1e-12), axis=1)
        K, X = K[inside], X[inside]
        self.lattice = K
        self.nodes = X
        self.num_nodes = len(X)
        self._klo = klo
        dims = kmax - klo + 1
        self._lookup = -np.ones(tuple(dims), dtype=np.int64)
        self._lookup[tuple((K - klo).T)] = np.arange(self.num_nodes)
        nbr = -np.ones((self.num_nodes, 2 * n), dtype=np.int64)
        for d in range(n):
            for j, sgn in enumerate((1, -1)):
                Kn = K.copy()
                Kn[:, d] += sgn
                ok = np.all((Kn - klo >= 0) & (Kn - klo < dims), axis=1)
                nbr[ok, 2 * d + j] = self._lookup[tuple((Kn[ok] - klo).T)]
        self.neighbors = nbr
        self.boundary_mask = np.any(nbr < 0, axis=1)
        self.interior = np.flatnonzero(~self.boundary_mask)
        self._nbr_int = nbr[self.interior]
        # forward edges per axis: (tail, head)
        self.edges = []
        for d in range(n):
            tail = np.flatnonzero(nbr[:, 2 * d] >= 0)
            self.edges.append((tail, nbr[tail, 2 * d]))
        self.lattice.setflags(write=False)
        self.nodes.setflags(write=False)

    # -- geometry ---------------------------------------------------------------

    def contains_ball(self, x0, r, tol=1e-12):
        x0 = check_point(x0, self.n, "x0")
        if self.shape == "ball":
            return np.linalg.norm(x0 - self.center) + r <= self.radius * (1 + tol)
        return bool(np.all(np.abs(x0 - self.center) + r <= self.half_widths * (1 + tol)))

    def distance_to_boundary(self, x0):
        x0 = check_point(x0, self.n, "x0")
        if self.shape == "ball":
            return float(self.radius - np.linalg.norm(x0 - self.center))
        return float(np.min(self.half_widths - np.abs(x0 - self.center)))

    def box_fraction(self, C, x0, r):
        """Volume fraction of the cubes of side ``h`` centred at ``C`` inside ``B_r(x0)``."""
        h, n = self.h, self.n
        d = np.linalg.norm(C - x0, axis=1)
        half_diag = 0.5 * h * np.sqrt(n)
        w = (d + half_diag <= r).astype(float)
        cut = np.flatnonzero((d - half_diag < r) & (d + half_diag > r))
        if cut.size:
            q = self.clip_refine
            sub = (np.arange(q) + 0.5) / q - 0.5
            offs = np.stack([g.ravel() for g in np.meshgrid(*([sub] * n), indexing="ij")], axis=1) * h
            pts = C[cut][:, None, :] + offs[None, :, :]
            w[cut] = np.mean(np.linalg.norm(pts - x0, axis=2) <= r, axis=1)
        return w

    def node_weights(self, x0, r):
        """Quadrature weights (volumes) of node cells clipped to ``B_r(x0)``."""
        return self.box_fraction(self.nodes, np.asarray(x0, float), r) * self.h**self.n

    def edge_weights(self, x0, r):
        """Clipped volume fractions of the edge cells, one array per axis."""
        x0 = np.asarray(x0, float)
        out = []
        for d, (tail, _) in enumerate(self.edges):
            C = self.nodes[tail].copy()
            C[:, d] += 0.5 * self.h
            out.append(self.box_fraction(C, x0, r))
        return out

    # -- discrete operators on raw arrays ----------------------------------------

    @property
    def graph_laplacian(self):
        """Edge-graph Laplacian ``K`` so that ``energy(U) = h^(n-2) tr(U^T K U)``.

        Row ``i`` of ``K`` at an interior node is ``2n u_i - sum(neighbours)``,
        i.e. ``-h^2`` times the discrete Laplacian.
        """
        if getattr(self, "_K", None) is None:
            N = self.num_nodes
            rows, cols, vals = [], [], []
            for tail, head in self.edges:
                rows += [tail, head, tail, head]
                cols += [tail, head, head, tail]
                one = np.ones(len(tail))
                vals += [one, one, -one, -one]
            K = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                              shape=(N, N))
            K.sum_duplicates()
            self._K = K
        return self._K

    def energy(self, U, weights=None):
        """Forward-difference Dirichlet energy of raw node values ``U``."""
        total = 0.0
        scale = self.h ** (self.n - 2)
        for d, (tail, head) in enumerate(self.edges):
            diff = U[head] - U[tail]
            sq = np.einsum("ij,ij->i", diff, diff)
            total += np.dot(weights[d], sq) if weights is not None else sq.sum()
        return float(total * scale)

    def laplacian(self, U):
        """Discrete 2n-point Laplacian at interior nodes, shape (n_interior, m)."""
        nb = self._nbr_int
        acc = U[nb[:, 0]].copy()
        for j in range(1, nb.shape[1]):
            acc += U[nb[:, j]]
        acc -= (2 * self.n) * U[self.interior]
        return acc / self.h**2

    def gradient(self, U):
        """Gradient of :meth:`energy`, zero on boundary nodes."""
        G = np.zeros_like(U)
        G[self.interior] = (-2.0 * self.h**self.n) * self.laplacian(U)
        return G

    def central_jacobian(self, U):
        """Central-difference Jacobian at interior nodes, shape (n_interior, m, n)."""
        nb = self._nbr_int
        cols = [(U[nb[:, 2 * d]] - U[nb[:, 2 * d + 1]]) / (2 * self.h) for d in range(self.n)]
        return np.stack(cols, axis=2)

    def locate(self, P):
        """Lattice cell of points ``P`` for multilinear interpolation.

        Returns corner node indices (k, 2^n), weights (k, 2^n) and a validity
        mask; invalid rows have a missing corner.
        """
        P = check_points(P, self.n)
        shift = 0.5 if self.offset == "cell" else 0.0
        s = (P - self.center) / self.h - shift
        base = np.floor(s).astype(np.int64)
        frac = s - base
        corners = np.array(np.meshgrid(*([[0, 1]] * self.n), indexing="ij")).reshape(self.n, -1).T
        idx = np.full((len(P), len(corners)), -1, dtype=np.int64)
        wts = np.ones((len(P), len(corners)))
        dims = np.array(self._lookup.shape)
        for c, off in enumerate(corners):
            Kc = base + off - self._klo
            ok = np.all((Kc >= 0) & (Kc < dims), axis=1)
            idx[ok, c] = self._lookup[tuple(Kc[ok].T)]
            for d in range(self.n):
                wts[:, c] *= frac[:, d] if off[d] else 1.0 - frac[:, d]
        valid = np.all(idx >= 0, axis=1)
        return idx, wts, valid

    def interpolate(self, U, P):
        """Multilinear interpolation of node values ``U`` at points ``P``."""
        idx, wts, valid = self.locate(P)
        out = np.full((len(idx), U.shape[1]), np.nan)
        if np.any(valid):
            out[valid] = np.einsum("kc,kcm->km", wts[valid], U[idx[valid]])
        return out, valid

    def describe(self):
        d = {"n": self.n, "h": self.h, "shape": self.shape, "offset": self.offset,
             "center": self.center.tolist(), "clip_refine": self.clip_refine,
             "num_nodes": int(self.num_nodes)}
        if self.shape == "ball":
            d["radius"] = self.radius
        else:
            d["half_widths"] = self.half_widths.tolist()
        return d

    def __repr__(self):
        return (f"GridDomain(n={self.n}, h={self.h!r}, shape={self.shape!r}, "
                f"num_nodes={self.num_nodes})")


class MapField:
    """Node values of a discrete map ``u: domain -> R^m``.

    Boundary values are frozen at construction; :meth:`with_values` returns a
    new field that keeps them. When an obstacle is attached, boundary data
    must be feasible.
    """

    def __init__(self, domain, values, obstacle=None, constraint_tol=1e-10):
        V = np.array(values, dtype=float)
        if V.ndim == 1:
            V = V[:, None]
        if V.shape[0] != domain.num_nodes:
            raise ValueError(f"values must have {domain.num_nodes} rows, got {V.shape[0]}")
        if not np.all(np.isfinite(V)):
            raise ValueError("values must be finite")
        self.domain = domain
        self.values = V
        self.m = V.shape[1]
        self.boundary_values = V[domain.boundary_mask].copy()
        self.boundary_values.setflags(write=False)
        self.obstacle = obstacle
        self.constraint_tol = constraint_tol
        if obstacle is not None:
            if obstacle.dim != self.m:
                raise ValueError(f"obstacle lives in R^{obstacle.dim}, field in R^{self.m}")
            rho = obstacle.signed_distance(self.boundary_values)
            if np.any(rho < -constraint_tol):
                raise InfeasibleBoundaryData(
                    f"boundary data penetrates the obstacle (min rho = {rho.min():.3e})")

    @classmethod
    def from_function(cls, domain, func, **kwargs):
        vals = np.asarray(func(np.array(domain.nodes)), dtype=float)
        return cls(domain, vals, **kwargs)

    def with_values(self, values):
        """Copy with new interior values; boundary values are restored."""
        new = object.__new__(MapField)
        new.__dict__.update(self.__dict__)
        V = np.array(values, dtype=float)
        V[self.domain.boundary_mask] = self.boundary_values
        new.values = V
        return new

    def rho(self, obstacle=None):
        obstacle = obstacle or self.obstacle
        return obstacle.signed_distance(self.values)

    def is_feasible(self, obstacle=None, tol=None):
        tol = self.constraint_tol if tol is None else tol
        return bool(np.all(self.rho(obstacle) >= -tol))

    def __repr__(self):
        return f"MapField(domain={self.domain!r}, m={self.m})"


class GradientField:
    """Per-node vectors; zero on boundary nodes."""

    def __init__(self, domain, values):
        self.domain = domain
        self.values = values

    def dot(self, other):
        return float(np.sum(self.values * np.asarray(other)))

    def norm(self):
        return float(np.linalg.norm(self.values))


def dirichlet_energy(field):
    """Forward-difference Dirichlet energy of ``field``."""
    return field.domain.energy(field.values)


def scaled_energy(field, x0, r):
    """``r^(2-n)`` times the energy of the cells inside ``B_r(x0)``.

    Raises
    ------
    BallOutsideDomain
        If the ball is not contained in the domain shape.
    """
    dom = field.domain
    x0 = check_point(x0, dom.n, "x0")
    if r < 2 * dom.h * (1 - 1e-12):
        raise ValueError(f"r must be at least 2h = {2 * dom.h}, got {r}")
    if not dom.contains_ball(x0, r):
        raise BallOutsideDomain(f"B_{r}({x0.tolist()}) is not inside the domain")
    return r ** (2 - dom.n) * dom.energy(field.values, dom.edge_weights(x0, r))


def energy_gradient(field):
    """Variational gradient of :func:`dirichlet_energy` (``-2 h^n`` times the Laplacian)."""
    return GradientField(field.domain, field.domain.gradient(field.values))


def _project_values(U, obstacle, skip=None):
    """Project infeasible rows of ``U`` onto the boundary; returns a copy."""
    out = U.copy()
    if getattr(obstacle, "cheap_distance", False):
        rho = obstacle.signed_distance(U)
        bad = rho < 0
        if skip is not None:
            bad &= ~skip
        if not np.any(bad):
            return out
        idx = np.flatnonzero(bad)
        P, _, r, unique = obstacle._closest(U[idx])
    else:
        # one nearest-point query serves both the sign test and the projection
        P, _, r, unique = obstacle._closest(U)
        bad = r < 0
        if skip is not None:
            bad &= ~skip
        if not np.any(bad):
            return out
        idx = np.flatnonzero(bad)
        P, r, unique = P[idx], r[idx], unique[idx]
    deep = ~unique | (np.abs(r) >= obstacle.tubular_radius)
    if np.any(deep):
        raise DeepPenetration(
            f"{int(deep.sum())} node(s) beyond the tubular neighbourhood "
            f"(min rho = {r.min():.3e})")
    out[idx] = P
    return out


class CachedProjector:
    """Projection onto the feasible set that skips certainly feasible rows.

    The signed distance is 1-Lipschitz, so a row that had distance ``rho_a``
    at an anchor position stays feasible while it moves less than ``rho_a``
    away from it. Only the remaining rows are queried exactly; the output is
    identical to :func:`_project_values`.
    """

    def __init__(self, obstacle, skip=None):
        self.obstacle = obstacle
        self.skip = skip
        self._anchor = None
        self._rho = None

    def __call__(self, U):
        if self._anchor is None or self._anchor.shape != U.shape:
            self._anchor = U.copy()
            self._rho = np.full(len(U), -np.inf)
        moved = np.sqrt(np.sum((U - self._anchor) ** 2, axis=1))
        check = self._rho - moved <= 0
        if self.skip is not None:
            check &= ~self.skip
        out = U.copy()
        idx = np.flatnonzero(check)
        if idx.size == 0:
            return out
        P, _, r, unique = self.obstacle._closest(U[idx])
        bad = r < 0
        if np.any(bad):
            deep = (~unique | (np.abs(r) >= self.obstacle.tubular_radius)) & bad
            if np.any(deep):
                raise DeepPenetration(
                    f"{int(deep.sum())} node(s) beyond the tubular neighbourhood "
                    f"(min rho = {r.min():.3e})")
            out[idx[bad]] = P[bad]
        # re-anchor the queried rows at their output positions
        self._anchor[idx] = out[idx]
        self._rho[idx] = np.where(bad, 0.0, r)
        return out


def project_field(field, obstacle):
    """Replace infeasible node values by their nearest boundary points.

    Feasible values and boundary nodes are left untouched.
    """
    bmask = field.domain.boundary_mask
    rho_b = obstacle.signed_distance(field.values[bmask])
    if np.any(rho_b < 0):
        raise InfeasibleBoundaryData("boundary data penetrates the obstacle")
    V = _project_values(field.values, obstacle, skip=bmask)
    return field.with_values(V)


def write_field_csv(path, field, obstacle=None):
    """Write ``node,x1..xn,u1..um,rho`` rows atomically."""
    dom = field.domain
    obstacle = obstacle or field.obstacle
    rho = obstacle.signed_distance(field.values) if obstacle is not None else np.full(dom.num_nodes, np.nan)
    header = ["node"] + [f"x{i + 1}" for i in range(dom.n)] + [f"u{i + 1}" for i in range(field.m)] + ["rho"]
    data = np.column_stack([np.arange(dom.num_nodes), dom.nodes, field.values, rho])
    fmt = ["%d"] + ["%.17g"] * (data.shape[1] - 1)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            np.savetxt(fh, data, fmt=fmt, delimiter=",", header=",".join(header), comments="")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def read_field_csv(path, domain, **kwargs):
    """Read a field written by :func:`write_field_csv` back onto ``domain``."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    n = sum(1 for c in header if c.startswith("x"))
    m = sum(1 for c in header if c.startswith("u"))
    if n != domain.n or data.shape[0] != domain.num_nodes:
        raise ValueError("field file does not match the domain")
    if not np.allclose(data[:, 1:1 + n], domain.nodes, atol=1e-12 * max(1.0, domain.h)):
        raise ValueError("node coordinates do not match the domain")
    return MapField(domain, data[:, 1 + n:1 + n + m], **kwargs)
