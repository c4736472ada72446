"""Scenario files: loading, validation and execution.

A scenario is one TOML file describing a single experiment. Running it
writes a bundle into ``<out_dir>/<name>/``:

* ``report.json``: metrics and checks, deterministic for a given build;
* ``manifest.json``: the resolved config, versions, artifact list, exit code
  and a timestamp;
* a field, profile or curve CSV and, for iterative solves, a journal CSV.

See the README for the full schema and every default.
"""

import copy
import datetime
import json
import os
import platform
import sys
from dataclasses import dataclass, field as dc_field

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import analysis
from .exceptions import (ConfigError, ConstraintMapError, DeepPenetration, InfeasibleBoundaryData,
                         InfeasibleEndpoint, InfeasibleField, SchemaMismatch, StepCollapse)
from .geometry import obstacle_from_config, ray_condition_check
from .grid import GridDomain, MapField, scaled_energy, write_field_csv
from .radial import (closed_form_radial, ellipsoid_lambda_min, equivariant_lift,
                     gradient_identity_check, hardy_check, radial_minimize, write_profile)
from .solver import SolverConfig, el_residual, minimize, write_journal

__all__ = [
    "EXIT_OK",
    "EXIT_CONFIG",
    "EXIT_INFEASIBLE",
    "EXIT_NONCONVERGED",
    "RunBundle",
    "load_scenario",
    "resolve_scenario",
    "run_scenario",
    "compare_runs",
    "bundled_scenarios",
]

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_NONCONVERGED = 0, 2, 3, 4

KINDS = ("solve", "radial", "geodesic", "field", "hardy", "ellipsoid", "ray_condition")
_FIELD_KINDS = ("identity", "constant", "linear", "harmonic2", "radial_lift", "tangent_circle",
                "normal_ray", "samples")
_DIAG_KINDS = ("el_residual", "coincidence", "subharmonicity", "monotonicity", "frequency",
               "critical_scale", "ainfty", "caccioppoli", "annulus", "rank", "dpi",
               "oracle_error", "energy")
_WEIGHTS = ("one", "abs_x", "half_plane", "grad_norm")

_SOLVER_DEFAULTS = SolverConfig().to_dict()
_DEFAULTS = {
    "domain": {"shape": "ball", "radius": 1.0, "offset": "cell", "clip_refine": 6},
    "radial": {"spacing": 1e-3, "method": "both", "identity_r_min": 0.1},
    "geodesic": {"N": 2000, "init": "auto", "continuation": True, "min_run": 3,
                 "max_iters": 20000, "grad_tol": 1e-4, "check_every": 10},
    "hardy": {"n": 7, "samples": 20, "knots": 8, "nodes": 4001},
    "ellipsoid": {"n": [7]},
    "ray_condition": {"boundary_samples": 256},
}
_DIAG_DEFAULTS = {
    "el_residual": {"coincidence_tol": None, "exclude_radius": 0.0},
    "coincidence": {"tol": None},
    "subharmonicity": {"min_radius": 0.0, "allow_nonconvex": False},
    "monotonicity": {"centers": [[0.0, 0.0]], "radii": None, "num_radii": 24},
    "frequency": {"x0": None, "r": 0.5},
    "critical_scale": {"x0": None, "eps0": 0.3, "ell0": 2.0, "r_max": None},
    "ainfty": {"weight": "one", "eps": 0.5, "gamma": 1.0, "centers": None, "r_min": 0.05,
               "r_max": 0.25, "num_radii": 5, "region_radius": None, "zero_tol": 0.0},
    "caccioppoli": {"centers": None, "r_min": 0.1, "r_max": 0.45, "num_radii": 5},
    "annulus": {"x0": None, "deltas": [0.05, 0.1, 0.2, 0.4], "unit_scale": None},
    "rank": {"sv_tol": 1e-8},
    "dpi": {"tol": 1e-6},
    "oracle_error": {},
    "energy": {},
}


# -- loading and validation -------------------------------------------------


def load_scenario(path):
    """Read a TOML scenario; returns the raw mapping with ``_path`` set."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError("<file>", f"cannot read {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("<file>", f"invalid TOML: {exc}") from None
    raw["_path"] = os.path.abspath(path)
    return raw


def _need(cfg, key, path):
    if key not in cfg:
        raise ConfigError(f"{path}.{key}" if path else key, "required key is missing")
    return cfg[key]


def _merge(defaults, given, path, allowed=None):
    allowed = set(defaults) | set(allowed or ())
    for k in given:
        if k not in allowed:
            raise ConfigError(f"{path}.{k}", "unknown key")
    out = copy.deepcopy(defaults)
    out.update(copy.deepcopy(given))
    return out


def _resolve_domain(raw):
    d = _merge(_DEFAULTS["domain"], raw, "domain",
               ("n", "h", "inv_h", "half_widths", "center"))
    n = _need(d, "n", "domain")
    if not isinstance(n, int) or n < 1:
        raise ConfigError("domain.n", "must be a positive integer")
    if "inv_h" in d:
        d["h"] = 1.0 / float(d.pop("inv_h"))
    if "h" not in d:
        raise ConfigError("domain.h", "give h or inv_h")
    if d["shape"] not in ("ball", "box"):
        raise ConfigError("domain.shape", f"unknown shape {d['shape']!r}")
    return d


def _resolve_field_spec(raw, path, base_dir):
    kind = _need(raw, "kind", path)
    if kind not in _FIELD_KINDS:
        raise ConfigError(f"{path}.kind", f"unknown field kind {kind!r}")
    spec = dict(raw)
    if kind == "constant":
        _need(spec, "value", path)
    if kind == "linear":
        _need(spec, "matrix", path)
        spec.setdefault("offset", None)
    if kind == "radial_lift":
        _need(spec, "a", path)
    if kind in ("tangent_circle", "normal_ray"):
        _need(spec, "a", path)
    if kind == "samples":
        p = _need(spec, "path", path)
        p = p if os.path.isabs(p) else os.path.join(base_dir, p)
        if not os.path.exists(p):
            raise ConfigError(f"{path}.path", f"file {p} does not exist")
        spec["path"] = p
    return spec


def _resolve_diagnostics(raw, kind):
    out = []
    names = set()
    for i, d in enumerate(raw):
        path = f"diagnostics[{i}]"
        k = _need(d, "kind", path)
        if k not in _DIAG_KINDS:
            raise ConfigError(f"{path}.kind", f"unknown diagnostic {k!r}")
        spec = _merge(_DIAG_DEFAULTS[k], {x: v for x, v in d.items() if x not in ("kind", "name", "field")},
                      path)
        if k == "ainfty" and spec["weight"] not in _WEIGHTS:
            raise ConfigError(f"{path}.weight", f"unknown weight {spec['weight']!r}")
        spec["kind"] = k
        spec["field"] = d.get("field")
        spec["name"] = d.get("name") or (k if spec["field"] is None else f"{k}[{spec['field']}]")
        if spec["name"] in names:
            raise ConfigError(f"{path}.name", f"duplicate diagnostic name {spec['name']!r}")
        names.add(spec["name"])
        out.append(spec)
    return out


def _criteria(c):
    if c is None:
        return []
    c = c if isinstance(c, list) else [c]
    if not all(isinstance(x, int) for x in c):
        raise ConfigError("criterion", "must be an integer or a list of integers")
    return sorted(c)


def resolve_scenario(raw, seed=None):
    """Fill defaults and validate; returns the resolved mapping recorded in the manifest."""
    raw = dict(raw)
    base_dir = os.path.dirname(raw.pop("_path", os.path.abspath("x")))
    top_allowed = {"name", "study", "kind", "criterion", "seed", "description", "domain",
                   "obstacle", "boundary", "fields", "solver", "diagnostics", "expect", "radial",
                   "geodesic", "hardy", "ellipsoid", "ray_condition"}
    for k in raw:
        if k not in top_allowed:
            raise ConfigError(k, "unknown key")
    name = _need(raw, "name", "")
    if not isinstance(name, str) or not name or os.sep in name:
        raise ConfigError("name", "must be a non-empty string without path separators")
    kind = _need(raw, "kind", "")
    if kind not in KINDS:
        raise ConfigError("kind", f"unknown scenario kind {kind!r}")
    res = {"name": name, "study": raw.get("study", name), "kind": kind,
           "criterion": _criteria(raw.get("criterion")), "description": raw.get("description", ""),
           "seed": int(raw.get("seed", 0) if seed is None else seed)}
    if kind in ("solve", "field"):
        res["domain"] = _resolve_domain(_need(raw, "domain", ""))
    if kind in ("solve", "geodesic") or ("obstacle" in raw and kind == "field"):
        obs = dict(_need(raw, "obstacle", ""))
        if obs.get("kind") not in ("ball", "ellipsoid", "planar_curve", "c_obstacle"):
            raise ConfigError("obstacle.kind", f"unknown obstacle kind {obs.get('kind')!r}")
        if obs["kind"] == "planar_curve" and "csv" in obs and not os.path.isabs(obs["csv"]):
            obs["csv"] = os.path.join(base_dir, obs["csv"])
        res["obstacle"] = obs
    if kind == "solve":
        res["boundary"] = _resolve_field_spec(_need(raw, "boundary", ""), "boundary", base_dir)
        res["solver"] = _merge(_SOLVER_DEFAULTS, raw.get("solver", {}), "solver")
    if kind == "field":
        fields = _need(raw, "fields", "")
        res["fields"] = []
        for i, f in enumerate(fields):
            spec = _resolve_field_spec(f, f"fields[{i}]", base_dir)
            spec.setdefault("name", f"field{i}")
            res["fields"].append(spec)
    if kind in ("solve", "field"):
        res["diagnostics"] = _resolve_diagnostics(raw.get("diagnostics", []), kind)
    for sec in ("radial", "geodesic", "hardy", "ellipsoid", "ray_condition"):
        if kind == sec:
            extra = {"radial": ("n", "a"), "geodesic": ("p", "q", "waypoints", "dpi_tol"),
                     "hardy": (), "ellipsoid": (), "ray_condition": ("obstacles",)}[sec]
            res[sec] = _merge(_DEFAULTS[sec], raw.get(sec, {}), sec, extra)
    if kind == "radial":
        for k in ("n", "a"):
            _need(res["radial"], k, "radial")
    if kind == "geodesic":
        for k in ("p", "q"):
            _need(res["geodesic"], k, "geodesic")
    if kind == "ray_condition":
        _need(res["ray_condition"], "obstacles", "ray_condition")
    expect = raw.get("expect", [])
    for i, e in enumerate(expect):
        _need(e, "metric", f"expect[{i}]")
        rules = {"value", "min", "max", "equals", "error", "finite"} & set(e)
        if not rules:
            raise ConfigError(f"expect[{i}]", "needs one of value, min, max, equals, error, finite")
    res["expect"] = list(expect)
    return res


# -- builders -----------------------------------------------------------------


def _build_domain(d):
    return GridDomain(d["n"], d["h"], shape=d["shape"], radius=d["radius"],
                      half_widths=d.get("half_widths"), center=d.get("center"),
                      offset=d["offset"], clip_refine=d["clip_refine"])


def _field_values(spec, domain, m=None):
    X = domain.nodes
    kind = spec["kind"]
    n = domain.n
    if kind == "identity":
        return X.copy()
    if kind == "constant":
        v = np.asarray(spec["value"], dtype=float)
        return np.tile(v, (len(X), 1))
    if kind == "linear":
        A = np.asarray(spec["matrix"], dtype=float)
        b = np.zeros(A.shape[0]) if spec.get("offset") is None else np.asarray(spec["offset"], float)
        return X @ A.T + b
    if kind == "harmonic2":
        if n != 2:
            raise ConfigError("boundary.kind", "harmonic2 needs a 2-dimensional domain")
        return np.column_stack([X[:, 0] ** 2 - X[:, 1] ** 2, 2 * X[:, 0] * X[:, 1]])
    if kind == "radial_lift":
        prof = closed_form_radial(max(n, 2), float(spec["a"]))
        return equivariant_lift(prof, X)
    if kind == "tangent_circle":
        # unit speed in x1 along the circle of radius a
        a = float(spec["a"])
        th = X[:, 0] / a
        return a * np.column_stack([np.cos(th), np.sin(th)])
    if kind == "normal_ray":
        # all values on one outward normal ray of the circle of radius a
        a = float(spec["a"])
        s = a + 0.1 * (X[:, 0] - X[:, 0].min())
        return np.column_stack([s, np.zeros_like(s)])
    if kind == "samples":
        data = np.loadtxt(spec["path"], delimiter=",", ndmin=2, skiprows=1)
        vals = data[:, 1 + n:]
        if vals.shape[0] != domain.num_nodes:
            raise ConfigError("boundary.path", "sample file does not match the domain")
        cols = spec.get("columns")
        return vals[:, :cols] if cols else vals[:, :m] if m else vals
    raise ConfigError("boundary.kind", f"unknown field kind {kind!r}")


def _expected_dim(obs_cfg, fallback):
    kind = obs_cfg["kind"]
    if kind == "ball":
        return int(obs_cfg.get("dim", fallback))
    if kind == "ellipsoid":
        return len(obs_cfg["semi_axes"])
    return 2


# -- diagnostics ----------------------------------------------------------------


def _centers(spec, n):
    c = spec.get("centers")
    return np.zeros((1, n)) if c is None else np.atleast_2d(np.asarray(c, dtype=float))


def _point(spec, key, n):
    v = spec.get(key)
    return np.zeros(n) if v is None else np.asarray(v, dtype=float)


def _weight(spec, fld):
    dom = fld.domain
    X = dom.nodes
    w = spec["weight"]
    if w == "one":
        return np.ones(dom.num_nodes)
    if w == "abs_x":
        return np.linalg.norm(X, axis=1)
    if w == "half_plane":
        return (X[:, 0] > 0).astype(float)
    return analysis.gradient_magnitude(fld)


def _run_diagnostic(spec, fld, obstacle, ctx):
    """Returns a list of ``(metric_name, value, extremizer_ball, flags)``."""
    k, name = spec["kind"], spec["name"]
    dom = fld.domain
    n = dom.n
    if k == "energy":
        return [(name, dom.energy(fld.values), None, {})]
    if k == "el_residual":
        ex = None
        if spec["exclude_radius"] > 0:
            ex = np.linalg.norm(dom.nodes, axis=1) < spec["exclude_radius"]
        _, l2 = el_residual(fld, obstacle, spec["coincidence_tol"], exclude=ex)
        return [(name, l2, None, {"h": dom.h, "l2_over_h": l2 / dom.h})]
    if k == "coincidence":
        coin, free = analysis.coincidence_and_free_boundary(fld, obstacle, spec["tol"])
        return [(f"{name}.coincidence_nodes", int(coin.sum()), None, {}),
                (f"{name}.free_boundary_nodes", int(free.sum()), None,
                 {"subset": bool(np.all(coin[free]))})]
    if k == "subharmonicity":
        region = np.linalg.norm(dom.nodes, axis=1) >= spec["min_radius"]
        v = analysis.dist_subharmonicity(fld, obstacle, region, spec["allow_nonconvex"])
        return [(name, v, None, {"convex": bool(obstacle.is_convex)})]
    if k == "monotonicity":
        radii = spec["radii"]
        if radii is None:
            radii = np.linspace(2 * dom.h, dom.distance_to_boundary(np.zeros(n)), spec["num_radii"])
        out = analysis.monotonicity_scan(fld, spec["centers"], radii)
        return [(name, out["max_violation"], None,
                 {"h": dom.h, "evaluated": out["evaluated"], "where": out["where"]})]
    if k == "frequency":
        x0 = _point(spec, "x0", n)
        return [(name, analysis.frequency(fld, x0, spec["r"]), (x0, spec["r"]),
                 {"mean": "spherical"})]
    if k == "critical_scale":
        x0 = _point(spec, "x0", n)
        v = analysis.critical_scale(fld, x0, spec["eps0"], spec["ell0"], spec["r_max"])
        return [(name, v, None, {"eps0": spec["eps0"], "ell0": spec["ell0"]})]
    if k in ("ainfty", "caccioppoli"):
        scan = analysis.BallScanConfig.geometric(_centers(spec, n), spec["r_min"], spec["r_max"],
                                                 spec["num_radii"],
                                                 region_radius=spec.get("region_radius"))
        if k == "ainfty":
            rep = analysis.ainfty_report(analysis.WeightSample(dom, _weight(spec, fld)),
                                         spec["eps"], spec["gamma"], scan, spec["zero_tol"])
        else:
            rep = analysis.caccioppoli_constant(fld, scan)
        out = []
        for m in rep.metrics:
            b = m["extremizer_ball"]
            ball = None if b is None else (np.asarray(b["center"]), b["r"])
            out.append((f"{name}.{m['metric']}", m["value"], ball, m["flags"]))
        return out
    if k == "annulus":
        x0 = _point(spec, "x0", n)
        res = analysis.annulus_decay(fld, x0, spec["deltas"], spec["unit_scale"])
        out = [(f"{name}.theta", res.theta, None, {"unit_scale": res.config["unit_scale"]})]
        for d, q in res.ratios:
            out.append((f"{name}.ratio({d:g})", q, None, {}))
        return out
    if k == "rank":
        r = analysis.rank_field(fld, spec["sv_tol"])
        inner = r[dom.interior]
        return [(f"{name}.min", int(inner.min()), None, {}),
                (f"{name}.max", int(inner.max()), None, {})]
    if k == "dpi":
        d = analysis.dpi_field(fld, obstacle, spec["tol"])
        vals = d.values[d.defined]
        return [(f"{name}.zero_fraction", d.zero_fraction, None,
                 {"defined_nodes": int(d.defined.sum())}),
                (f"{name}.max", float(vals.max()) if vals.size else float("nan"), None, {})]
    if k == "oracle_error":
        a = float(getattr(obstacle, "radius", np.nan))
        prof = closed_form_radial(max(n, 2), a)
        ex = equivariant_lift(prof, dom.nodes)
        err = float(np.max(np.abs(fld.values - ex)))
        return [(name, err, None, {"h": dom.h, "err_over_h": err / dom.h})]
    raise ConfigError("diagnostics.kind", k)


def _diagnostics(res, fields, obstacle, ctx, metrics):
    for spec in res["diagnostics"]:
        key = spec["field"]
        if key is None:
            key = next(iter(fields))
        if key not in fields:
            raise ConfigError(f"diagnostics.{spec['name']}.field", f"unknown field {key!r}")
        try:
            rows = _run_diagnostic(spec, fields[key], obstacle, ctx)
        except ConfigError:
            raise
        except ConstraintMapError as exc:
            rows = [(spec["name"], None, None, {"error": type(exc).__name__, "message": str(exc)})]
        for name, value, ball, flags in rows:
            _add(metrics, name, value, ball, flags, spec)


def _add(metrics, name, value, ball=None, flags=None, config=None):
    b = None if ball is None else {"center": [float(c) for c in np.atleast_1d(ball[0])],
                                   "r": float(ball[1])}
    metrics.append({"metric": name, "value": value, "extremizer_ball": b,
                    "flags": flags or {}, "config": config or {}})


# -- scenario kinds -------------------------------------------------------------


def _run_solve(res, out_dir, metrics, artifacts, ctx):
    dom = _build_domain(res["domain"])
    m = _expected_dim(res["obstacle"], dom.n)
    obstacle = obstacle_from_config(res["obstacle"], dim=m)
    values = _field_values(res["boundary"], dom, m)
    if values.shape[1] != obstacle.dim:
        raise ConfigError("boundary", f"boundary data has {values.shape[1]} components, "
                                      f"the obstacle lives in R^{obstacle.dim}")
    data = MapField(dom, values.copy())
    rho = obstacle.signed_distance(values[dom.boundary_mask])
    if np.any(rho < -SolverConfig().constraint_tol):
        raise InfeasibleBoundaryData(f"boundary data penetrates the obstacle (min rho {rho.min():.3e})")
    cfg = SolverConfig(**res["solver"])
    result = minimize(dom, obstacle, data, cfg)
    ctx["result"] = result
    ctx["domain"] = dom
    ctx["obstacle"] = obstacle
    tr = np.asarray(result.energy_trace)
    for k, v in result.summary().items():
        _add(metrics, f"solve.{k}", v)
    _add(metrics, "solve.energy_trace_monotone", bool(np.all(np.diff(tr) <= 0)))
    artifacts.append(write_field_csv(os.path.join(out_dir, "field.csv"), result.field, obstacle))
    artifacts.append(write_journal(os.path.join(out_dir, "journal.csv"), result.journal))
    _diagnostics(res, {"solution": result.field}, obstacle, ctx, metrics)
    return result.converged


def _run_field(res, out_dir, metrics, artifacts, ctx):
    dom = _build_domain(res["domain"])
    obstacle = None
    if "obstacle" in res:
        obstacle = obstacle_from_config(res["obstacle"], dim=_expected_dim(res["obstacle"], dom.n))
    fields = {}
    for spec in res["fields"]:
        fields[spec["name"]] = MapField(dom, _field_values(spec, dom))
    ctx["fields"] = fields
    _diagnostics(res, fields, obstacle, ctx, metrics)
    return True


def _run_radial(res, out_dir, metrics, artifacts, ctx):
    cfg = res["radial"]
    ns = cfg["n"] if isinstance(cfg["n"], list) else [cfg["n"]]
    as_ = cfg["a"] if isinstance(cfg["a"], list) else [cfg["a"]]
    ctx["profiles"] = {}
    for n in ns:
        for a in as_:
            tag = f"n{n}_a{a:g}"
            if cfg["method"] in ("both", "closed_form"):
                cf = closed_form_radial(n, a)
                ctx["profiles"][(n, a, "closed_form")] = cf
                _add(metrics, f"{tag}.t_a", cf.t_a)
                _add(metrics, f"{tag}.r_a", cf.r_a)
                for key, v in sorted(cf.residuals.items()):
                    _add(metrics, f"{tag}.residual.{key}", v)
                _add(metrics, f"{tag}.w(1)", float(cf.evaluate(np.array([1.0]))[0]))
                _add(metrics, f"{tag}.identity_error.closed_form", gradient_identity_check(cf))
                p, _ = write_profile(os.path.join(out_dir, f"profile_{tag}_closed_form.csv"), cf)
                artifacts.append(p)
            if cfg["method"] in ("both", "numeric"):
                num = radial_minimize(n, a, spacing=cfg["spacing"])
                ctx["profiles"][(n, a, "numeric")] = num
                ref = closed_form_radial(n, a)
                _add(metrics, f"{tag}.numeric.r_hat", num.r_a)
                _add(metrics, f"{tag}.numeric.sup_error",
                     float(np.max(np.abs(num.w - ref.evaluate(num.r_nodes)))))
                _add(metrics, f"{tag}.numeric.r_a_error", abs(num.r_a - ref.r_a))
                _add(metrics, f"{tag}.identity_error.numeric",
                     gradient_identity_check(num, r_min=cfg["identity_r_min"]))
                p, _ = write_profile(os.path.join(out_dir, f"profile_{tag}_numeric.csv"), num)
                artifacts.append(p)
    return True


def _run_geodesic(res, out_dir, metrics, artifacts, ctx):
    from .geodesics import minimize_geodesic, projected_image_profile, write_curve_csv

    g = res["geodesic"]
    obstacle = obstacle_from_config(res["obstacle"], dim=2)
    cfg = SolverConfig(max_iters=g["max_iters"], grad_tol=g["grad_tol"], check_every=g["check_every"])
    # endpoints may name a point attribute of the obstacle, e.g. "launch_point"
    p, q = (np.asarray(getattr(obstacle, v) if isinstance(v, str) else v, dtype=float)
            for v in (g["p"], g["q"]))
    curve = minimize_geodesic(obstacle, p, q, N=g["N"], config=cfg, init=g["init"],
                              waypoints=g.get("waypoints"), continuation=g["continuation"])
    prof = projected_image_profile(curve, obstacle, g.get("dpi_tol"), g["min_run"])
    ctx.update(curve=curve, profile=prof, obstacle=obstacle)
    for k, v in curve.summary().items():
        _add(metrics, f"geodesic.{k}", v)
    for k, v in prof.summary().items():
        _add(metrics, f"image.{k}", v)
    runs = prof.locally_constant_runs
    # a run counts when it is a proper sub-interval of [0, 1]
    _add(metrics, "image.proper_constant_run", bool(any(b - a < 1 for a, b in runs)))
    artifacts.append(write_curve_csv(os.path.join(out_dir, "curve.csv"), curve, obstacle, prof))
    journal = [(i, E, np.nan, np.nan) for i, E in enumerate(curve.energy_trace)]
    artifacts.append(write_journal(os.path.join(out_dir, "journal.csv"), journal))
    if getattr(obstacle, "dim", 2) == 2 and res["obstacle"]["kind"] in ("c_obstacle", "planar_curve"):
        holds, viol = ray_condition_check(obstacle, 256)
        _add(metrics, "ray_condition", holds, None, {"violations": len(viol), "boundary_samples": 256})
    return curve.converged


def _run_hardy(res, out_dir, metrics, artifacts, ctx):
    c = res["hardy"]
    n = c["n"]
    r = np.linspace(0.0, 1.0, c["nodes"])
    lhs, rhs = hardy_check(n, 1.0 - r, r)
    _add(metrics, "hardy.linear.ratio", lhs / rhs)
    rng = np.random.default_rng(res["seed"])
    ratios = []
    for _ in range(c["samples"]):
        knots = np.concatenate([[0.0], np.sort(rng.uniform(0, 1, c["knots"])), [1.0]])
        vals = rng.normal(size=knots.size)
        vals[-1] = 0.0
        lhs, rhs = hardy_check(n, np.interp(r, knots, vals), r)
        ratios.append(lhs / rhs)
    ctx["ratios"] = ratios
    _add(metrics, "hardy.random.max_ratio", float(max(ratios)), None,
         {"samples": c["samples"], "seed": res["seed"]})
    _add(metrics, "hardy.random.all_hold", bool(all(q <= 1.0 for q in ratios)))
    return True


def _run_ellipsoid(res, out_dir, metrics, artifacts, ctx):
    ns = res["ellipsoid"]["n"]
    for n in ns if isinstance(ns, list) else [ns]:
        try:
            _add(metrics, f"lambda_min(n={n})", ellipsoid_lambda_min(n))
        except ConstraintMapError as exc:
            _add(metrics, f"lambda_min(n={n})", None, None, {"error": type(exc).__name__})
    return True


def _run_ray(res, out_dir, metrics, artifacts, ctx):
    c = res["ray_condition"]
    for i, ocfg in enumerate(c["obstacles"]):
        obs = obstacle_from_config(ocfg)
        holds, viol = ray_condition_check(obs, c["boundary_samples"])
        label = ocfg.get("label", f"{ocfg['kind']}{i}")
        _add(metrics, f"ray_condition.{label}", holds, None,
             {"violations": len(viol), "boundary_samples": c["boundary_samples"]})
    return True


_RUNNERS = {"solve": _run_solve, "field": _run_field, "radial": _run_radial,
            "geodesic": _run_geodesic, "hardy": _run_hardy, "ellipsoid": _run_ellipsoid,
            "ray_condition": _run_ray}


# -- checks and bundle --------------------------------------------------------------


def _check(rule, metrics):
    name = rule["metric"]
    hit = [m for m in metrics if m["metric"] == name]
    if not hit:
        return {"metric": name, "passed": False, "rule": rule, "note": "metric missing"}
    m = hit[0]
    v = m["value"]
    ok = True
    if "error" in rule:
        ok = m["flags"].get("error") == rule["error"]
    elif v is None or (isinstance(v, float) and np.isnan(v)):
        ok = False
    else:
        if "equals" in rule:
            ok &= v == rule["equals"]
        if "value" in rule:
            tol = rule.get("atol", 0.0) + rule.get("rtol", 0.0) * abs(rule["value"])
            ok &= v == rule["value"] or abs(v - rule["value"]) <= tol
        if "finite" in rule:
            ok &= bool(np.isfinite(v)) == rule["finite"]
        if "min" in rule:
            ok &= v >= rule["min"]
        if "max" in rule:
            ok &= v <= rule["max"]
    return {"metric": name, "passed": bool(ok), "rule": rule}


@dataclass
class RunBundle:
    """Outcome of one scenario run."""

    name: str
    out_dir: str
    exit_code: int
    artifacts: list
    report_path: str
    manifest_path: str
    report: dict
    context: dict = dc_field(default_factory=dict)
    error: str = ""

    @property
    def checks_passed(self):
        return all(c["passed"] for c in self.report.get("checks", []))


def _versions():
    import scipy
    import sklearn

    from . import __version__

    return {"python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "scikit-learn": sklearn.__version__,
            "constraintmaps": __version__}


def _dump(path, obj):
    with open(path, "w") as fh:
        fh.write(json.dumps(analysis._jsonable(obj), indent=2, sort_keys=True))
        fh.write("\n")
    return path


def run_scenario(path_or_cfg, out_dir="runs", seed=None):
    """Run one scenario and write its bundle.

    Parameters
    ----------
    path_or_cfg : str or dict
        Scenario file or an already loaded mapping.
    out_dir : str
        Parent directory; the bundle goes to ``out_dir/<name>``.
    seed : int, optional
        Overrides the scenario seed (randomised test-function suites only).

    Returns
    -------
    RunBundle
        ``exit_code`` follows the command line convention: 0 success, 2 config
        error, 3 infeasibility, 4 non-convergence or solver failure.
    """
    raw = load_scenario(path_or_cfg) if isinstance(path_or_cfg, (str, os.PathLike)) else dict(path_or_cfg)
    res = resolve_scenario(raw, seed)
    target = os.path.join(out_dir, res["name"])
    os.makedirs(target, exist_ok=True)
    metrics, artifacts, ctx = [], [], {}
    code, err = EXIT_OK, ""
    try:
        converged = _RUNNERS[res["kind"]](res, target, metrics, artifacts, ctx)
        if not converged:
            code = EXIT_NONCONVERGED
    except ConfigError:
        raise
    except (InfeasibleBoundaryData, InfeasibleEndpoint, InfeasibleField) as exc:
        code, err = EXIT_INFEASIBLE, f"{type(exc).__name__}: {exc}"
    except (StepCollapse, DeepPenetration, ConstraintMapError) as exc:
        code, err = EXIT_NONCONVERGED, f"{type(exc).__name__}: {exc}"
    checks = [_check(rule, metrics) for rule in res["expect"]]
    report = {"scenario": res["name"], "study": res["study"], "kind": res["kind"],
              "criterion": res["criterion"], "metrics": metrics, "checks": checks,
              "status": {"exit_code": code, "error": err,
                         "flagged": code == EXIT_NONCONVERGED}}
    report_path = _dump(os.path.join(target, "report.json"), report)
    manifest = {"scenario": res["name"], "study": res["study"], "resolved_config": res,
                "solver_defaults": _SOLVER_DEFAULTS, "versions": _versions(),
                "platform": {"system": platform.system(), "machine": platform.machine()},
                "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
                "argv": list(sys.argv), "artifacts": [os.path.basename(a) for a in artifacts],
                "report": "report.json", "exit_code": code, "error": err,
                "complete": code in (EXIT_OK, EXIT_NONCONVERGED) and not err}
    manifest_path = _dump(os.path.join(target, "manifest.json"), manifest)
    return RunBundle(res["name"], target, code, artifacts, report_path, manifest_path,
                     analysis._jsonable(report), ctx, err)


# -- comparison -------------------------------------------------------------------


def _flatten(d, prefix=""):
    out = {}
    if isinstance(d, dict):
        for k, v in d.items():
            out.update(_flatten(v, f"{prefix}.{k}" if prefix else str(k)))
    elif isinstance(d, list) and d and all(isinstance(x, dict) for x in d):
        for i, v in enumerate(d):
            out.update(_flatten(v, f"{prefix}[{i}]"))
    else:
        out[prefix] = d
    return out


def compare_runs(path_a, path_b, rtol=1e-9, atol=1e-12):
    """Metric-by-metric differences between two bundles.

    Parameters
    ----------
    path_a, path_b : str
        Manifest paths.

    Returns
    -------
    dict
        ``config``: ``[key, a, b]`` for every differing resolved config key;
        ``metrics``: one row per metric whose values differ beyond
        ``atol + rtol |a|`` (with difference and ratio ``b / a``);
        ``only_in_a`` / ``only_in_b``: metric names present on one side.
        Identical bundles give empty lists.

    Raises
    ------
    SchemaMismatch
        If the manifests belong to different studies or lack the expected keys.
    """
    docs = []
    for p in (path_a, path_b):
        with open(p) as fh:
            man = json.load(fh)
        for key in ("scenario", "study", "resolved_config", "report"):
            if key not in man:
                raise SchemaMismatch(f"{p}: manifest lacks {key!r}")
        with open(os.path.join(os.path.dirname(p), man["report"])) as fh:
            rep = json.load(fh)
        docs.append((man, rep))
    (ma, ra), (mb, rb) = docs
    if ma["study"] != mb["study"]:
        raise SchemaMismatch(f"different studies: {ma['study']!r} vs {mb['study']!r}")
    if ma["resolved_config"].get("kind") != mb["resolved_config"].get("kind"):
        raise SchemaMismatch("different scenario kinds")
    fa, fb = _flatten(ma["resolved_config"]), _flatten(mb["resolved_config"])
    cfg = [[k, fa.get(k), fb.get(k)] for k in sorted(set(fa) | set(fb)) if fa.get(k) != fb.get(k)]
    va = {m["metric"]: m["value"] for m in ra["metrics"]}
    vb = {m["metric"]: m["value"] for m in rb["metrics"]}
    rows = []
    for k in sorted(set(va) & set(vb)):
        a, b = va[k], vb[k]
        if isinstance(a, (int, float)) and isinstance(b, (int, float)) and not isinstance(a, bool):
            if abs(b - a) > atol + rtol * abs(a):
                rows.append({"metric": k, "a": a, "b": b, "diff": b - a,
                             "ratio": (b / a) if a != 0 else None})
        elif a != b:
            rows.append({"metric": k, "a": a, "b": b})
    return {"study": ma["study"], "a": ma["scenario"], "b": mb["scenario"], "config": cfg,
            "metrics": rows, "only_in_a": sorted(set(va) - set(vb)),
            "only_in_b": sorted(set(vb) - set(va))}


def bundled_scenarios():
    """Paths of the scenario files shipped with the package, sorted by name."""
    here = os.path.join(os.path.dirname(__file__), "scenarios")
    return sorted(os.path.join(here, f) for f in os.listdir(here) if f.endswith(".toml"))
