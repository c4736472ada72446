"""Command line entry point.

Examples
--------
::

    constraintmaps run scenarios/disk_h128.toml --out-dir runs
    constraintmaps run all-acceptance --jobs 4
    constraintmaps run-batch my_scenarios/ --jobs 2
    constraintmaps compare runs/disk_h128/manifest.json runs/disk_h256/manifest.json
    constraintmaps oracle radial --n 7 --a 0.5
"""

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from .exceptions import ConfigError, ConstraintMapError, SchemaMismatch
from .scenario import EXIT_CONFIG, EXIT_OK, bundled_scenarios, compare_runs, run_scenario


def _run_one(args):
    path, out_dir, seed = args
    try:
        b = run_scenario(path, out_dir, seed)
    except ConfigError as exc:
        return path, EXIT_CONFIG, str(exc), []
    return b.name, b.exit_code, b.error, b.report.get("checks", [])


def _run_many(paths, out_dir, seed, jobs):
    work = [(p, out_dir, seed) for p in paths]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_run_one, work))
    else:
        results = [_run_one(w) for w in work]
    return results


def _print_results(results):
    worst, failed = EXIT_OK, 0
    for name, code, err, checks in results:
        for c in checks:
            print(f"{'PASS' if c['passed'] else 'FAIL'}  {name}: {c['metric']}")
            failed += not c["passed"]
        if code:
            print(f"exit {code}  {name}: {err or 'not converged'}")
        worst = max(worst, code)
    return worst, failed


def cmd_run(ns):
    if ns.scenario == "all-acceptance":
        results = _run_many(bundled_scenarios(), ns.out_dir, ns.seed, ns.jobs)
        worst, failed = _print_results(results)
        total = sum(len(r[3]) for r in results)
        print(f"{total - failed}/{total} checks passed")
        return worst if worst else (1 if failed else EXIT_OK)
    name, code, err, checks = _run_one((ns.scenario, ns.out_dir, ns.seed))
    _print_results([(name, code, err, checks)])
    if code == EXIT_CONFIG:
        print(err, file=sys.stderr)
    return code


def cmd_run_batch(ns):
    if not os.path.isdir(ns.directory):
        print(f"not a directory: {ns.directory}", file=sys.stderr)
        return EXIT_CONFIG
    paths = sorted(os.path.join(ns.directory, f) for f in os.listdir(ns.directory)
                   if f.endswith(".toml"))
    worst, _ = _print_results(_run_many(paths, ns.out_dir, ns.seed, ns.jobs))
    return worst


def cmd_compare(ns):
    try:
        diff = compare_runs(ns.manifest_a, ns.manifest_b, rtol=ns.rtol, atol=ns.atol)
    except SchemaMismatch as exc:
        print(f"schema mismatch: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps(diff, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_oracle(ns):
    from .radial import closed_form_radial, write_profile

    try:
        prof = closed_form_radial(ns.n, ns.a)
    except (ConstraintMapError, ValueError) as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    if ns.output:
        write_profile(ns.output, prof)
    print(json.dumps(prof.summary(), indent=2, sort_keys=True))
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out-dir", default="runs", help="parent directory for run bundles")
    common.add_argument("--jobs", type=int, default=1, help="parallel scenarios")
    common.add_argument("--seed", type=int, default=None,
                        help="seed for randomised test-function suites")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="constraintmaps", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", parents=[common], help="run a scenario file or 'all-acceptance'")
    r.add_argument("scenario")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("run-batch", parents=[common], help="run every .toml in a directory")
    b.add_argument("directory")
    b.set_defaults(func=cmd_run_batch)

    c = sub.add_parser("compare", parents=[common], help="diff two run bundles")
    c.add_argument("manifest_a")
    c.add_argument("manifest_b")
    c.add_argument("--rtol", type=float, default=1e-9)
    c.add_argument("--atol", type=float, default=1e-12)
    c.set_defaults(func=cmd_compare)

    o = sub.add_parser("oracle", parents=[common], help="closed-form oracles")
    osub = o.add_subparsers(dest="oracle", required=True)
    rad = osub.add_parser("radial", parents=[common], help="radial closed form")
    rad.add_argument("--n", type=int, required=True)
    rad.add_argument("--a", type=float, required=True)
    rad.add_argument("--output", default=None, help="write the profile CSV here")
    rad.set_defaults(func=cmd_oracle)
    return p


def main(argv=None):
    ns = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if ns.jobs < 1:
        print("--jobs must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    return ns.func(ns)


if __name__ == "__main__":
    sys.exit(main())
