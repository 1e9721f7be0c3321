"""Command-line entry point.

Subcommands: ``map`` (compute a matching between two measure files),
``check`` (run property checkers on built-in maps/families), ``scm``
(validate/solve/intervene/counterfactual/sample a structural model) and
``repro-fig`` (three-matchings comparison on a seeded 49-point instance).

Every run is deterministic given (inputs, seed); the default seed is 1729
and can be overridden by the MTL_SEED environment variable or --seed.
Exit codes: 0 success / all properties pass, 1 I/O error, 2 usage or
precondition error, 3 property failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import presets
from .checks import (PointMap, check_cyclically_monotone, check_diagonal_nondecreasing,
                     check_family_algebra, check_gradient_field, check_triangular)
from .errors import FormatError, MtlError, SolverError, ValidationError
from .matchings import cm_map, kr_map, kr_via_eps, matching_cost, qp_map
from .measures import load_measure
from .scm import (InterventionSpec, counterfactual_family, counterfactual_point,
                  interventional_sample, intervene, load_scm, solve_forward, validate)

EXIT_OK = 0
EXIT_IO = 1
EXIT_USAGE = 2
EXIT_PROPERTY = 3

DEFAULT_SEED = presets.DEFAULT_SEED
MAP_PROPERTIES = ("cyclic_monotone", "gradient_field", "triangular", "diagonal_nondecreasing")
FAMILY_PROPERTIES = ("family_algebra",)


def _default_seed() -> int:
    env = os.environ.get("MTL_SEED")
    return int(env) if env else DEFAULT_SEED


def _dump(payload: dict, out: str | None) -> None:
    text = json.dumps(payload, sort_keys=True, indent=1)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def _config(args: argparse.Namespace, **extra) -> dict:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k != "func" and v is not None}
    cfg.update(extra)
    return cfg


def _write_segments(matching, path: str) -> None:
    lines = []
    for i, j in matching.pairs():
        src = ";".join(repr(float(c)) for c in matching.source.points[i])
        dst = ";".join(repr(float(c)) for c in matching.target.points[j])
        lines.append(f"{src};{dst}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_map(args) -> int:
    mu = load_measure(args.src)
    nu = load_measure(args.dst)
    if args.kind == "cm":
        matching = cm_map(mu, nu)
    elif args.kind == "qp":
        if not args.ref:
            raise ValidationError("--kind qp requires --ref")
        matching = qp_map(mu, nu, load_measure(args.ref))
    elif args.kind == "kr":
        matching = kr_map(mu, nu, tie_tol=args.tie_tol)
    else:
        if args.eps is None:
            raise ValidationError("--kind oteps requires --eps")
        matching = kr_via_eps(mu, nu, args.eps)
    payload = {"config": _config(args), "matching": matching.to_dict()}
    _dump(payload, args.out)
    seg_path = args.segments
    if seg_path is None and args.out:
        seg_path = str(Path(args.out).with_suffix(".segments.csv"))
    if seg_path:
        _write_segments(matching, seg_path)
    return EXIT_OK


def _map_reports(target: PointMap, properties, seed: int) -> list:
    rng = np.random.Generator(np.random.PCG64(seed))
    cloud = rng.random((25, target.dim))
    reports = []
    for prop in properties:
        if prop == "cyclic_monotone":
            reports.append(check_cyclically_monotone(target, cloud, seed=seed))
        elif prop == "gradient_field":
            reports.append(check_gradient_field(target, cloud[:10]))
        elif prop == "triangular":
            reports.append(check_triangular(target, cloud[:10], seed=seed))
        elif prop == "diagonal_nondecreasing":
            reports.append(check_diagonal_nondecreasing(target, cloud[:10], seed=seed))
        else:
            raise ValidationError(f"unknown map property {prop!r}")
    return reports


def cmd_check(args) -> int:
    seed = args.seed
    props = None if args.properties in (None, "all") else args.properties.split(",")
    reports = []
    if args.builtin in presets.MAP_BUILTINS:
        target = presets.MAP_BUILTINS[args.builtin]()
        reports = _map_reports(target, props or MAP_PROPERTIES, seed)
    elif args.builtin == "path-indep-counterexample":
        family = presets.cm_matching_family(seed=seed)
        wanted = props or ["family_algebra"]
        for prop in wanted:
            if prop in ("family_algebra", "path_independence"):
                reports.append(check_family_algebra(family))
            else:
                raise ValidationError(f"unknown family property {prop!r}")
    elif args.builtin in presets.SCM_BUILTINS:
        model = presets.SCM_BUILTINS[args.builtin]()
        a_values = (0.0, 0.3, 0.6)
        family = counterfactual_family(model, a_values)
        rng = np.random.Generator(np.random.PCG64(seed))
        pts = 0.2 + 0.6 * rng.random((20, model.d))
        wanted = props or ["family_algebra"]
        for prop in wanted:
            if prop in ("family_algebra", "path_independence"):
                reports.append(check_family_algebra(family, eval_points=pts))
            else:
                raise ValidationError(f"unknown family property {prop!r}")
    else:
        raise ValidationError(f"unknown builtin {args.builtin!r}")
    payload = {"config": _config(args), "reports": [r.to_dict() for r in reports]}
    _dump(payload, args.out)
    return EXIT_OK if all(r.passed for r in reports) else EXIT_PROPERTY


def _parse_vector(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError as exc:
        raise ValidationError(f"malformed vector {text!r}") from exc


def cmd_scm(args) -> int:
    if args.builtin:
        model = presets.SCM_BUILTINS[args.builtin]() if args.builtin in presets.SCM_BUILTINS \
            else None
        if model is None:
            raise ValidationError(f"unknown builtin {args.builtin!r}")
    elif args.model:
        model = load_scm(args.model)
    else:
        raise ValidationError("provide --model or --builtin")
    payload = {"config": _config(args, model_name=model.name)}
    if args.action == "validate":
        payload["summary"] = validate(model).to_dict()
    elif args.action == "solve":
        if args.a is None or args.u is None:
            raise ValidationError("solve requires --a and --u")
        x = solve_forward(model, args.a, _parse_vector(args.u))
        payload["x"] = [float(v) for v in x]
    elif args.action == "intervene":
        if args.value is None:
            raise ValidationError("intervene requires --value")
        payload["model"] = intervene(model, InterventionSpec("A", args.value)).to_dict()
    elif args.action == "counterfactual":
        if args.a is None or args.a2 is None:
            raise ValidationError("counterfactual requires --a and --a2")
        if args.x is not None:
            x = _parse_vector(args.x)
            out = counterfactual_point(model, args.a, args.a2, x)
            payload["x_prime"] = [float(v) for v in out]
        elif args.n is not None:
            if args.n < 1:
                raise ValidationError("sample count must be >= 1")
            src = interventional_sample(model, args.a, args.n, args.seed)
            dst = interventional_sample(model, args.a2, args.n, args.seed)
            payload["pairs"] = [[p.tolist(), q.tolist()]
                                for p, q in zip(src.points, dst.points)]
        else:
            raise ValidationError("counterfactual requires --x or --n")
    elif args.action == "sample":
        if args.a is None or args.n is None:
            raise ValidationError("sample requires --a and --n")
        if args.n < 1:
            raise ValidationError("sample count must be >= 1")
        payload["measure"] = interventional_sample(model, args.a, args.n, args.seed).to_dict()
    else:
        raise ValidationError(f"unknown action {args.action!r}")
    _dump(payload, args.out)
    return EXIT_OK


def cmd_repro_fig(args) -> int:
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    mu, nu, grid = presets.figure_instance(args.seed)
    matchings = {
        "cm": cm_map(mu, nu),
        "qp": qp_map(mu, nu, grid),
        "kr": kr_map(mu, nu),
    }
    costs = {}
    for name, matching in matchings.items():
        _write_segments(matching, str(outdir / f"{name}.segments.csv"))
        (outdir / f"{name}.matching.json").write_text(
            json.dumps(matching.to_dict(), sort_keys=True, indent=1) + "\n", encoding="utf-8")
        costs[name] = matching_cost(matching)
    perms = {name: m.perm for name, m in matchings.items()}
    distinct = (not np.array_equal(perms["cm"], perms["qp"])
                and not np.array_equal(perms["cm"], perms["kr"])
                and not np.array_equal(perms["qp"], perms["kr"]))
    summary = {
        "config": _config(args),
        "n": mu.n,
        "pairwise_distinct": bool(distinct),
        "costs_sq_euclidean": costs,
        "cm_is_cheapest": bool(costs["cm"] <= min(costs["qp"], costs["kr"]) + 1e-12),
    }
    (outdir / "summary.json").write_text(
        json.dumps(summary, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mtl",
        description="Canonical discrete transport matchings and structural counterfactuals")
    sub = parser.add_subparsers(dest="command", required=True)

    p_map = sub.add_parser("map", help="compute a matching between two measure files")
    p_map.add_argument("src")
    p_map.add_argument("dst")
    p_map.add_argument("--kind", required=True, choices=("cm", "qp", "kr", "oteps"))
    p_map.add_argument("--ref", help="reference measure file (qp only)")
    p_map.add_argument("--eps", type=float, help="hierarchical cost parameter (oteps only)")
    p_map.add_argument("--tie-tol", type=float, default=1e-9)
    p_map.add_argument("--seed", type=int, default=_default_seed())
    p_map.add_argument("--out")
    p_map.add_argument("--segments")
    p_map.set_defaults(func=cmd_map)

    p_check = sub.add_parser("check", help="run property checkers on a builtin target")
    p_check.add_argument("--builtin", required=True)
    p_check.add_argument("--properties", help="comma list or 'all'")
    p_check.add_argument("--seed", type=int, default=_default_seed())
    p_check.add_argument("--out")
    p_check.set_defaults(func=cmd_check)

    p_scm = sub.add_parser("scm", help="evaluate a structural model")
    p_scm.add_argument("action",
                       choices=("validate", "solve", "intervene", "counterfactual", "sample"))
    p_scm.add_argument("--model", help="model file (.scm text or .json)")
    p_scm.add_argument("--builtin")
    p_scm.add_argument("--a", type=float)
    p_scm.add_argument("--a2", type=float)
    p_scm.add_argument("--x", help="comma-separated endogenous point")
    p_scm.add_argument("--u", help="comma-separated noise vector")
    p_scm.add_argument("--value", type=float, help="intervention value")
    p_scm.add_argument("--n", type=int)
    p_scm.add_argument("--seed", type=int, default=_default_seed())
    p_scm.add_argument("--out")
    p_scm.set_defaults(func=cmd_scm)

    p_fig = sub.add_parser("repro-fig", help="three-matchings comparison on a seeded instance")
    p_fig.add_argument("--outdir", required=True)
    p_fig.add_argument("--seed", type=int, default=_default_seed())
    p_fig.set_defaults(func=cmd_repro_fig)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FormatError, ValidationError, SolverError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(exc, FormatError):
            return EXIT_IO
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except MtlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
