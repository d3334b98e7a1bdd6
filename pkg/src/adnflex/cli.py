"""Batch command-line interface.

Subcommands: trace (boundary sweeps), costmap (dispatch grids), secure
(boundary intersection), validate (re-verify a stored run). Every run writes
an append-only directory with a manifest listing each output file and its
SHA-256, so results are auditable and byte-reproducible.

Exit codes: 0 success, 1 verification failure, 2 usage/validation error,
3 computational failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from datetime import datetime, timezone
from types import SimpleNamespace

import numpy as np

from . import __version__, report
from .acropf import ObjectiveSpec, TargetPoint
from .boundary import (
    ANGULAR,
    PERIMETER,
    BoundaryTraceError,
    FlexibilityBoundary,
    intersect_areas,
    trace_boundary,
)
from .economics import GridSpec, compare_surfaces, cost_map, default_grid
from .ipm import SolverSettings
from .network import CaseError, case_settings, parse_case
from .oracle import verify_point
from .topology import Configuration, EnumerationError, enumerate_configurations

EXIT_OK = 0
EXIT_VERIFICATION = 1
EXIT_USAGE = 2
EXIT_COMPUTE = 3


def _fail(code: int, message: str) -> int:
    print(f"adnflex: {message}", file=sys.stderr)
    return code


def _load_case(path: str):
    if not os.path.isfile(path):
        raise FileNotFoundError(f"file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_case(text), text


def _settings_from(args, case) -> SolverSettings:
    overrides = case_settings(case)
    tol = args.tol if args.tol is not None else overrides.get("tol_kkt", 1e-8)
    max_iter = args.max_iter if args.max_iter is not None else int(overrides.get("max_iter", 500))
    multistart = (
        args.multistart if args.multistart is not None else int(overrides.get("multistart", 0))
    )
    return SolverSettings(tol_kkt=tol, max_iter=max_iter, multistart=multistart)


def _select_configs(case, wanted: list[str] | None):
    configs = enumerate_configurations(case)
    if not wanted:
        return configs
    by_label = {c.label: c for c in configs}
    missing = [w for w in wanted if w not in by_label]
    if missing:
        raise KeyError(
            f"unknown configuration label(s) {missing}; available: {sorted(by_label)}"
        )
    return [by_label[w] for w in wanted]


class RunWriter:
    """Collects output files for a run directory and writes the manifest."""

    def __init__(self, out_dir: str, case_text: str, command: str, params: dict,
                 deterministic: bool):
        self.out_dir = out_dir
        self.deterministic = deterministic
        self.command = command
        self.params = params
        self.case_text = case_text
        self.outputs: dict[str, str] = {}
        os.makedirs(out_dir, exist_ok=True)
        self.write("case.case", case_text)

    def write(self, name: str, content: str) -> None:
        data = content.encode("utf-8")
        with open(os.path.join(self.out_dir, name), "wb") as fh:
            fh.write(data)
        self.outputs[name] = hashlib.sha256(data).hexdigest()

    def finish(self) -> None:
        manifest = {
            "tool": "adnflex",
            "version": __version__,
            "command": self.command,
            "parameters": self.params,
            "case_sha256": hashlib.sha256(self.case_text.encode()).hexdigest(),
            "outputs": dict(sorted(self.outputs.items())),
        }
        if not self.deterministic:
            manifest["created_utc"] = datetime.now(timezone.utc).isoformat()
        self.write_manifest(manifest)

    def write_manifest(self, manifest: dict) -> None:
        data = json.dumps(manifest, sort_keys=True, indent=1).encode("utf-8")
        with open(os.path.join(self.out_dir, "manifest.json"), "wb") as fh:
            fh.write(data)


def _trace_all(case, configs, args, settings):
    boundaries = []
    for config in configs:
        boundaries.append(
            trace_boundary(
                case,
                config,
                n_points=args.points,
                mode=args.mode,
                step_mva=args.step,
                settings=settings,
            )
        )
    return boundaries


def cmd_trace(args) -> int:
    try:
        case, case_text = _load_case(args.case)
    except (FileNotFoundError, CaseError) as exc:
        return _fail(EXIT_USAGE, str(exc))
    settings = _settings_from(args, case)
    try:
        configs = _select_configs(case, args.config)
    except (KeyError, EnumerationError) as exc:
        return _fail(EXIT_USAGE, str(exc))
    try:
        boundaries = _trace_all(case, configs, args, settings)
    except BoundaryTraceError as exc:
        for line in exc.diagnostics:
            print(f"adnflex:   {line}", file=sys.stderr)
        return _fail(EXIT_COMPUTE, str(exc))

    run = RunWriter(
        args.out, case_text, "trace",
        {
            "case": args.case,
            "configs": [c.label for c in configs],
            "mode": args.mode,
            "step_mva": args.step,
            "points": args.points,
            "tol_kkt": settings.tol_kkt,
        },
        args.deterministic,
    )
    for boundary in boundaries:
        run.write(f"boundary_{boundary.config_label}.csv", report.boundary_csv(boundary))
        run.write(f"boundary_{boundary.config_label}.json", report.boundary_json(boundary))
    run.write(
        "boundaries.svg",
        report.boundaries_svg(boundaries, deterministic=args.deterministic),
    )
    run.finish()
    print(f"trace complete: {len(boundaries)} boundaries -> {args.out}")
    return EXIT_OK


def cmd_secure(args) -> int:
    try:
        case, case_text = _load_case(args.case)
    except (FileNotFoundError, CaseError) as exc:
        return _fail(EXIT_USAGE, str(exc))
    settings = _settings_from(args, case)
    try:
        configs = _select_configs(case, None)
        boundaries = _trace_all(case, configs, args, settings)
    except BoundaryTraceError as exc:
        return _fail(EXIT_COMPUTE, str(exc))
    except EnumerationError as exc:
        return _fail(EXIT_USAGE, str(exc))
    usable = [b for b in boundaries if not b.degenerate]
    secure = intersect_areas(usable) if usable else None
    run = RunWriter(
        args.out, case_text, "secure",
        {
            "case": args.case,
            "configs": [c.label for c in configs],
            "mode": args.mode,
            "step_mva": args.step,
            "points": args.points,
        },
        args.deterministic,
    )
    for boundary in boundaries:
        run.write(f"boundary_{boundary.config_label}.csv", report.boundary_csv(boundary))
        run.write(f"boundary_{boundary.config_label}.json", report.boundary_json(boundary))
    if secure is not None:
        run.write("secure.csv", report.secure_csv(secure))
        if not secure.vertices:
            print("adnflex: warning: secure area is empty", file=sys.stderr)
    run.write(
        "boundaries.svg",
        report.boundaries_svg(boundaries, secure, deterministic=args.deterministic),
    )
    run.finish()
    area = secure.area() if secure is not None else 0.0
    print(f"secure area: {area:.4f} MVA^2 over {len(boundaries)} configurations -> {args.out}")
    return EXIT_OK


def cmd_costmap(args) -> int:
    try:
        case, case_text = _load_case(args.case)
    except (FileNotFoundError, CaseError) as exc:
        return _fail(EXIT_USAGE, str(exc))
    if args.step <= 0:
        return _fail(EXIT_USAGE, "step must be positive")
    settings = _settings_from(args, case)
    wanted = list(args.config or [])
    if args.compare:
        wanted = args.compare.split(",")
        if len(wanted) != 2:
            return _fail(EXIT_USAGE, "--compare takes exactly two labels, e.g. a,b")
    try:
        configs = _select_configs(case, wanted or None)
    except (KeyError, EnumerationError) as exc:
        return _fail(EXIT_USAGE, str(exc))
    if not wanted:
        # Default economic analysis covers normal-operation configurations
        # only; contingency topologies stay behind explicit --config.
        normal_like = [c for c in configs if c.label in ("normal", "all-on")]
        configs = normal_like or configs[:1]

    # Common grid: union bounding box of the traced boundaries, one step pad.
    trace_step = max(args.step * 4, 0.4)
    try:
        vertices = []
        for config in configs:
            b = trace_boundary(case, config, mode=PERIMETER, step_mva=trace_step,
                               settings=settings)
            vertices.extend(b.vertices)
    except BoundaryTraceError as exc:
        return _fail(EXIT_COMPUTE, str(exc))
    if args.p_min is not None:
        grid = GridSpec(args.p_min, args.p_max, args.q_min, args.q_max, args.step)
    else:
        grid = default_grid(vertices, args.step)

    surfaces = []
    for config in configs:
        surfaces.append(
            cost_map(case, config, grid, settings=settings, jobs=args.jobs,
                     keep_x=not args.no_solutions)
        )
    run = RunWriter(
        args.out, case_text, "costmap",
        {
            "case": args.case,
            "configs": [c.label for c in configs],
            "step_mva": args.step,
            "grid": [grid.p_min, grid.p_max, grid.q_min, grid.q_max],
            "tol_kkt": settings.tol_kkt,
        },
        args.deterministic,
    )
    for surface in surfaces:
        label = surface.config_label
        run.write(f"surface_{label}.csv", report.surface_csv(surface, case))
        run.write(f"surface_{label}.json", report.surface_json(surface, case))
        for u in range(len(case.flex_units)):
            run.write(
                f"units_{label}_{case.flex_units[u].label}.svg",
                report.unit_map_svg(surface, case, u, deterministic=args.deterministic),
            )
        if surface.errors:
            print(
                f"adnflex: {len(surface.errors)} node(s) failed in {label}",
                file=sys.stderr,
            )
    run.write(
        "costs.svg", report.cost_surface_svg(surfaces, deterministic=args.deterministic)
    )
    if args.compare:
        cmp = compare_surfaces(surfaces[0], surfaces[1])
        run.write("compare.csv", report.comparison_csv(cmp, surfaces[0], surfaces[1]))
        run.write("compare.json", json.dumps(cmp.summary(), sort_keys=True, indent=1))
        print(json.dumps(cmp.summary(), sort_keys=True))
    run.finish()
    print(f"costmap complete: {len(surfaces)} surface(s) -> {args.out}")
    return EXIT_OK


def _reverify_boundary(case, configs_by_label, doc) -> list[str]:
    failures = []
    config = configs_by_label.get(doc["config_label"])
    if config is None:
        return [f"boundary references unknown configuration {doc['config_label']!r}"]
    for pt in doc["points"]:
        if pt["x"] is None or pt["status"] != "optimal":
            continue
        objective = ObjectiveSpec.boundary(pt["w_p"], pt["w_q"], pin_p=pt["pin_p"])
        sol = SimpleNamespace(x=np.array(pt["x"]))
        rep = verify_point(case, config, sol, objective=objective)
        if not rep.passed:
            failures.append(
                f"{doc['config_label']} sweep {pt['sweep_key']}: {'; '.join(rep.messages)}"
            )
    return failures


def _reverify_surface(case, configs_by_label, doc) -> list[str]:
    failures = []
    config = configs_by_label.get(doc["config_label"])
    if config is None:
        return [f"surface references unknown configuration {doc['config_label']!r}"]
    for pt in doc["points"]:
        if not pt["feasible"] or pt.get("x") is None:
            continue
        objective = ObjectiveSpec.min_cost(TargetPoint(pt["p_mw"], pt["q_mvar"]))
        sol = SimpleNamespace(x=np.array(pt["x"]))
        rep = verify_point(case, config, sol, objective=objective)
        if not rep.passed:
            failures.append(
                f"{doc['config_label']} node ({pt['p_mw']:.3f},{pt['q_mvar']:.3f}): "
                + "; ".join(rep.messages)
            )
    return failures


def cmd_validate(args) -> int:
    manifest_path = os.path.join(args.rundir, "manifest.json")
    if not os.path.isfile(manifest_path):
        return _fail(EXIT_USAGE, f"no manifest in {args.rundir}")
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)

    failures: list[str] = []
    for name, digest in manifest.get("outputs", {}).items():
        path = os.path.join(args.rundir, name)
        if not os.path.isfile(path):
            failures.append(f"missing artifact {name}")
            continue
        with open(path, "rb") as fh:
            actual = hashlib.sha256(fh.read()).hexdigest()
        if actual != digest:
            failures.append(f"hash mismatch for {name}")

    case_path = os.path.join(args.rundir, "case.case")
    if not os.path.isfile(case_path):
        return _fail(EXIT_USAGE, "run directory has no case.case")
    try:
        case, _ = _load_case(case_path)
    except CaseError as exc:
        return _fail(EXIT_USAGE, f"stored case invalid: {exc}")
    configs_by_label = {c.label: c for c in enumerate_configurations(case)}

    checked = 0
    for name in manifest.get("outputs", {}):
        path = os.path.join(args.rundir, name)
        if not os.path.isfile(path):
            continue
        if name.startswith("boundary_") and name.endswith(".json"):
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
            failures.extend(_reverify_boundary(case, configs_by_label, doc))
            checked += sum(1 for pt in doc["points"] if pt["x"] is not None)
        elif name.startswith("surface_") and name.endswith(".json"):
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
            failures.extend(_reverify_surface(case, configs_by_label, doc))
            checked += sum(1 for pt in doc["points"] if pt.get("x") is not None)

    for failure in failures:
        print(f"adnflex: FAIL {failure}", file=sys.stderr)
    print(f"validate: {checked} stored solutions re-verified, {len(failures)} failure(s)")
    return EXIT_VERIFICATION if failures else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adnflex",
        description="Aggregated P-Q flexibility analysis under reconfiguration",
    )
    parser.add_argument("--version", action="version", version=f"adnflex {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", default="adnflex-run", help="run directory")
        p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
        p.add_argument("--tol", type=float, default=None, help="KKT tolerance")
        p.add_argument("--max-iter", type=int, default=None)
        p.add_argument("--multistart", type=int, default=None)
        p.add_argument(
            "--deterministic",
            action="store_true",
            help="suppress timestamps for byte-identical reruns",
        )

    p_trace = sub.add_parser("trace", help="trace flexibility boundaries")
    p_trace.add_argument("case")
    p_trace.add_argument("--config", action="append", help="restrict to a label")
    p_trace.add_argument("--mode", choices=[PERIMETER, ANGULAR], default=PERIMETER)
    p_trace.add_argument("--step", type=float, default=0.08, help="P step, MVA")
    p_trace.add_argument("--points", type=int, default=200, help="angular point count")
    common(p_trace)
    p_trace.set_defaults(func=cmd_trace)

    p_cost = sub.add_parser("costmap", help="least-cost dispatch over a P-Q grid")
    p_cost.add_argument("case")
    p_cost.add_argument("--config", action="append")
    p_cost.add_argument("--step", type=float, default=0.05, help="grid step, MVA")
    p_cost.add_argument("--compare", help="two labels, e.g. normal,all-on")
    p_cost.add_argument("--p-min", type=float, default=None)
    p_cost.add_argument("--p-max", type=float, default=None)
    p_cost.add_argument("--q-min", type=float, default=None)
    p_cost.add_argument("--q-max", type=float, default=None)
    p_cost.add_argument("--no-solutions", action="store_true",
                        help="do not store primal vectors (smaller artifacts)")
    common(p_cost)
    p_cost.set_defaults(func=cmd_costmap)

    p_sec = sub.add_parser("secure", help="intersect all configuration areas")
    p_sec.add_argument("case")
    p_sec.add_argument("--mode", choices=[PERIMETER, ANGULAR], default=PERIMETER)
    p_sec.add_argument("--step", type=float, default=0.08)
    p_sec.add_argument("--points", type=int, default=200)
    common(p_sec)
    p_sec.set_defaults(func=cmd_secure)

    p_val = sub.add_parser("validate", help="re-verify a stored run directory")
    p_val.add_argument("rundir")
    common(p_val)
    p_val.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "step", 1.0) <= 0:
        return _fail(EXIT_USAGE, "step must be positive")
    try:
        return args.func(args)
    except BoundaryTraceError as exc:
        return _fail(EXIT_COMPUTE, str(exc))
    except KeyboardInterrupt:
        return _fail(EXIT_COMPUTE, "interrupted")


if __name__ == "__main__":
    sys.exit(main())
