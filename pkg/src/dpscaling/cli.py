"""Command-line front end.

Subcommands cover the full workflow: ``calibrate`` for accounting,
``pipeline`` for the grid-to-law stages, ``plan`` / ``sweep`` /
``vector-field`` for analyses, and ``serve`` for the HTTP API.

Exit codes: 0 success, 2 validation error, 3 numeric failure. Errors go to
stderr as JSON ``{code, message}``.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import grid as grid_mod
from . import lawfit
from .accounting import Batching, CalibrationError, DEFAULT_DELTA
from .grid import GridLoadError, GridState, GridStateError, MeasurementGrid
from .lawfit import DomainError, ParametricFitError
from .planner import Budgets, PlanError, sweep
from .accounting import PrivacySpec
from .reports import (
    calibrate_report,
    law_metadata,
    plan_report,
    sweep_csv_files,
    sweep_report,
    vector_field_report,
)
from .serialize import dumps_json, read_json, write_csv, write_json

EXIT_VALIDATION = 2
EXIT_NUMERIC = 3

MANIFEST_SCHEMA_VERSION = 1


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_VALIDATION):
        super().__init__(message)
        self.code = code


def default_delta() -> float:
    raw = os.environ.get("DPSCALING_DELTA")
    if raw is None:
        return DEFAULT_DELTA
    try:
        value = float(raw)
    except ValueError:
        raise CliError(f"DPSCALING_DELTA={raw!r} is not a number")
    return value


def parse_axis(spec: str) -> np.ndarray:
    """Axis values: 'geom:lo:hi:n', 'pow2:lo:hi', or comma-separated."""
    if spec.startswith("geom:"):
        _, lo, hi, n = spec.split(":")
        return np.geomspace(float(lo), float(hi), int(n))
    if spec.startswith("pow2:"):
        _, lo, hi = spec.split(":")
        return 2.0 ** np.arange(int(lo), int(hi) + 1)
    return np.array([float(v) for v in spec.split(",")])


def load_manifest(path) -> dict:
    doc = read_json(path)
    if doc.get("schema_version") != MANIFEST_SCHEMA_VERSION:
        raise CliError(f"unsupported manifest schema_version in {path}")
    root = Path(path).parent
    for section in ("laws", "grids"):
        entries = doc.get(section, {})
        if len(set(entries)) != len(entries):
            raise CliError(f"duplicate {section} names in manifest")
        for name, rel in entries.items():
            target = root / rel
            if not target.exists():
                raise CliError(f"manifest {section} entry {name!r} missing: {target}")
    return doc


def resolve_law_path(ref: str, manifest_path: str | None) -> Path:
    if manifest_path:
        manifest = load_manifest(manifest_path)
        laws = manifest.get("laws", {})
        if ref in laws:
            return Path(manifest_path).parent / laws[ref]
    path = Path(ref)
    if not path.exists():
        raise CliError(f"law {ref!r} not found (no file and no manifest entry)")
    return path


def load_law(ref: str, manifest_path: str | None = None):
    return lawfit.law_from_json_obj(read_json(resolve_law_path(ref, manifest_path)))


def _load_grid_any(path: str) -> MeasurementGrid:
    if path.endswith(".csv"):
        return grid_mod.load_grid_csv(path)
    return MeasurementGrid.from_json_obj(read_json(path))


def _emit(obj, out_path: str | None) -> None:
    text = dumps_json(obj, indent=2)
    if out_path:
        Path(out_path).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------


def cmd_calibrate(args) -> int:
    report = calibrate_report(
        epsilon=args.epsilon,
        delta=args.delta if args.delta is not None else default_delta(),
        data=int(args.data),
        batch=args.batch,
        steps=int(args.steps),
        batching=Batching(args.batching),
    )
    _emit(report, args.out)
    return 0


def cmd_pipeline_synth(args) -> int:
    law = load_law(args.law, args.manifest)
    if not isinstance(law, lawfit.ParametricLaw):
        raise CliError("synth requires a parametric generator law")
    # model sizes and iteration counts are integers in the measurement schema
    m_axis = np.unique(np.round(parse_axis(args.m_axis)))
    t_axis = np.unique(np.round(parse_axis(args.t_axis)))
    grid = grid_mod.synth_grid(
        law,
        m_axis,
        t_axis,
        parse_axis(args.nbr_axis),
        noise_sd=args.noise_sd,
        seed=args.seed,
        learning_rates=parse_axis(args.learning_rates),
    )
    rows = []
    for l, lr in enumerate(grid.learning_rates):
        for i, m in enumerate(grid.axis_m):
            for j, t in enumerate(grid.axis_t):
                for k, s in enumerate(grid.axis_nbr):
                    rows.append((int(m), int(t), float(s), float(lr), grid.loss[l, i, j, k]))
    write_csv(args.out, grid_mod.CSV_HEADER, rows)
    return 0


def cmd_pipeline_clean(args) -> int:
    grid = _load_grid_any(getattr(args, "in"))
    if grid.state >= GridState.MONOTONE:
        write_json(args.out, grid.to_json_obj())  # already clean: write through
        return 0
    cleaned = grid_mod.clean(grid, window=args.window)
    write_json(args.out, cleaned.to_json_obj())
    return 0


def cmd_pipeline_extrapolate(args) -> int:
    grid = _load_grid_any(getattr(args, "in"))
    target = np.concatenate([grid.axis_t, parse_axis(args.target_t)])
    fit_range = None
    if args.fit_range:
        lo, hi = args.fit_range.split(":")
        fit_range = (float(lo), float(hi))
    out = grid_mod.extrapolate(grid, target, fit_range)
    write_json(args.out, out.to_json_obj())
    return 0


def cmd_pipeline_fit_interp(args) -> int:
    grid = _load_grid_any(getattr(args, "in"))
    law = lawfit.build_interpolator(grid)
    write_json(args.out, lawfit.law_to_json_obj(law))
    return 0


def cmd_pipeline_fit_parametric(args) -> int:
    grid = _load_grid_any(getattr(args, "in"))
    if grid.state < GridState.MONOTONE:
        raise CliError("fit-parametric expects a cleaned grid")
    mm, tt, ss = np.meshgrid(grid.axis_m, grid.axis_t, grid.axis_nbr, indexing="ij")
    keep = ss.ravel() > 0  # the non-private layer never enters the fit
    filters = lawfit.FitFilters(
        min_iterations=args.min_iterations,
        min_nbr=args.min_nbr,
        max_loss=args.max_loss,
    )
    law = lawfit.fit_parametric(
        mm.ravel()[keep],
        args.context_batch * tt.ravel()[keep],
        ss.ravel()[keep],
        grid.loss.ravel()[keep],
        form=args.form,
        iterations=tt.ravel()[keep],
        filters=filters,
        huber_delta=args.huber_delta,
        seed=args.seed,
    )
    write_json(args.out, lawfit.law_to_json_obj(law))
    print(dumps_json({
        "coefficients": law.coefficients,
        "final_loss": law.fit_metadata["final_loss"],
        "n_rows": law.fit_metadata["n_rows"],
    }, indent=2))
    return 0


def cmd_plan(args) -> int:
    law = load_law(args.law, args.manifest)
    budgets = Budgets(
        args.compute,
        PrivacySpec(args.epsilon, args.delta if args.delta is not None else default_delta()),
        int(args.data),
    )
    report = plan_report(law, budgets, args.seq_len, args.points_per_decade)
    _emit(report, args.out)
    return 0


def cmd_sweep(args) -> int:
    law = load_law(args.law, args.manifest)
    delta = args.delta if args.delta is not None else default_delta()
    budgets = Budgets(args.compute, PrivacySpec(args.epsilon, delta), int(args.data))
    values = np.geomspace(args.sweep_from, args.sweep_to, args.points)
    report = sweep_report(
        law, budgets, args.axis, values, args.seq_len, args.points_per_decade
    )
    _emit(report, args.out)
    if args.csv_dir:
        series = sweep(
            budgets, law, args.axis, values,
            seq_len=args.seq_len, points_per_decade=args.points_per_decade,
        )
        csv_dir = Path(args.csv_dir)
        csv_dir.mkdir(parents=True, exist_ok=True)
        for name, (header, rows) in sweep_csv_files(series).items():
            write_csv(csv_dir / f"{name}.csv", header, rows)
    return 0


def cmd_vector_field(args) -> int:
    fixed = {}
    for pair in args.fixed or []:
        key, _, value = pair.partition("=")
        fixed[key] = float(value)
    report = vector_field_report(
        axis_x=args.x,
        axis_y=args.y,
        x_values=parse_axis(args.x_values),
        y_values=parse_axis(args.y_values),
        fixed=fixed,
        delta=args.delta if args.delta is not None else default_delta(),
        iterations=int(args.steps),
    )
    _emit(report, args.out)
    if args.csv:
        rows = []
        for i, xv in enumerate(report["x"]):
            for j, yv in enumerate(report["y"]):
                rows.append((xv, yv, report["u"][i][j], report["v"][i][j]))
        write_csv(args.csv, ["x", "y", "u", "v"], rows)
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    port = args.port
    if port is None:
        port = int(os.environ.get("DPSCALING_PORT", "8080"))
    app = create_app(law_path=resolve_law_path(args.law, args.manifest), cors=args.cors)
    uvicorn.run(app, host=args.host, port=port, log_level="warning")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dpscaling",
        description="Plan differentially private training under compute, privacy, and data budgets.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    cal = sub.add_parser("calibrate", help="noise-batch ratio for a privacy budget")
    cal.add_argument("--epsilon", type=float, required=True)
    cal.add_argument("--delta", type=float, default=None)
    cal.add_argument("--data", type=float, required=True)
    cal.add_argument("--batch", type=float, required=True)
    cal.add_argument("--steps", type=float, required=True)
    cal.add_argument("--batching", choices=[b.value for b in Batching], default="both")
    cal.add_argument("--out", default=None)
    cal.set_defaults(func=cmd_calibrate)

    pipe = sub.add_parser("pipeline", help="grid-to-law processing stages")
    stages = pipe.add_subparsers(dest="stage", required=True)

    synth = stages.add_parser("synth", help="generate a raw grid from a parametric law")
    synth.add_argument("--law", required=True)
    synth.add_argument("--manifest", default=None)
    synth.add_argument("--m-axis", required=True)
    synth.add_argument("--t-axis", required=True)
    synth.add_argument("--nbr-axis", required=True)
    synth.add_argument("--learning-rates", default="0.0078125")
    synth.add_argument("--noise-sd", type=float, default=0.0)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out", required=True)
    synth.set_defaults(func=cmd_pipeline_synth)

    cln = stages.add_parser("clean", help="smooth, reduce learning rates, make monotone")
    cln.add_argument("in", metavar="GRID")
    cln.add_argument("--window", type=int, default=10)
    cln.add_argument("--out", required=True)
    cln.set_defaults(func=cmd_pipeline_clean)

    ext = stages.add_parser("extrapolate", help="extend the iteration axis")
    ext.add_argument("in", metavar="GRID")
    ext.add_argument("--target-t", required=True)
    ext.add_argument("--fit-range", default=None)
    ext.add_argument("--out", required=True)
    ext.set_defaults(func=cmd_pipeline_extrapolate)

    fi = stages.add_parser("fit-interp", help="build the interpolated law")
    fi.add_argument("in", metavar="GRID")
    fi.add_argument("--out", required=True)
    fi.set_defaults(func=cmd_pipeline_fit_interp)

    fp = stages.add_parser("fit-parametric", help="fit a closed-form law")
    fp.add_argument("in", metavar="GRID")
    fp.add_argument("--form", choices=["L1", "L2"], default="L2")
    fp.add_argument("--context-batch", type=float, default=1024.0)
    fp.add_argument("--min-iterations", type=float, default=100000.0)
    fp.add_argument("--min-nbr", type=float, default=5e-7)
    fp.add_argument("--max-loss", type=float, default=8.0)
    fp.add_argument("--huber-delta", type=float, default=1e-3)
    fp.add_argument("--seed", type=int, default=0)
    fp.add_argument("--out", required=True)
    fp.set_defaults(func=cmd_pipeline_fit_parametric)

    plan = sub.add_parser("plan", help="best constant-compute configuration")
    plan.add_argument("--law", required=True)
    plan.add_argument("--manifest", default=None)
    plan.add_argument("--compute", type=float, required=True)
    plan.add_argument("--epsilon", type=float, required=True)
    plan.add_argument("--delta", type=float, default=None)
    plan.add_argument("--data", type=float, required=True)
    plan.add_argument("--seq-len", type=float, default=512.0)
    plan.add_argument("--points-per-decade", type=int, default=16)
    plan.add_argument("--out", default=None)
    plan.set_defaults(func=cmd_plan)

    swp = sub.add_parser("sweep", help="optimal allocation along one budget axis")
    swp.add_argument("--law", required=True)
    swp.add_argument("--manifest", default=None)
    swp.add_argument("--axis", choices=["compute", "privacy", "data"], required=True)
    swp.add_argument("--from", dest="sweep_from", type=float, required=True)
    swp.add_argument("--to", dest="sweep_to", type=float, required=True)
    swp.add_argument("--points", type=int, required=True)
    swp.add_argument("--compute", type=float, required=True)
    swp.add_argument("--epsilon", type=float, required=True)
    swp.add_argument("--delta", type=float, default=None)
    swp.add_argument("--data", type=float, required=True)
    swp.add_argument("--seq-len", type=float, default=512.0)
    swp.add_argument("--points-per-decade", type=int, default=16)
    swp.add_argument("--out", default=None)
    swp.add_argument("--csv-dir", default=None)
    swp.set_defaults(func=cmd_sweep)

    vf = sub.add_parser("vector-field", help="budget-doubling sensitivity field")
    vf.add_argument("--x", choices=["privacy", "compute", "data"], required=True)
    vf.add_argument("--y", choices=["privacy", "compute", "data"], required=True)
    vf.add_argument("--x-values", required=True)
    vf.add_argument("--y-values", required=True)
    vf.add_argument("--fixed", action="append", metavar="BUDGET=VALUE")
    vf.add_argument("--delta", type=float, default=None)
    vf.add_argument("--steps", type=float, default=16000)
    vf.add_argument("--out", default=None)
    vf.add_argument("--csv", default=None)
    vf.set_defaults(func=cmd_vector_field)

    srv = sub.add_parser("serve", help="HTTP JSON API")
    srv.add_argument("--law", required=True)
    srv.add_argument("--manifest", default=None)
    srv.add_argument("--port", type=int, default=None)
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--cors", action="store_true")
    srv.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_VALIDATION if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except CliError as exc:
        print(dumps_json({"code": "validation", "message": str(exc)}), file=sys.stderr)
        return exc.code
    except (ValueError, GridLoadError, GridStateError, DomainError) as exc:
        print(dumps_json({"code": "validation", "message": str(exc)}), file=sys.stderr)
        return EXIT_VALIDATION
    except (CalibrationError, PlanError, ParametricFitError, ArithmeticError) as exc:
        print(dumps_json({"code": "numeric", "message": str(exc)}), file=sys.stderr)
        return EXIT_NUMERIC
    except FileNotFoundError as exc:
        print(dumps_json({"code": "validation", "message": str(exc)}), file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
