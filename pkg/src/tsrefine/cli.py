"""``ts-refine`` command line.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical/fit error.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import os
import sys
from pathlib import Path

from .errors import DataError, TsRefineError, UsageError
from .evaluate import crop_to, evaluate, format_report
from .grid import GridSpec, SpeedField, build_speed_field, field_to_csv, halve_spec, load_field
from .pipeline import load_config, parse_model_uri, run_pipeline
from .refiner import refine_iterated
from .regression import fit_model, model_to_json, training_pairs
from .render import render_heatmap, render_svg
from .trajio import PRESETS, IngestSchema, export_trajectories, read_trajectories
from .wavegen import WaveScenario, generate

log = logging.getLogger("tsrefine")


def _write_text(text: str, out: str | None) -> None:
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _schema(args) -> IngestSchema:
    schema = PRESETS[args.preset]
    over = {}
    for key in ("vehicle_id", "time", "position", "lane"):
        v = getattr(args, f"{key}_col", None)
        if v is not None:
            over[key] = int(v) if v.isdigit() else v
    for key in ("time_unit", "position_unit", "position_direction", "time_origin"):
        v = getattr(args, key, None)
        if v is not None:
            over[key] = v
    return dataclasses.replace(schema, **over) if over else schema


def _add_schema_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", choices=sorted(PRESETS), default="canonical")
    p.add_argument("--vehicle-id-col", dest="vehicle_id_col")
    p.add_argument("--time-col")
    p.add_argument("--position-col")
    p.add_argument("--lane-col")
    p.add_argument("--time-unit", choices=["seconds", "deciseconds", "milliseconds-epoch"])
    p.add_argument("--position-unit", choices=["meters", "feet"])
    p.add_argument("--position-direction", choices=["increasing", "decreasing"])
    p.add_argument("--time-origin", choices=["file-min", "absolute"])


def cmd_ingest(args) -> int:
    trajs = read_trajectories(args.input, _schema(args))
    with open(args.output, "wb") as fh:
        export_trajectories(trajs, fh)
    log.info("wrote %d trajectories to %s", len(trajs), args.output)
    return 0


def cmd_synth(args) -> int:
    fields = {f.name for f in dataclasses.fields(WaveScenario)}
    sc = WaveScenario(**{k: v for k, v in vars(args).items() if k in fields and v is not None})
    trajs = generate(sc)
    with open(args.output, "wb") as fh:
        export_trajectories(trajs, fh)
    log.info("wrote %d synthetic trajectories to %s", len(trajs), args.output)
    return 0


def _grid_from_args(trajs, args, dt=None, dx=None) -> GridSpec:
    return GridSpec.covering(trajs, dt or args.dt, dx or args.dx, t0=args.t0, x0=args.x0,
                             t_end=args.t_end, x_end=args.x_end)


def cmd_build(args) -> int:
    trajs = read_trajectories(args.input, _schema(args))
    spec = _grid_from_args(trajs, args)
    _write_text(field_to_csv(build_speed_field(trajs, spec, args.lane)), args.output)
    return 0


def _overlap(coarse: SpeedField, fine: SpeedField) -> tuple[SpeedField, SpeedField]:
    """Crop a coarse/fine pair built on separate grids to the part they share."""
    h, f = halve_spec(coarse.spec), fine.spec
    if h == f or not f.same_cell_size(h.dt, h.dx):
        return coarse, fine
    fa, fb = (h.t0 - f.t0) / f.dt, (h.x0 - f.x0) / f.dx
    a0, a1 = max(0, math.ceil(-fa / 2 - 1e-9)), min(coarse.spec.nt, math.floor((f.nt - fa) / 2 + 1e-9))
    b0, b1 = max(0, math.ceil(-fb / 2 - 1e-9)), min(coarse.spec.nx, math.floor((f.nx - fb) / 2 + 1e-9))
    if a1 <= a0 or b1 <= b0:
        raise UsageError(f"coarse ({coarse.spec.describe()}) and fine ({f.describe()}) fields do not overlap")
    c = coarse.spec
    window = GridSpec(c.t0 + a0 * c.dt, c.x0 + b0 * c.dx, c.dt, c.dx, a1 - a0, b1 - b0)
    coarse = crop_to(coarse, window)
    return coarse, crop_to(fine, halve_spec(window))


def cmd_fit(args) -> int:
    if args.trajectories:
        if args.dt is None or args.dx is None:
            raise UsageError("fit from trajectories needs --dt and --dx")
        trajs = read_trajectories(args.trajectories, _schema(args))
        pairs = training_pairs(trajs, _grid_from_args(trajs, args), args.lane, args.shifts)
        coarse, fine = [c for c, _ in pairs], [f for _, f in pairs]
    elif args.coarse and args.fine:
        coarse, fine = _overlap(load_field(args.coarse), load_field(args.fine))
    else:
        raise UsageError("fit needs --coarse and --fine fields, or --trajectories with --dt/--dx")
    model = fit_model(coarse, fine, args.threshold)
    _write_text(model_to_json(model), args.output)
    return 0


def cmd_refine(args) -> int:
    field = load_field(args.input)
    models = [parse_model_uri(m) for m in args.model]
    if len(models) == 1 and args.passes > 1:
        raise UsageError(f"--passes {args.passes} needs one --model per pass")
    _write_text(field_to_csv(refine_iterated(field, models, args.passes)), args.output)
    return 0


def cmd_eval(args) -> int:
    est = load_field(args.estimated)
    truth = load_field(args.truth)
    if truth.spec != est.spec:
        truth = crop_to(truth, est.spec)
    text = format_report([(args.label, evaluate(est, truth))], args.format)
    _write_text(text, args.output)
    return 0


def cmd_render(args) -> int:
    field = load_field(args.input)
    fmt = args.format or ("svg" if str(args.output).lower().endswith(".svg") else "ppm")
    if fmt == "svg":
        Path(args.output).write_text(render_svg(field, block=args.block), encoding="utf-8")
    else:
        Path(args.output).write_bytes(render_heatmap(field, block=args.block))
    return 0


def cmd_pipeline(args) -> int:
    cfg_path = Path(args.config)
    cfg = load_config(cfg_path)
    out = args.out or cfg.get("outputs", {}).get("dir") or cfg_path.with_suffix("").name + "_out"
    out = Path(out)
    if not out.is_absolute():
        out = cfg_path.parent / out if args.out is None else out
    result = run_pipeline(cfg, out, base_dir=cfg_path.parent)
    sys.stdout.write(format_report([(f"pass{i}", r.report) for i, r in enumerate(result.passes, 1)]))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ts-refine", description="Refine coarse time-space speed diagrams.",
                                epilog=__doc__.splitlines()[2])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="convert a trajectory CSV to canonical form")
    s.add_argument("input")
    s.add_argument("-o", "--output", required=True)
    _add_schema_args(s)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("synth", help="generate synthetic stop-and-go trajectories")
    s.add_argument("-o", "--output", required=True)
    for f in dataclasses.fields(WaveScenario):
        s.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name,
                       type=int if f.type in ("int", int) else float)
    s.set_defaults(func=cmd_synth)

    def grid_args(s, required=True):
        s.add_argument("--dt", type=float, required=required, help="cell duration (s)")
        s.add_argument("--dx", type=float, required=required, help="cell length (m)")
        s.add_argument("--lane", type=int, default=1)
        s.add_argument("--t0", type=float)
        s.add_argument("--x0", type=float)
        s.add_argument("--t-end", type=float)
        s.add_argument("--x-end", type=float)

    s = sub.add_parser("build", help="build a speed field from trajectories")
    s.add_argument("input")
    s.add_argument("-o", "--output")
    grid_args(s)
    _add_schema_args(s)
    s.set_defaults(func=cmd_build)

    s = sub.add_parser("fit", help="fit a refinement model")
    s.add_argument("--coarse")
    s.add_argument("--fine")
    s.add_argument("--trajectories")
    s.add_argument("--shifts", type=int, default=1,
                   help="also sample grids offset by 1/shifts of a cell (trajectory input only)")
    s.add_argument("--threshold", type=float, default=60.0)
    s.add_argument("-o", "--output")
    grid_args(s, required=False)
    _add_schema_args(s)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("refine", help="refine a speed field")
    s.add_argument("input")
    s.add_argument("--model", action="append", required=True,
                   help="builtin:<dt>x<dx> or model JSON; repeat once per pass")
    s.add_argument("--passes", type=int, choices=[1, 2], default=1)
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_refine)

    s = sub.add_parser("eval", help="compare an estimated field with ground truth")
    s.add_argument("estimated")
    s.add_argument("truth")
    s.add_argument("--label", default="eval")
    s.add_argument("--format", choices=["text", "csv"], default="text")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("render", help="draw a field as PPM or SVG")
    s.add_argument("input")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--format", choices=["ppm", "svg"])
    s.add_argument("--block", type=int, default=8)
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("pipeline", help="run a configured 1-4 or 1-4-16 experiment")
    s.add_argument("config", help="TOML/JSON config or a previous manifest.json")
    s.add_argument("--out", help="output directory")
    s.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except TsRefineError as exc:
        print(f"ts-refine {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        if isinstance(exc, BrokenPipeError):
            # downstream reader closed early, as with `| head`
            os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
            return 0
        print(f"ts-refine {args.command}: {exc}", file=sys.stderr)
        return DataError.exit_code
