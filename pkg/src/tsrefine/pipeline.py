"""Declarative refinement experiments (1-4 and 1-4-16 tests).

A config names a trajectory source, the coarse test grid, where models
come from and how many passes to run. :func:`run_pipeline` builds the
coarse field, refines it, compares every pass against the ground truth
built from the same trajectories, and writes fields, models, report,
images and a manifest into one directory.

Example config (TOML)::

    [data]
    source = "synth"            # or "csv" (with path = ..., preset = ...)
    lane = 1
    [data.scenario]
    duration = 7200
    stopgo_period = 120

    [grid]
    dt = 240
    dx = 400
    t0 = 3600
    t_end = 7200
    x0 = 0
    x_end = 2000

    [model]
    source = "fit"              # "builtin", "fit", or uris = ["builtin:60x100", "m.json"]
    train_t0 = 0
    train_t_end = 3600
    shifts = 4

    [run]
    passes = 2

    [outputs]
    images = true
"""
from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .errors import ConfigurationError
from .evaluate import ErrorReport, evaluate, format_report
from .grid import DEFAULT_THRESHOLD_KMH, GridSpec, SpeedField, Trajectory, build_speed_field, save_field
from .refiner import DispatchCounts, refine_once
from .regression import (
    RefinementModel,
    builtin_model,
    fit_model,
    load_model,
    model_digest,
    save_model,
    training_pairs,
)
from .render import render_heatmap, render_svg
from .trajio import PRESETS, read_trajectories
from .wavegen import WaveScenario, generate

MANIFEST_NAME = "manifest.json"


@dataclass
class PassResult:
    estimated: SpeedField
    truth: SpeedField
    report: ErrorReport
    counts: DispatchCounts
    model: RefinementModel


@dataclass
class PipelineResult:
    coarse: SpeedField
    passes: list[PassResult] = field(default_factory=list)
    manifest: dict = field(default_factory=dict)

    @property
    def final(self) -> PassResult:
        return self.passes[-1]


def load_config(path) -> dict:
    """Read a TOML or JSON config. A pipeline manifest is accepted too."""
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix.lower() == ".json":
        doc = json.loads(raw)
        return doc["config"] if "config" in doc and "outputs_sha256" in doc else doc
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    try:
        return tomllib.loads(raw.decode("utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from None


def parse_model_uri(uri: str) -> RefinementModel:
    """``builtin:<dt>x<dx>`` or a path to a model JSON file."""
    if uri.startswith("builtin:"):
        size = uri[len("builtin:"):]
        try:
            dt, dx = (float(v) for v in size.lower().split("x"))
        except ValueError:
            raise ConfigurationError(f"bad builtin model uri {uri!r}; expected builtin:<dt>x<dx>") from None
        return builtin_model(dt, dx)
    return load_model(uri)


def _section(cfg: dict, name: str) -> dict:
    sec = cfg.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigurationError(f"[{name}] must be a table")
    return sec


def _load_data(cfg: dict, base: Path) -> tuple[list[Trajectory], dict]:
    data = _section(cfg, "data")
    source = data.get("source", "synth")
    if source == "synth":
        fields = {f.name for f in dataclasses.fields(WaveScenario)}
        scen = data.get("scenario", {})
        unknown = set(scen) - fields
        if unknown:
            raise ConfigurationError(f"unknown scenario keys: {sorted(unknown)}")
        sc = WaveScenario(**scen)
        return generate(sc), {"source": "synth", "scenario": dataclasses.asdict(sc)}
    if source == "csv":
        if "path" not in data:
            raise ConfigurationError("[data] source = 'csv' needs a path")
        path = Path(data["path"])
        if not path.is_absolute():
            path = (base / path).resolve()
            data["path"] = str(path)
        preset = data.get("preset", "canonical")
        if preset not in PRESETS:
            raise ConfigurationError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        schema = PRESETS[preset]
        overrides = data.get("schema", {})
        if overrides:
            schema = dataclasses.replace(schema, **overrides)
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        return read_trajectories(path, schema), {"source": "csv", "path": str(path), "sha256": digest,
                                                  "schema": dataclasses.asdict(schema)}
    raise ConfigurationError(f"unknown data source {source!r}")


def _window(sec: dict, trajectories, dt, dx, prefix="") -> GridSpec:
    get = lambda k: sec.get(prefix + k)  # noqa: E731
    spec = GridSpec.covering(trajectories, dt, dx, t0=get("t0"), x0=get("x0"),
                             t_end=get("t_end"), x_end=get("x_end"))
    # keep only whole cells inside an explicit end
    nt, nx = spec.nt, spec.nx
    if get("t_end") is not None:
        nt = max(1, int(math.floor((get("t_end") - spec.t0) / dt + 1e-9)))
    if get("x_end") is not None:
        nx = max(1, int(math.floor((get("x_end") - spec.x0) / dx + 1e-9)))
    return GridSpec(spec.t0, spec.x0, dt, dx, nt, nx)


def _models(cfg: dict, trajectories, lane: int, dt: float, dx: float, passes: int,
            base: Path) -> list[RefinementModel]:
    msec = _section(cfg, "model")
    source = msec.get("source", "builtin")
    threshold = float(msec.get("threshold", DEFAULT_THRESHOLD_KMH))
    sizes = [(dt / 2 ** p, dx / 2 ** p) for p in range(passes)]
    if "uris" in msec:
        uris = list(msec["uris"])
        if len(uris) < passes:
            raise ConfigurationError(f"{passes} passes need {passes} model uris, got {len(uris)}")
        return [parse_model_uri(u if u.startswith("builtin:") or os.path.isabs(u) else str(base / u))
                for u in uris[:passes]]
    if source == "builtin":
        return [builtin_model(*s) for s in sizes]
    if source == "fit":
        shifts = int(msec.get("shifts", 1))
        models = []
        for sdt, sdx in sizes:
            spec = _window(msec, trajectories, sdt, sdx, prefix="train_")
            pairs = training_pairs(trajectories, spec, lane, shifts)
            models.append(fit_model([c for c, _ in pairs], [f for _, f in pairs], threshold))
        return models
    raise ConfigurationError(f"unknown model source {source!r}")


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_pipeline(cfg: dict, out_dir=None, base_dir=None) -> PipelineResult:
    """Run one experiment; writes outputs when ``out_dir`` is given."""
    cfg = copy.deepcopy(cfg)
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    trajectories, data_info = _load_data(cfg, base)
    if not trajectories:
        raise ConfigurationError("the data source produced no trajectories")
    lane = int(_section(cfg, "data").get("lane", 1))
    grid = _section(cfg, "grid")
    if "dt" not in grid or "dx" not in grid:
        raise ConfigurationError("[grid] needs dt and dx")
    dt, dx = float(grid["dt"]), float(grid["dx"])
    passes = int(_section(cfg, "run").get("passes", 1))
    if passes < 1:
        raise ConfigurationError("[run] passes must be >= 1")

    coarse_spec = _window(grid, trajectories, dt, dx)
    models = _models(cfg, trajectories, lane, dt, dx, passes, base)
    coarse = build_speed_field(trajectories, coarse_spec, lane)

    result = PipelineResult(coarse)
    current = coarse
    for p in range(passes):
        est, counts = refine_once(current, models[p], return_counts=True)
        truth = build_speed_field(trajectories, est.spec, lane)
        result.passes.append(PassResult(est, truth, evaluate(est, truth), counts, models[p]))
        current = est

    result.manifest = {
        "tool": "tsrefine",
        "version": __version__,
        "config": cfg,
        "data": data_info,
        "coarse_grid": dataclasses.asdict(coarse_spec),
        "models": [{"pass": p + 1, "size": m.size_label(), "sha256": model_digest(m)}
                   for p, m in enumerate(models)],
        "dispatch": [dataclasses.asdict(r.counts) for r in result.passes],
    }
    if out_dir is not None:
        _write_outputs(result, Path(out_dir), _section(cfg, "outputs"))
    return result


def _write_outputs(result: PipelineResult, out: Path, opts: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def put_field(f: SpeedField, stem: str):
        path = out / f"{stem}.tsf"
        save_field(f, path)
        written.append(path)
        if opts.get("images", True):
            block = int(opts.get("block", 8))
            ppm = out / f"{stem}.ppm"
            ppm.write_bytes(render_heatmap(f, block=block))
            written.append(ppm)
            if opts.get("svg", True):
                svg = out / f"{stem}.svg"
                svg.write_text(render_svg(f, block=block, title=stem), encoding="utf-8")
                written.append(svg)

    put_field(result.coarse, "coarse")
    reports = []
    for p, r in enumerate(result.passes, start=1):
        put_field(r.estimated, f"pass{p}_estimated")
        put_field(r.truth, f"pass{p}_truth")
        mpath = out / f"pass{p}_model.json"
        save_model(r.model, mpath)
        written.append(mpath)
        reports.append((f"pass{p}", r.report))
    csv_path = out / "report.csv"
    csv_path.write_text(format_report(reports, "csv"), encoding="utf-8")
    txt_path = out / "report.txt"
    txt_path.write_text(format_report(reports, "text"), encoding="utf-8")
    written += [csv_path, txt_path]

    result.manifest["outputs_sha256"] = {p.name: _sha(p) for p in written}
    (out / MANIFEST_NAME).write_text(json.dumps(result.manifest, indent=2, sort_keys=True) + "\n",
                                     encoding="utf-8")
