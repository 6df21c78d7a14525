"""Reading and writing trajectory CSV files.

Two layouts are built in: the canonical export format
(``vehicle_id,lane,time_s,position_m``) and an NGSIM preset
(``Vehicle_ID``, ``Frame_ID`` in 0.1 s frames, ``Local_Y`` in feet,
``Lane_ID``). Anything else is described with an :class:`IngestSchema`.
"""
from __future__ import annotations

import csv
import io
import warnings
from collections import defaultdict
from dataclasses import dataclass
from typing import IO, Iterable, Sequence

import numpy as np

from .errors import DataError, SchemaError
from .grid import Trajectory

FEET_TO_M = 0.3048
TIME_SCALE = {"seconds": 1.0, "deciseconds": 0.1, "milliseconds-epoch": 1e-3}
POSITION_SCALE = {"meters": 1.0, "feet": FEET_TO_M}
CANONICAL_HEADER = ("vehicle_id", "lane", "time_s", "position_m")


@dataclass(frozen=True)
class IngestSchema:
    """Where to find each field and what units it is in.

    Columns are header names or 0-based integer indices. ``time_origin``
    is ``"file-min"`` (times made relative to the earliest sample in the
    file) or ``"absolute"`` (kept as-is after unit conversion).
    """

    vehicle_id: str | int = "vehicle_id"
    time: str | int = "time_s"
    position: str | int = "position_m"
    lane: str | int = "lane"
    time_unit: str = "seconds"
    position_unit: str = "meters"
    position_direction: str = "increasing"
    time_origin: str = "file-min"

    def __post_init__(self):
        if self.time_unit not in TIME_SCALE:
            raise SchemaError(f"time_unit must be one of {sorted(TIME_SCALE)}, got {self.time_unit!r}")
        if self.position_unit not in POSITION_SCALE:
            raise SchemaError(
                f"position_unit must be one of {sorted(POSITION_SCALE)}, got {self.position_unit!r}"
            )
        if self.position_direction not in ("increasing", "decreasing"):
            raise SchemaError("position_direction must be increasing or decreasing")
        if self.time_origin not in ("file-min", "absolute"):
            raise SchemaError("time_origin must be 'file-min' or 'absolute'")


CANONICAL = IngestSchema(time_origin="absolute")
NGSIM = IngestSchema(
    vehicle_id="Vehicle_ID",
    time="Frame_ID",
    position="Local_Y",
    lane="Lane_ID",
    time_unit="deciseconds",
    position_unit="feet",
)
PRESETS = {"canonical": CANONICAL, "ngsim": NGSIM}


@dataclass
class ParseReport:
    rows: int = 0
    trajectories: int = 0
    dropped_short: int = 0
    duplicate_times: int = 0


def _resolve(header: Sequence[str], col: str | int) -> int:
    if isinstance(col, int):
        if not 0 <= col < len(header):
            raise SchemaError(f"column index {col} out of range; available: {list(header)}")
        return col
    stripped = [h.strip() for h in header]
    if col in stripped:
        return stripped.index(col)
    raise SchemaError(f"unknown column {col!r}; available headers: {stripped}")


def _text_stream(stream) -> IO[str]:
    if isinstance(stream, (bytes, bytearray)):
        return io.StringIO(stream.decode("utf-8"))
    if isinstance(stream, io.TextIOBase):
        return stream
    return io.TextIOWrapper(stream, encoding="utf-8", newline="")


def parse_trajectories(stream, schema: IngestSchema = CANONICAL, *, return_report: bool = False):
    """Read a CSV of trajectory samples into per-lane trajectories.

    Each vehicle is split into one trajectory per contiguous lane stint.
    Duplicate timestamps keep the first sample; runs with fewer than two
    samples are dropped. Both are counted in the returned
    :class:`ParseReport` (``return_report=True``) and issued as a warning.
    """
    reader = csv.reader(_text_stream(stream))
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("trajectory file is empty (no header row)") from None
    ci = [_resolve(header, c) for c in (schema.vehicle_id, schema.time, schema.position, schema.lane)]
    tscale = TIME_SCALE[schema.time_unit]
    xscale = POSITION_SCALE[schema.position_unit]

    vid_list, t_list, x_list, lane_list = [], [], [], []
    report = ParseReport()
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            vid, traw, xraw, lraw = (row[i].strip() for i in ci)
        except IndexError:
            raise DataError(f"line {lineno}: expected at least {max(ci) + 1} fields, got {len(row)}") from None
        try:
            t = float(traw)
            x = float(xraw)
            lane = float(lraw)
        except ValueError as exc:
            raise DataError(f"line {lineno}: non-numeric field ({exc})") from None
        if lane != int(lane):
            raise DataError(f"line {lineno}: lane {lraw!r} is not an integer")
        vid_list.append(vid)
        t_list.append(t)
        x_list.append(x)
        lane_list.append(int(lane))
        report.rows += 1

    if report.rows == 0:
        return ([], report) if return_report else []

    t_all = np.array(t_list)
    x_all = np.array(x_list)
    if schema.time_origin == "file-min":
        t_all = t_all - t_all.min()
    if schema.position_direction == "decreasing":
        x_all = x_all.max() - x_all
    # rebase in native units first so whole frames convert exactly
    t_all = t_all * tscale
    x_all = x_all * xscale

    by_vehicle: dict[str, list[int]] = defaultdict(list)
    for i, vid in enumerate(vid_list):
        by_vehicle[vid].append(i)

    out = []
    for vid in sorted(by_vehicle):
        rows = np.array(by_vehicle[vid])
        # stable: equal times keep file order, so "first" is the earliest row
        rows = rows[np.argsort(t_all[rows], kind="stable")]
        t = t_all[rows]
        dup = np.concatenate([[False], np.diff(t) == 0])
        report.duplicate_times += int(dup.sum())
        rows, t = rows[~dup], t[~dup]
        lanes = np.array([lane_list[i] for i in rows])
        cuts = np.flatnonzero(np.diff(lanes)) + 1
        for seg in np.split(np.arange(rows.size), cuts):
            if seg.size < 2:
                report.dropped_short += 1
                continue
            r = rows[seg]
            try:
                out.append(Trajectory(vid, int(lanes[seg[0]]), t_all[r], x_all[r]))
            except DataError as exc:
                first_line = int(r[0]) + 2
                raise DataError(f"{exc} (rows starting near line {first_line})") from None
    report.trajectories = len(out)

    if report.dropped_short or report.duplicate_times:
        msg = (
            f"dropped {report.dropped_short} trajectory run(s) with fewer than 2 points; "
            f"ignored {report.duplicate_times} duplicate timestamp(s)"
        )
        warnings.warn(msg, stacklevel=2)
    return (out, report) if return_report else out


def export_trajectories(trajectories: Iterable[Trajectory], sink: IO) -> int:
    """Write canonical CSV sorted by (vehicle_id, time); returns bytes written."""
    lines = [",".join(CANONICAL_HEADER)]
    rows = []
    for tr in trajectories:
        for t, x in zip(tr.times, tr.positions):
            rows.append((tr.vehicle_id, float(t), tr.lane, float(x)))
    rows.sort(key=lambda r: (r[0], r[1]))
    lines.extend(f"{vid},{lane},{t:.6f},{x:.6f}" for vid, t, lane, x in rows)
    data = ("\n".join(lines) + "\n").encode("utf-8")
    if isinstance(sink, io.TextIOBase):
        sink.write(data.decode("utf-8"))
    else:
        sink.write(data)
    return len(data)


def read_trajectories(path, schema: IngestSchema = CANONICAL) -> list[Trajectory]:
    with open(path, "rb") as fh:
        return parse_trajectories(fh, schema)


def write_trajectories(trajectories: Iterable[Trajectory], path) -> int:
    with open(path, "wb") as fh:
        return export_trajectories(trajectories, fh)
