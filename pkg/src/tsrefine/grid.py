"""Time-space grid geometry, trajectories and Edie speed fields.

Index conventions used throughout the package:

* ``a`` is the time index (increasing rightward in a diagram),
  ``b`` the space index (increasing upward).
* Speeds are km/h. Absent cells are ``NaN``, never 0.

Neighbour layout around cell ``(a, b)``::

    UL (a-1, b+1)   Up (a, b+1)   UR (a+1, b+1)
    Lf (a-1, b)     C  (a, b)     Rt (a+1, b)
    LL (a-1, b-1)   Lw (a, b-1)   LR (a+1, b-1)

Subcells of coarse cell ``(a, b)`` on the halved grid::

    UL -> (2a, 2b+1)   UR -> (2a+1, 2b+1)
    LL -> (2a, 2b)     LR -> (2a+1, 2b)
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import ConfigurationError, DataError, UsageError

KMH_PER_MS = 3.6
MAX_SPEED_MS = 70.0
MAX_SPEED_KMH = MAX_SPEED_MS * KMH_PER_MS
DEFAULT_THRESHOLD_KMH = 60.0
MIN_CELL_TIME_S = 1e-6


class Regime(str, Enum):
    FF = "ff"
    CG = "cg"


class Subcell(str, Enum):
    LL = "LL"
    LR = "LR"
    UR = "UR"
    UL = "UL"


SUBCELLS = (Subcell.LL, Subcell.LR, Subcell.UR, Subcell.UL)
REGIMES = (Regime.FF, Regime.CG)

# (time, space) offset of each subcell inside its parent on the halved grid
SUBCELL_OFFSETS = {
    Subcell.LL: (0, 0),
    Subcell.LR: (1, 0),
    Subcell.UL: (0, 1),
    Subcell.UR: (1, 1),
}

PREDICTORS = ("C", "LL", "Lw", "LR", "Rt", "UR", "Up", "UL", "Lf")
PREDICTOR_OFFSETS = (
    (0, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
)


class TrajectoryPoint(NamedTuple):
    time: float
    position: float


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Time-ordered samples of one vehicle on one lane.

    ``times`` in seconds, ``positions`` in metres along the direction of
    travel. Construction validates monotone time and the 70 m/s speed cap.
    """

    vehicle_id: str
    lane: int
    times: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        t = np.array(self.times, dtype=float)
        x = np.array(self.positions, dtype=float)
        if t.ndim != 1 or t.shape != x.shape:
            raise DataError(f"vehicle {self.vehicle_id}: times and positions must be 1-D and equal length")
        if t.size < 2:
            raise DataError(f"vehicle {self.vehicle_id}: a trajectory needs at least 2 points")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(x))):
            raise DataError(f"vehicle {self.vehicle_id}: non-finite time or position")
        dt = np.diff(t)
        if np.any(dt <= 0):
            i = int(np.argmax(dt <= 0))
            raise DataError(
                f"vehicle {self.vehicle_id}: time not strictly increasing at sample {i + 1} "
                f"({t[i]!r} -> {t[i + 1]!r})"
            )
        speed = np.abs(np.diff(x)) / dt
        if np.any(speed > MAX_SPEED_MS * (1 + 1e-9)):
            i = int(np.argmax(speed))
            raise DataError(
                f"vehicle {self.vehicle_id}: implied speed {speed[i]:.2f} m/s between samples "
                f"{i} and {i + 1} exceeds {MAX_SPEED_MS} m/s"
            )
        if int(self.lane) != self.lane or self.lane < 1:
            raise DataError(f"vehicle {self.vehicle_id}: lane must be an integer >= 1")
        t.setflags(write=False)
        x.setflags(write=False)
        object.__setattr__(self, "vehicle_id", str(self.vehicle_id))
        object.__setattr__(self, "lane", int(self.lane))
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "positions", x)

    @classmethod
    def from_points(cls, vehicle_id, lane, points: Iterable[tuple[float, float]]) -> "Trajectory":
        pts = np.asarray(list(points), dtype=float).reshape(-1, 2)
        return cls(vehicle_id, lane, pts[:, 0], pts[:, 1])

    @property
    def points(self) -> list[TrajectoryPoint]:
        return [TrajectoryPoint(float(t), float(x)) for t, x in zip(self.times, self.positions)]

    def __len__(self):
        return self.times.size

    def sort_key(self):
        return (self.vehicle_id, self.lane, float(self.times[0]), float(self.positions[0]))


@dataclass(frozen=True)
class GridSpec:
    """Regular time-space grid. Cell ``(a, b)`` covers
    ``[t0 + a*dt, t0 + (a+1)*dt) x [x0 + b*dx, x0 + (b+1)*dx)``."""

    t0: float
    x0: float
    dt: float
    dx: float
    nt: int
    nx: int

    def __post_init__(self):
        for name in ("t0", "x0", "dt", "dx"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ConfigurationError(f"grid {name} must be finite, got {v!r}")
            object.__setattr__(self, name, float(v))
        if self.dt <= 0 or self.dx <= 0:
            raise ConfigurationError(f"cell size must be positive, got dt={self.dt}, dx={self.dx}")
        if int(self.nt) != self.nt or int(self.nx) != self.nx or self.nt < 1 or self.nx < 1:
            raise ConfigurationError(f"grid needs nt, nx >= 1, got nt={self.nt}, nx={self.nx}")
        object.__setattr__(self, "nt", int(self.nt))
        object.__setattr__(self, "nx", int(self.nx))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nt, self.nx)

    @property
    def t1(self) -> float:
        return self.t0 + self.nt * self.dt

    @property
    def x1(self) -> float:
        return self.x0 + self.nx * self.dx

    def t_edges(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.nt + 1)

    def x_edges(self) -> np.ndarray:
        return self.x0 + self.dx * np.arange(self.nx + 1)

    def cell_bounds(self, a: int, b: int) -> tuple[float, float, float, float]:
        return (
            self.t0 + a * self.dt,
            self.t0 + (a + 1) * self.dt,
            self.x0 + b * self.dx,
            self.x0 + (b + 1) * self.dx,
        )

    def same_cell_size(self, dt: float, dx: float) -> bool:
        return math.isclose(self.dt, dt, rel_tol=1e-9) and math.isclose(self.dx, dx, rel_tol=1e-9)

    def describe(self) -> str:
        return (
            f"t0={self.t0:g}s x0={self.x0:g}m cell={self.dt:g}s x {self.dx:g}m "
            f"grid={self.nt}x{self.nx}"
        )

    @classmethod
    def covering(cls, trajectories: Sequence[Trajectory], dt: float, dx: float,
                 t0: float | None = None, x0: float | None = None,
                 t_end: float | None = None, x_end: float | None = None) -> "GridSpec":
        """Smallest grid of the given cell size covering the data.

        Unless given, ``t0``/``x0`` are the data minima floored to the cell size.
        """
        if dt <= 0 or dx <= 0:
            raise ConfigurationError(f"cell size must be positive, got dt={dt}, dx={dx}")
        if not trajectories:
            raise UsageError("cannot size a grid from zero trajectories")
        tmin = min(float(tr.times[0]) for tr in trajectories)
        tmax = max(float(tr.times[-1]) for tr in trajectories)
        xmin = min(float(tr.positions.min()) for tr in trajectories)
        xmax = max(float(tr.positions.max()) for tr in trajectories)
        if t0 is None:
            t0 = math.floor(tmin / dt) * dt
        if x0 is None:
            x0 = math.floor(xmin / dx) * dx
        t_end = tmax if t_end is None else t_end
        x_end = xmax if x_end is None else x_end
        nt = max(1, math.ceil((t_end - t0) / dt - 1e-9))
        nx = max(1, math.ceil((x_end - x0) / dx - 1e-9))
        return cls(t0, x0, dt, dx, nt, nx)


def halve_spec(spec: GridSpec) -> GridSpec:
    """Grid of subcells: half the cell duration and length, twice the counts."""
    return GridSpec(spec.t0, spec.x0, spec.dt / 2, spec.dx / 2, 2 * spec.nt, 2 * spec.nx)


@dataclass(frozen=True, eq=False)
class SpeedField:
    """Per-cell mean speed in km/h on ``spec``; ``NaN`` marks an empty cell."""

    spec: GridSpec
    cells: np.ndarray
    lane: int = 1

    def __post_init__(self):
        c = np.array(self.cells, dtype=float)
        if c.shape != self.spec.shape:
            raise DataError(f"cell array shape {c.shape} does not match grid {self.spec.shape}")
        present = c[~np.isnan(c)]
        if present.size and (
            not np.all(np.isfinite(present))
            or present.min() < 0
            or present.max() > MAX_SPEED_KMH * (1 + 1e-9)
        ):
            raise DataError(f"speeds must lie in [0, {MAX_SPEED_KMH:g}] km/h")
        c.setflags(write=False)
        object.__setattr__(self, "cells", c)
        object.__setattr__(self, "lane", int(self.lane))

    @property
    def present(self) -> np.ndarray:
        return ~np.isnan(self.cells)

    def speed(self, a: int, b: int) -> float | None:
        v = self.cells[a, b]
        return None if np.isnan(v) else float(v)

    def replace_cells(self, cells: np.ndarray) -> "SpeedField":
        return SpeedField(self.spec, cells, self.lane)


@dataclass(frozen=True)
class NeighborVector:
    """The nine predictor speeds of one refinable cell."""

    center: float
    ll: float
    lw: float
    lr: float
    rt: float
    ur: float
    up: float
    ul: float
    lf: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in self.as_tuple()):
            raise DataError("neighbour vector components must all be present and finite")

    def as_tuple(self) -> tuple[float, ...]:
        return (self.center, self.ll, self.lw, self.lr, self.rt, self.ur, self.up, self.ul, self.lf)

    def as_array(self) -> np.ndarray:
        return np.array(self.as_tuple())


def neighbor_stack(cells: np.ndarray) -> np.ndarray:
    """Predictor vectors of every interior cell, shape ``(nt-2, nx-2, 9)``.

    Rows containing a NaN have at least one empty neighbour.
    """
    nt, nx = cells.shape
    if nt < 3 or nx < 3:
        return np.empty((max(nt - 2, 0), max(nx - 2, 0), 9))
    out = np.empty((nt - 2, nx - 2, 9))
    for k, (da, db) in enumerate(PREDICTOR_OFFSETS):
        out[:, :, k] = cells[1 + da: nt - 1 + da, 1 + db: nx - 1 + db]
    return out


def neighbor_vector(field: SpeedField, a: int, b: int) -> NeighborVector | None:
    nt, nx = field.spec.shape
    if not (1 <= a <= nt - 2 and 1 <= b <= nx - 2):
        raise UsageError(
            f"cell ({a}, {b}) is not interior to a {nt}x{nx} grid; "
            f"need 1 <= a <= {nt - 2} and 1 <= b <= {nx - 2}"
        )
    vals = [field.cells[a + da, b + db] for da, db in PREDICTOR_OFFSETS]
    if any(np.isnan(v) for v in vals):
        return None
    return NeighborVector(*(float(v) for v in vals))


def classify_regime(center_speed: float, threshold: float = DEFAULT_THRESHOLD_KMH) -> Regime:
    """Congested strictly below the threshold, free-flow at or above it."""
    if threshold < 0:
        raise ConfigurationError(f"regime threshold must be non-negative, got {threshold}")
    return Regime.CG if center_speed < threshold else Regime.FF


# --------------------------------------------------------------------------
# Edie construction


def _segment_pieces(t1, t2, x1, x2, spec: GridSpec):
    """Split sample-to-sample segments ``(t1, x1) -> (t2, x2)`` at grid lines.

    Returns ``(cell_flat_index, time_in_cell, distance_in_cell)`` for the
    pieces that fall inside the grid, ordered by segment then by time.
    """
    nseg = t1.size
    seg = np.arange(nseg)

    ka = np.clip(np.floor((t1 - spec.t0) / spec.dt) + 1, 0, spec.nt).astype(np.int64)
    kb = np.clip(np.ceil((t2 - spec.t0) / spec.dt) - 1, 0, spec.nt).astype(np.int64)
    nk_t = np.maximum(kb - ka + 1, 0)

    moving = x1 != x2
    lo, hi = np.minimum(x1, x2), np.maximum(x1, x2)
    ja = np.clip(np.floor((lo - spec.x0) / spec.dx) + 1, 0, spec.nx).astype(np.int64)
    jb = np.clip(np.ceil((hi - spec.x0) / spec.dx) - 1, 0, spec.nx).astype(np.int64)
    nk_x = np.where(moving, np.maximum(jb - ja + 1, 0), 0)

    def expand(counts, starts):
        owner = np.repeat(seg, counts)
        offs = np.arange(owner.size) - np.repeat(np.cumsum(counts) - counts, counts)
        return owner, starts[owner] + offs

    own_t, k_t = expand(nk_t, ka)
    s_t = (spec.t0 + k_t * spec.dt - t1[own_t]) / (t2[own_t] - t1[own_t])
    own_x, k_x = expand(nk_x, ja)
    s_x = (spec.x0 + k_x * spec.dx - x1[own_x]) / (x2[own_x] - x1[own_x])

    owner = np.concatenate([seg, seg, own_t, own_x])
    s = np.concatenate([np.zeros(nseg), np.ones(nseg), s_t, s_x])
    inside = (s >= 0) & (s <= 1)
    owner, s = owner[inside], s[inside]
    order = np.lexsort((s, owner))
    owner, s = owner[order], s[order]

    same = owner[:-1] == owner[1:]
    sa, sb, o = s[:-1][same], s[1:][same], owner[:-1][same]
    ds = sb - sa
    keep = ds > 0
    sa, ds, o = sa[keep], ds[keep], o[keep]
    sm = sa + 0.5 * ds
    span_t = t2[o] - t1[o]
    span_x = x2[o] - x1[o]
    tm = t1[o] + sm * span_t
    xm = x1[o] + sm * span_x
    a = np.floor((tm - spec.t0) / spec.dt).astype(np.int64)
    b = np.floor((xm - spec.x0) / spec.dx).astype(np.int64)
    ok = (a >= 0) & (a < spec.nt) & (b >= 0) & (b < spec.nx)
    return a[ok] * spec.nx + b[ok], (ds * span_t)[ok], (ds * np.abs(span_x))[ok]


def edie_totals(trajectories: Sequence[Trajectory], spec: GridSpec, lane: int | None = None):
    """Total time (s) and distance (m) spent by vehicles in each cell.

    Trajectories are accumulated in a canonical order so the result does not
    depend on the order they are passed in.
    """
    chosen = [tr for tr in trajectories if lane is None or tr.lane == lane]
    chosen.sort(key=Trajectory.sort_key)
    ncell = spec.nt * spec.nx
    if not chosen:
        z = np.zeros(spec.shape)
        return z, z.copy()
    t = [tr.times for tr in chosen]
    x = [tr.positions for tr in chosen]
    t1 = np.concatenate([v[:-1] for v in t])
    t2 = np.concatenate([v[1:] for v in t])
    x1 = np.concatenate([v[:-1] for v in x])
    x2 = np.concatenate([v[1:] for v in x])
    # segments wholly outside the window contribute nothing
    near = ((t2 >= spec.t0) & (t1 <= spec.t1)
            & (np.maximum(x1, x2) >= spec.x0) & (np.minimum(x1, x2) <= spec.x1))
    idx, tt, dd = _segment_pieces(t1[near], t2[near], x1[near], x2[near], spec)
    time = np.bincount(idx, weights=tt, minlength=ncell).reshape(spec.shape)
    dist = np.bincount(idx, weights=dd, minlength=ncell).reshape(spec.shape)
    return time, dist


def build_speed_field(trajectories: Sequence[Trajectory], spec: GridSpec, lane: int = 1) -> SpeedField:
    """Edie speed of every cell: total distance over total time, in km/h.

    Trajectories are interpolated linearly between samples and clipped at
    cell boundaries. Cells visited for less than a microsecond are empty.
    """
    if not isinstance(spec, GridSpec):
        raise ConfigurationError("spec must be a GridSpec")
    if len(trajectories) == 0:
        raise UsageError("build_speed_field needs at least one trajectory")
    time, dist = edie_totals(trajectories, spec, lane)
    cells = np.full(spec.shape, np.nan)
    occupied = time >= MIN_CELL_TIME_S
    cells[occupied] = dist[occupied] / time[occupied] * KMH_PER_MS
    # guard against rounding just above the cap
    np.minimum(cells, MAX_SPEED_KMH, out=cells, where=occupied)
    return SpeedField(spec, cells, lane)


# --------------------------------------------------------------------------
# field file format

FIELD_MAGIC = "#tsfield"
FIELD_VERSION = "v1"


def _num(v: float) -> str:
    return repr(float(v))


def field_to_csv(field: SpeedField) -> str:
    """Serialise a field; rows run from the highest space index down."""
    s = field.spec
    lines = [
        f"{FIELD_MAGIC},{FIELD_VERSION},t0={_num(s.t0)},x0={_num(s.x0)},dt={_num(s.dt)},"
        f"dx={_num(s.dx)},nt={s.nt},nx={s.nx},lane={field.lane}"
    ]
    for b in range(s.nx - 1, -1, -1):
        col = field.cells[:, b]
        lines.append(",".join("NA" if np.isnan(v) else f"{v:.3f}" for v in col))
    return "\n".join(lines) + "\n"


def field_from_csv(text: str) -> SpeedField:
    rows = [ln for ln in text.splitlines() if ln.strip()]
    if not rows:
        raise DataError("empty field file")
    head = rows[0].split(",")
    if len(head) < 2 or head[0] != FIELD_MAGIC:
        raise DataError(f"not a speed field file: header starts with {head[0]!r}")
    if head[1] != FIELD_VERSION:
        raise DataError(f"unsupported field file version {head[1]!r}")
    meta = {}
    for item in head[2:]:
        key, sep, val = item.partition("=")
        if not sep:
            raise DataError(f"malformed header entry {item!r}")
        meta[key.strip()] = val.strip()
    try:
        spec = GridSpec(
            float(meta["t0"]), float(meta["x0"]), float(meta["dt"]), float(meta["dx"]),
            int(meta["nt"]), int(meta["nx"]),
        )
        lane = int(meta.get("lane", 1))
    except KeyError as exc:
        raise DataError(f"field header missing {exc.args[0]!r}") from None
    except ValueError as exc:
        raise DataError(f"bad field header value: {exc}") from None
    body = rows[1:]
    if len(body) != spec.nx:
        raise DataError(f"expected {spec.nx} data rows, found {len(body)}")
    cells = np.empty(spec.shape)
    for r, line in enumerate(body):
        vals = line.split(",")
        if len(vals) != spec.nt:
            raise DataError(f"data row {r + 1}: expected {spec.nt} values, found {len(vals)}")
        b = spec.nx - 1 - r
        for a, v in enumerate(vals):
            v = v.strip()
            try:
                cells[a, b] = np.nan if v == "NA" else float(v)
            except ValueError:
                raise DataError(f"data row {r + 1}, column {a + 1}: not a number: {v!r}") from None
    return SpeedField(spec, cells, lane)


def save_field(field: SpeedField, path: str | os.PathLike) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(field_to_csv(field))


def load_field(path: str | os.PathLike) -> SpeedField:
    with open(path, encoding="utf-8") as fh:
        return field_from_csv(fh.read())
