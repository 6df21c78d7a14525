"""Error measures between an estimated and a ground-truth speed field."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import UsageError
from .grid import SUBCELL_OFFSETS, SUBCELLS, GridSpec, SpeedField, Subcell

MIN_TRUTH_KMH = 0.1
REPORT_COLUMNS = ("label", "subcell", "count", "mae_kmh", "mape")
POOLED = "all"


@dataclass(frozen=True)
class SubcellError:
    subcell: str
    count: int
    mae: float | None
    mape: float | None


@dataclass(frozen=True)
class ErrorReport:
    per_subcell: tuple[SubcellError, ...]
    pooled: SubcellError
    skipped_zero_truth: int
    skipped_missing: int

    def __getitem__(self, subcell) -> SubcellError:
        key = subcell.value if isinstance(subcell, Subcell) else str(subcell)
        if key == POOLED:
            return self.pooled
        for row in self.per_subcell:
            if row.subcell == key:
                return row
        raise KeyError(subcell)

    def rows(self) -> tuple[SubcellError, ...]:
        return self.per_subcell + (self.pooled,)


def subcell_labels(shape: tuple[int, int]) -> np.ndarray:
    """Subcell position of every cell of a refined grid, as indices into ``SUBCELLS``."""
    nt, nx = shape
    lab = np.empty(shape, dtype=np.int8)
    for q, j in enumerate(SUBCELLS):
        da, db = SUBCELL_OFFSETS[j]
        lab[da::2, db::2] = q
    return lab


def _mean(values: np.ndarray) -> float | None:
    return math.fsum(values.tolist()) / values.size if values.size else None


def evaluate(estimated: SpeedField, truth: SpeedField) -> ErrorReport:
    """MAE (km/h) and MAPE (fraction) per subcell position and pooled.

    A cell counts when both fields have a speed there and the true speed is
    at least 0.1 km/h; the rest are tallied as skipped. Sums are exact
    (``math.fsum``), so results do not depend on summation order.
    """
    if estimated.spec != truth.spec:
        raise UsageError(
            f"fields are on different grids: estimated {estimated.spec.describe()}, "
            f"truth {truth.spec.describe()}"
        )
    est, tru = estimated.cells, truth.cells
    both = ~np.isnan(est) & ~np.isnan(tru)
    valid = both & (tru >= MIN_TRUTH_KMH)
    labels = subcell_labels(est.shape)
    abs_err = np.where(valid, np.abs(tru - est), np.nan)
    pct_err = np.where(valid, abs_err / np.where(valid, tru, 1.0), np.nan)

    rows = []
    for q, j in enumerate(SUBCELLS):
        m = valid & (labels == q)
        rows.append(SubcellError(j.value, int(m.sum()), _mean(abs_err[m]), _mean(pct_err[m])))
    pooled = SubcellError(POOLED, int(valid.sum()), _mean(abs_err[valid]), _mean(pct_err[valid]))
    return ErrorReport(
        tuple(rows),
        pooled,
        skipped_zero_truth=int((both & ~valid).sum()),
        skipped_missing=int((~both).sum()),
    )


def crop_to(field: SpeedField, window: GridSpec) -> SpeedField:
    """Sub-array of ``field`` on ``window``, which must be aligned to its grid."""
    s = field.spec
    if not s.same_cell_size(window.dt, window.dx):
        raise UsageError(f"window cells {window.dt:g}s x {window.dx:g}m differ from field cells "
                         f"{s.dt:g}s x {s.dx:g}m")
    fa = (window.t0 - s.t0) / s.dt
    fb = (window.x0 - s.x0) / s.dx
    a0, b0 = round(fa), round(fb)
    if abs(fa - a0) > 1e-6 or abs(fb - b0) > 1e-6:
        raise UsageError(f"window ({window.describe()}) is not aligned to the field grid ({s.describe()})")
    if a0 < 0 or b0 < 0 or a0 + window.nt > s.nt or b0 + window.nx > s.nx:
        raise UsageError(f"window ({window.describe()}) extends outside the field ({s.describe()})")
    cells = field.cells[a0:a0 + window.nt, b0:b0 + window.nx]
    return SpeedField(GridSpec(s.t0 + a0 * s.dt, s.x0 + b0 * s.dx, s.dt, s.dx, window.nt, window.nx),
                      cells, field.lane)


def _fmt(v: float | None) -> str:
    return "NA" if v is None else f"{v:.3f}"


def _table(reports: Sequence[tuple[str, ErrorReport]]) -> list[list[str]]:
    out = []
    for label, rep in reports:
        for row in rep.rows():
            out.append([label, row.subcell, str(row.count), _fmt(row.mae), _fmt(row.mape)])
    return out


def format_report(reports: Sequence[tuple[str, ErrorReport]], fmt: str = "text") -> str:
    """Render reports in the layout label | subcell | count | MAE | MAPE.

    ``fmt`` is ``"text"`` (aligned columns) or ``"csv"``.
    """
    body = _table(reports)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        w.writerows(body)
        return buf.getvalue()
    if fmt != "text":
        raise UsageError(f"unknown report format {fmt!r}")
    head = ["label", "subcell", "count", "MAE", "MAPE"]
    widths = [max(len(r[i]) for r in [head] + body) for i in range(len(head))]
    lines = []
    for r in [head] + body:
        cols = [r[0].ljust(widths[0]), r[1].ljust(widths[1])]
        cols += [c.rjust(w) for c, w in zip(r[2:], widths[2:])]
        lines.append("  ".join(cols).rstrip())
    return "\n".join(lines) + "\n"


def parse_report_csv(text: str) -> list[dict]:
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        rows.append({
            "label": rec["label"],
            "subcell": rec["subcell"],
            "count": int(rec["count"]),
            "mae_kmh": None if rec["mae_kmh"] == "NA" else float(rec["mae_kmh"]),
            "mape": None if rec["mape"] == "NA" else float(rec["mape"]),
        })
    return rows
