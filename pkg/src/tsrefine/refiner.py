"""Applying a refinement model: one pass (4x cells) or chained passes (16x, ...)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import UsageError
from .grid import MAX_SPEED_KMH, SUBCELL_OFFSETS, SUBCELLS, GridSpec, Regime, SpeedField, neighbor_stack
from .regression import RefinementModel


@dataclass(frozen=True)
class DispatchCounts:
    ff: int
    cg: int
    skipped: int

    @property
    def refined(self) -> int:
        return self.ff + self.cg


def refined_spec(spec: GridSpec) -> GridSpec:
    """Grid produced by one pass: the interior (border ring removed), halved."""
    return GridSpec(spec.t0 + spec.dt, spec.x0 + spec.dx, spec.dt / 2, spec.dx / 2,
                    2 * (spec.nt - 2), 2 * (spec.nx - 2))


def refine_once(field: SpeedField, model: RefinementModel, *, return_counts: bool = False):
    """Estimate the four subcell speeds of every interior cell.

    Border cells have no complete neighbourhood and are dropped, so an
    ``nt x nx`` input yields ``2(nt-2) x 2(nx-2)`` subcells. Interior cells
    with an empty neighbour give empty subcells. Estimates are clamped
    below at 0 km/h; above, only the field type's hard cap applies.
    """
    spec = field.spec
    if not spec.same_cell_size(model.cell_dt, model.cell_dx):
        raise UsageError(
            f"field cells are {spec.dt:g}s x {spec.dx:g}m but the model is for "
            f"{model.cell_dt:g}s x {model.cell_dx:g}m"
        )
    if spec.nt < 3 or spec.nx < 3:
        raise UsageError(f"nothing refinable: a {spec.nt}x{spec.nx} field has no interior cell")

    X = neighbor_stack(field.cells)
    n1, n2, _ = X.shape
    flat = X.reshape(-1, 9)
    full = ~np.isnan(flat).any(axis=1)
    congested = full & (flat[:, 0] < model.threshold)
    free = full & ~congested

    est = np.full((flat.shape[0], 4), np.nan)
    for regime, mask in ((Regime.FF, free), (Regime.CG, congested)):
        X_k = flat[mask]
        W = model.weights(regime)
        for q in range(4):
            # fixed-order elementwise sum, not BLAS: a cell's value must not
            # depend on how many other cells are refined alongside it
            acc = np.full(X_k.shape[0], W[q, 9])
            for i in range(9):
                acc += W[q, i] * X_k[:, i]
            est[mask, q] = acc
    np.clip(est, 0.0, MAX_SPEED_KMH, out=est, where=~np.isnan(est))

    est = est.reshape(n1, n2, 4)
    out = np.empty((2 * n1, 2 * n2))
    for q, j in enumerate(SUBCELLS):
        da, db = SUBCELL_OFFSETS[j]
        out[da::2, db::2] = est[:, :, q]
    result = SpeedField(refined_spec(spec), out, field.lane)
    if return_counts:
        counts = DispatchCounts(int(free.sum()), int(congested.sum()), int((~full).sum()))
        return result, counts
    return result


def refine_iterated(field: SpeedField, models: Sequence[RefinementModel], passes: int) -> SpeedField:
    """Apply ``passes`` refinement passes, each consuming only the previous estimate.

    ``models[p]`` must match the cell size entering pass ``p``.
    """
    if passes < 1:
        raise UsageError(f"passes must be >= 1, got {passes}")
    if len(models) < passes:
        raise UsageError(f"{passes} passes need {passes} models, got {len(models)}")
    current = field
    for p in range(passes):
        m = models[p]
        if not current.spec.same_cell_size(m.cell_dt, m.cell_dx):
            raise UsageError(
                f"pass {p + 1}: input cells are {current.spec.dt:g}s x {current.spec.dx:g}m "
                f"but model {p + 1} is for {m.cell_dt:g}s x {m.cell_dx:g}m"
            )
        current = refine_once(current, m)
    return current
