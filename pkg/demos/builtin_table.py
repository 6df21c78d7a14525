"""Look at the shipped coefficient tables and what they do to a flat field.

``python3 demos/builtin_table.py``
"""
import numpy as np

from tsrefine import GridSpec, Regime, SpeedField, builtin_model, refine_once
from tsrefine.grid import PREDICTORS, SUBCELLS

# %% The four cell sizes
# Each table has one row of nine weights plus an intercept for every
# (regime, subcell) group. Free-flow (ff) applies when the centre cell is
# at least 60 km/h, congested (cg) below that.

for dt, dx in [(30, 50), (60, 100), (120, 200), (240, 400)]:
    m = builtin_model(dt, dx)
    print(f"\n{m.size_label()}")
    print("        " + " ".join(f"{p:>6}" for p in PREDICTORS) + "   icpt     r2")
    for k in (Regime.FF, Regime.CG):
        W = m.weights(k)
        for j, row in zip(SUBCELLS, W):
            r2 = m[k, j].r2
            print(f"{k.value}/{j.value:2}  " + " ".join(f"{v:+6.2f}" for v in row) + f"  {r2:.4f}")

# %% Weight sums
# On a uniform field every neighbour equals the centre, so the estimate is
# speed * sum(weights) + intercept. Sums close to 1 mean flat fields stay flat.

m = builtin_model(30, 50)
for k in (Regime.FF, Regime.CG):
    print(k.value, np.round(m.weights(k)[:, :9].sum(axis=1), 2))

# %% Flat fields through one pass
for speed in (20.0, 59.9, 60.0, 100.0):
    f = SpeedField(GridSpec(0, 0, 30, 50, 5, 5), np.full((5, 5), speed))
    out = refine_once(f, m)
    print(f"{speed:5.1f} km/h -> subcells {np.round(out.cells[:2, :2].ravel(), 2)}")
# 59.9 and 60.0 land on different sides of the regime split, so a tiny
# change in input can move the output by a couple of km/h.
