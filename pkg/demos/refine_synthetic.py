"""Refine a coarse speed diagram built from synthetic stop-and-go traffic.

Run from anywhere: ``python3 demos/refine_synthetic.py``. Writes PPM
heatmaps next to this file in ``refine_synthetic_out/``.
"""
from pathlib import Path

import numpy as np

from tsrefine import (
    GridSpec,
    WaveScenario,
    build_speed_field,
    evaluate,
    fit_model,
    format_report,
    generate,
    refine_once,
    render_heatmap,
)
from tsrefine.regression import training_pairs

OUT = Path(__file__).resolve().parent / "refine_synthetic_out"
OUT.mkdir(exist_ok=True)

# %% Traffic
# Two hours on a 2 km single-lane road. A downstream bottleneck stops
# traffic for 36 s out of every 120 s, and the stops travel upstream.

trajs = generate(WaveScenario(duration=7200, stopgo_period=120, stopgo_duty=0.3))
print(len(trajs), "vehicles")

# %% Training
# The first hour provides coarse (60 s x 100 m) / fine (30 s x 50 m) pairs.
# Shifting the coarse grid by half a cell in each direction gives four
# pairs from the same trajectories.

train = GridSpec(0.0, 0.0, 60.0, 100.0, 60, 20)
pairs = training_pairs(trajs, train, shifts=2)
model = fit_model([c for c, _ in pairs], [f for _, f in pairs])
for key, cs in sorted(model.table.items(), key=lambda kv: (kv[0][0].value, kv[0][1].value)):
    print(f"{key[0].value}/{key[1].value}: n={cs.n_samples:5d}  r2={cs.r2:.4f}  p_c={cs.p_c:+.3f}")

# %% Refinement on the held-out hour
# The refined field loses one coarse cell on every edge, so its origin is
# one coarse cell later and further downstream than the input.

coarse = build_speed_field(trajs, GridSpec(3600.0, 0.0, 60.0, 100.0, 60, 20))
refined = refine_once(coarse, model)
truth = build_speed_field(trajs, refined.spec)
print(coarse.spec.describe(), "->", refined.spec.describe())
print(format_report([("hour2", evaluate(refined, truth))]))

# Where does the estimate miss the most?
err = np.abs(refined.cells - truth.cells)
a, b = np.unravel_index(np.nanargmax(err), err.shape)
print(f"worst cell t={refined.spec.t0 + a * refined.spec.dt:.0f}s "
      f"x={refined.spec.x0 + b * refined.spec.dx:.0f}m: "
      f"{refined.cells[a, b]:.1f} vs {truth.cells[a, b]:.1f} km/h")

# %% Pictures
for name, f in (("coarse", coarse), ("refined", refined), ("truth", truth)):
    (OUT / f"{name}.ppm").write_bytes(render_heatmap(f, block=4))
print("heatmaps in", OUT)
