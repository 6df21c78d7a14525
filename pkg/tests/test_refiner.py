import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_field
from tsrefine.errors import UsageError
from tsrefine.grid import SUBCELLS, GridSpec, Regime, SpeedField, Subcell
from tsrefine.refiner import refine_iterated, refine_once, refined_spec
from tsrefine.regression import CoefficientSet, RefinementModel, builtin_model


def constant_model(dt, dx, row_ff, row_cg=None, threshold=60.0):
    row_cg = row_ff if row_cg is None else row_cg
    table = {}
    for k, row in ((Regime.FF, row_ff), (Regime.CG, row_cg)):
        for j in SUBCELLS:
            r = row(j) if callable(row) else row
            table[k, j] = CoefficientSet(tuple(r[:9]), r[9])
    return RefinementModel(dt, dx, table, threshold)


def identity_model(dt, dx):
    return constant_model(dt, dx, [1.0] + [0.0] * 9)


def test_uniform_70_with_builtin_30x50():
    f = SpeedField(GridSpec(0, 0, 30, 50, 5, 5), np.full((5, 5), 70.0))
    out = refine_once(f, builtin_model(30, 50))
    # ff/LL: coefficient sum 0.98, intercept 0.84
    assert out.cells[0::2, 0::2] == pytest.approx(np.full((3, 3), 0.98 * 70 + 0.84), abs=1e-9)
    assert out.cells[0, 0] == pytest.approx(69.44, abs=1e-9)


def test_3x3_gives_2x2_and_shifted_origin():
    f = SpeedField(GridSpec(100, 200, 30, 50, 3, 3), np.full((3, 3), 40.0))
    out = refine_once(f, builtin_model(30, 50))
    assert out.spec == GridSpec(130, 250, 15, 25, 2, 2)


def test_identity_model_reproduces_parents():
    rng = np.random.default_rng(0)
    f = SpeedField(GridSpec(0, 0, 30, 50, 6, 5), rng.uniform(0, 120, (6, 5)))
    out = refine_once(f, identity_model(30, 50))
    parents = np.repeat(np.repeat(f.cells[1:-1, 1:-1], 2, axis=0), 2, axis=1)
    np.testing.assert_array_equal(out.cells, parents)


def test_missing_neighbour_gives_four_absent_subcells():
    cells = np.full((4, 3), 50.0)
    cells[0, 2] = np.nan  # UL neighbour of cell (1, 1) only
    out, counts = refine_once(SpeedField(GridSpec(0, 0, 30, 50, 4, 3), cells),
                              builtin_model(30, 50), return_counts=True)
    assert np.isnan(out.cells[0:2, 0:2]).all()
    assert not np.isnan(out.cells[2:4, 0:2]).any()
    assert (counts.ff, counts.cg, counts.skipped) == (0, 1, 1)


def test_negative_estimates_clamp_to_zero():
    model = constant_model(30, 50, [1.0] + [0.0] * 8 + [-50.0])
    out = refine_once(SpeedField(GridSpec(0, 0, 30, 50, 3, 3), np.full((3, 3), 10.0)), model)
    assert (out.cells == 0.0).all()


def test_free_flow_overshoot_is_not_clamped():
    model = constant_model(30, 50, [1.0] + [0.0] * 8 + [25.0])
    out = refine_once(SpeedField(GridSpec(0, 0, 30, 50, 3, 3), np.full((3, 3), 110.0)), model)
    assert (out.cells == 135.0).all()


def test_threshold_tie_uses_free_flow():
    model = constant_model(30, 50, [0.0] * 9 + [1.0], [0.0] * 9 + [2.0])
    cells = np.full((3, 4), 30.0)
    cells[1, 1] = 60.0
    out, counts = refine_once(SpeedField(GridSpec(0, 0, 30, 50, 3, 4), cells), model,
                              return_counts=True)
    assert (out.cells[:, 0:2] == 1.0).all() and (out.cells[:, 2:4] == 2.0).all()
    assert (counts.ff, counts.cg) == (1, 1)


def test_subcells_are_placed_by_position():
    def row(j):
        return [0.0] * 9 + [10.0 * (SUBCELLS.index(j) + 1)]
    out = refine_once(SpeedField(GridSpec(0, 0, 30, 50, 3, 3), np.full((3, 3), 50.0)),
                      constant_model(30, 50, row))
    # out[a, b] with a = time, b = space
    assert out.cells[0, 0] == 10.0  # LL
    assert out.cells[1, 0] == 20.0  # LR
    assert out.cells[1, 1] == 30.0  # UR
    assert out.cells[0, 1] == 40.0  # UL


def test_size_mismatch_and_too_small():
    f = SpeedField(GridSpec(0, 0, 60, 100, 3, 3), np.full((3, 3), 50.0))
    with pytest.raises(UsageError, match="model is for 30s x 50m"):
        refine_once(f, builtin_model(30, 50))
    g = SpeedField(GridSpec(0, 0, 30, 50, 2, 5), np.full((2, 5), 50.0))
    with pytest.raises(UsageError, match="nothing refinable"):
        refine_once(g, builtin_model(30, 50))


def test_two_passes_10x10_to_28x28():
    f = SpeedField(GridSpec(0, 0, 60, 100, 10, 10), np.full((10, 10), 45.0))
    one = refine_once(f, builtin_model(60, 100))
    assert one.spec.shape == (16, 16)
    two = refine_iterated(f, [builtin_model(60, 100), builtin_model(30, 50)], 2)
    assert two.spec.shape == (28, 28)
    assert two.spec == refined_spec(refined_spec(f.spec))


def test_one_pass_equals_refine_once():
    f = random_field(np.random.default_rng(2), 7, 6)
    m = builtin_model(30, 50)
    np.testing.assert_array_equal(refine_iterated(f, [m], 1).cells, refine_once(f, m).cells)


def test_iterated_errors_name_the_pass():
    f = SpeedField(GridSpec(0, 0, 60, 100, 10, 10), np.full((10, 10), 45.0))
    with pytest.raises(UsageError, match="pass 2"):
        refine_iterated(f, [builtin_model(60, 100), builtin_model(60, 100)], 2)
    with pytest.raises(UsageError, match="2 models"):
        refine_iterated(f, [builtin_model(60, 100)], 2)


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 9), st.integers(3, 9), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_identity_survives_any_number_of_passes(nt, nx, passes, seed):
    rng = np.random.default_rng(seed)
    f = SpeedField(GridSpec(0, 0, 240, 400, nt + 4, nx + 4), rng.uniform(0, 100, (nt + 4, nx + 4)))
    models = [identity_model(240 / 2 ** p, 400 / 2 ** p) for p in range(passes)]
    out = f
    for p in range(passes):
        if min(out.spec.shape) < 3:
            return
        out = refine_iterated(out, models[p:p + 1], 1)
    # each surviving cell lies inside exactly one original cell
    s = out.spec
    t_mid = s.t0 + (np.arange(s.nt) + 0.5) * s.dt
    x_mid = s.x0 + (np.arange(s.nx) + 0.5) * s.dx
    a = np.floor(t_mid / 240).astype(int)
    b = np.floor(x_mid / 400).astype(int)
    np.testing.assert_array_equal(out.cells, f.cells[np.ix_(a, b)])


@settings(max_examples=30, deadline=None)
@given(st.integers(4, 10), st.integers(4, 10), st.integers(0, 2**32 - 1))
def test_cellwise_independence(nt, nx, seed):
    rng = np.random.default_rng(seed)
    f = random_field(rng, nt, nx, missing=0.05)
    m = builtin_model(30, 50)
    full = refine_once(f, m).cells
    a0, b0 = int(rng.integers(0, nt - 2)), int(rng.integers(0, nx - 2))
    a1, b1 = int(rng.integers(a0 + 3, nt + 1)), int(rng.integers(b0 + 3, nx + 1))
    sub = SpeedField(GridSpec(a0 * 30.0, b0 * 50.0, 30, 50, a1 - a0, b1 - b0), f.cells[a0:a1, b0:b1])
    part = refine_once(sub, m).cells
    np.testing.assert_array_equal(part, full[2 * a0:2 * (a1 - 2), 2 * b0:2 * (b1 - 2)])


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 10), st.integers(3, 10), st.integers(0, 2**32 - 1))
def test_output_bounds_and_dispatch_counts(nt, nx, seed):
    rng = np.random.default_rng(seed)
    f = random_field(rng, nt, nx, missing=0.1, hi=130.0)
    out, counts = refine_once(f, builtin_model(30, 50), return_counts=True)
    present = out.cells[~np.isnan(out.cells)]
    assert np.all(np.isfinite(present)) and np.all(present >= 0)
    assert counts.refined + counts.skipped == (nt - 2) * (nx - 2)
    assert present.size == 4 * counts.refined
    centers = f.cells[1:-1, 1:-1]
    assert counts.cg <= int((centers < 60).sum())


def test_subcell_enum_order():
    assert [j.value for j in SUBCELLS] == ["LL", "LR", "UR", "UL"]
    assert Subcell("UR") is Subcell.UR
