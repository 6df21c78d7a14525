import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_field
from oracles import metrics_loop
from tsrefine.errors import UsageError
from tsrefine.evaluate import (
    REPORT_COLUMNS,
    crop_to,
    evaluate,
    format_report,
    parse_report_csv,
    subcell_labels,
)
from tsrefine.grid import GridSpec, SpeedField, Subcell

SPEC = GridSpec(0.0, 0.0, 15.0, 25.0, 2, 2)


def field(cells, spec=SPEC):
    return SpeedField(spec, np.asarray(cells, dtype=float))


def test_identical_fields_have_zero_error():
    f = random_field(np.random.default_rng(0), 8, 6, spec=GridSpec(0, 0, 15, 25, 8, 6))
    rep = evaluate(f, f)
    assert all(r.mae == 0 and r.mape == 0 for r in rep.rows())


def test_hand_worked_group():
    # LL cells of a 4x2 grid sit at a = 0, 2 with b = 0
    spec = GridSpec(0, 0, 15, 25, 4, 2)
    truth = np.full((4, 2), np.nan)
    est = np.full((4, 2), np.nan)
    truth[0, 0], truth[2, 0] = 50.0, 60.0
    est[0, 0], est[2, 0] = 52.0, 57.0
    rep = evaluate(field(est, spec), field(truth, spec))
    ll = rep[Subcell.LL]
    assert ll.count == 2
    assert ll.mae == 2.5
    assert ll.mape == pytest.approx((2 / 50 + 3 / 60) / 2, abs=1e-15)
    assert ll.mape == pytest.approx(0.045)
    assert rep["LR"].count == 0 and rep["LR"].mae is None


def test_guards():
    truth = field([[0.05, 30.0], [np.nan, 40.0]])
    est = field([[10.0, np.nan], [20.0, 44.0]])
    rep = evaluate(est, truth)
    assert rep.skipped_zero_truth == 1
    assert rep.skipped_missing == 2
    assert rep.pooled.count == 1 and rep.pooled.mape == pytest.approx(0.1)


def test_grid_mismatch():
    with pytest.raises(UsageError, match="different grids"):
        evaluate(field(np.ones((2, 2))), SpeedField(GridSpec(15, 0, 15, 25, 2, 2), np.ones((2, 2))))


def test_subcell_labels_follow_parity():
    lab = subcell_labels((2, 2))
    assert [[int(v) for v in row] for row in lab] == [[0, 3], [1, 2]]  # LL UL / LR UR


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_matches_scalar_loop_oracle(nt, nx, seed):
    rng = np.random.default_rng(seed)
    spec = GridSpec(0, 0, 15, 25, nt, nx)
    est = random_field(rng, nt, nx, spec=spec, missing=0.2)
    t = rng.uniform(0, 100, (nt, nx))
    t[rng.random((nt, nx)) < 0.2] = np.nan
    t[rng.random((nt, nx)) < 0.1] = rng.uniform(0, 0.1)
    truth = SpeedField(spec, t)
    rep = evaluate(est, truth)
    oracle = metrics_loop(est.cells, truth.cells)
    for row in rep.rows():
        assert (row.count, row.mae, row.mape) == oracle[row.subcell]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_mae_symmetric_mape_not(seed):
    rng = np.random.default_rng(seed)
    spec = GridSpec(0, 0, 15, 25, 6, 6)
    a = random_field(rng, 6, 6, spec=spec, missing=0.0, lo=1.0)
    b = random_field(rng, 6, 6, spec=spec, missing=0.0, lo=1.0)
    ab, ba = evaluate(a, b), evaluate(b, a)
    assert ab.pooled.mae == pytest.approx(ba.pooled.mae, rel=1e-12)
    assert ab.pooled.mape != ba.pooled.mape


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.5, 2.0))
def test_scaling(seed, c):
    rng = np.random.default_rng(seed)
    spec = GridSpec(0, 0, 15, 25, 6, 6)
    a = random_field(rng, 6, 6, spec=spec, lo=1.0, hi=100.0)
    b = random_field(rng, 6, 6, spec=spec, lo=1.0, hi=100.0)
    r1 = evaluate(a, b)
    r2 = evaluate(a.replace_cells(a.cells * c), b.replace_cells(b.cells * c))
    assert r2.pooled.mae == pytest.approx(c * r1.pooled.mae, abs=1e-12 * max(1, r1.pooled.mae))
    assert r2.pooled.mape == pytest.approx(r1.pooled.mape, abs=1e-12)


def test_per_subcell_counts_are_independent():
    spec = GridSpec(0, 0, 15, 25, 2, 2)
    truth = field(np.full((2, 2), 50.0), spec)
    est = np.full((2, 2), 50.0)
    est[1, 0] = np.nan  # only the LR pair goes missing
    rep = evaluate(field(est, spec), truth)
    assert [r.count for r in rep.per_subcell] == [1, 0, 1, 1]


def test_pooled_is_count_weighted():
    rng = np.random.default_rng(4)
    spec = GridSpec(0, 0, 15, 25, 7, 5)
    rep = evaluate(random_field(rng, 7, 5, spec=spec), random_field(rng, 7, 5, spec=spec, lo=1))
    weighted = math.fsum(r.count * r.mae for r in rep.per_subcell if r.count) / rep.pooled.count
    assert rep.pooled.mae == pytest.approx(weighted, rel=1e-12)


# --------------------------------------------------------------------------
# cropping

def test_crop_to_own_spec_is_identity():
    f = random_field(np.random.default_rng(1), 5, 4)
    np.testing.assert_array_equal(crop_to(f, f.spec).cells, f.cells)


def test_crop_centre():
    spec = GridSpec(0, 0, 15, 25, 20, 20)
    f = random_field(np.random.default_rng(2), 20, 20, spec=spec)
    g = crop_to(f, GridSpec(30, 50, 15, 25, 16, 16))
    np.testing.assert_array_equal(g.cells, f.cells[2:18, 2:18])


@settings(max_examples=40)
@given(st.lists(st.integers(0, 6), min_size=8, max_size=8))
def test_crop_twice_equals_crop_to_intersection(v):
    spec = GridSpec(0, 0, 15, 25, 12, 12)
    f = random_field(np.random.default_rng(sum(v)), 12, 12, spec=spec)
    a0, b0, na, nb = v[0], v[1], v[2] + 6, v[3] + 6
    w1 = GridSpec(a0 * 15, b0 * 25, 15, 25, min(na, 12 - a0), min(nb, 12 - b0))
    a1, b1 = a0 + v[4] % w1.nt, b0 + v[5] % w1.nx
    w2 = GridSpec(a1 * 15, b1 * 25, 15, 25, max(1, min(v[6] + 1, a0 + w1.nt - a1)),
                  max(1, min(v[7] + 1, b0 + w1.nx - b1)))
    np.testing.assert_array_equal(crop_to(crop_to(f, w1), w2).cells, crop_to(f, w2).cells)


@pytest.mark.parametrize("window,match", [
    (GridSpec(7, 0, 15, 25, 2, 2), "not aligned"),
    (GridSpec(0, 0, 30, 25, 2, 2), "differ"),
    (GridSpec(60, 0, 15, 25, 2, 2), "outside"),
])
def test_crop_errors(window, match):
    f = random_field(np.random.default_rng(3), 5, 4, spec=GridSpec(0, 0, 15, 25, 5, 4))
    with pytest.raises(UsageError, match=match):
        crop_to(f, window)


# --------------------------------------------------------------------------
# report formatting

def test_empty_report_is_header_only():
    assert format_report([], "csv") == ",".join(REPORT_COLUMNS) + "\n"


def test_one_report_has_five_rows_and_round_trips():
    rng = np.random.default_rng(5)
    spec = GridSpec(0, 0, 15, 25, 6, 6)
    rep = evaluate(random_field(rng, 6, 6, spec=spec), random_field(rng, 6, 6, spec=spec, lo=1))
    text = format_report([("pass1", rep)], "csv")
    rows = parse_report_csv(text)
    assert [r["subcell"] for r in rows] == ["LL", "LR", "UR", "UL", "all"]
    for parsed, row in zip(rows, rep.rows()):
        assert parsed["count"] == row.count
        assert parsed["mae_kmh"] == pytest.approx(row.mae, abs=5e-4)
        assert parsed["mape"] == pytest.approx(row.mape, abs=5e-4)
    text_table = format_report([("pass1", rep)], "text").splitlines()
    assert text_table[0].split() == ["label", "subcell", "count", "MAE", "MAPE"]
    assert len(text_table) == 6


def test_unknown_format():
    with pytest.raises(UsageError):
        format_report([], "xml")
