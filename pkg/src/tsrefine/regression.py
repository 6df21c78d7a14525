"""Fitting and storing the regime-switched linear refinement model.

For a coarse cell with predictor vector ``x = [C, LL, Lw, LR, Rt, UR, Up,
UL, Lf]`` in regime ``k`` the speed of subcell ``j`` is estimated as
``p[j, k] . x + intercept[j, k]``. The eight (regime, subcell) groups are
fitted independently by ordinary least squares.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import warnings
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg

from ._parallel import ordered_map
from .errors import ConfigurationError, FitError, ModelLoadError, UsageError
from .grid import (
    DEFAULT_THRESHOLD_KMH,
    PREDICTORS,
    REGIMES,
    SUBCELL_OFFSETS,
    SUBCELLS,
    GridSpec,
    NeighborVector,
    Regime,
    SpeedField,
    Subcell,
    Trajectory,
    build_speed_field,
    classify_regime,
    halve_spec,
    neighbor_stack,
)

MODEL_SCHEMA = "ts-refine-model/1"
MIN_SAMPLES = len(PREDICTORS) + 1
BUILTIN_SIZES = ((30.0, 50.0), (60.0, 100.0), (120.0, 200.0), (240.0, 400.0))


@dataclass(frozen=True)
class CoefficientSet:
    """Weights for the nine predictors (``PREDICTORS`` order) plus intercept in km/h."""

    coeffs: tuple[float, ...]
    intercept: float
    r2: float | None = None
    n_samples: int = 0
    rank_deficient: bool = False

    def __post_init__(self):
        c = tuple(float(v) for v in self.coeffs)
        if len(c) != len(PREDICTORS):
            raise ConfigurationError(f"expected {len(PREDICTORS)} coefficients, got {len(c)}")
        if not all(math.isfinite(v) for v in c) or not math.isfinite(self.intercept):
            raise ConfigurationError("coefficients must be finite")
        if self.r2 is not None and not 0.0 <= self.r2 <= 1.0:
            raise ConfigurationError(f"r2 must lie in [0, 1], got {self.r2}")
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "intercept", float(self.intercept))

    def coeff(self, name: str) -> float:
        return self.coeffs[PREDICTORS.index(name)]

    def as_row(self) -> np.ndarray:
        return np.array(self.coeffs + (self.intercept,))


for _i, _name in enumerate(PREDICTORS):
    setattr(CoefficientSet, f"p_{_name.lower()}", property(lambda self, _i=_i: self.coeffs[_i]))


@dataclass(frozen=True)
class RefinementModel:
    cell_dt: float
    cell_dx: float
    table: Mapping[tuple[Regime, Subcell], CoefficientSet]
    threshold: float = DEFAULT_THRESHOLD_KMH

    def __post_init__(self):
        if not (self.cell_dt > 0 and self.cell_dx > 0):
            raise ConfigurationError("model cell size must be positive")
        if not self.threshold > 0:
            raise ConfigurationError(f"threshold must be positive, got {self.threshold}")
        table = {}
        for k in REGIMES:
            for j in SUBCELLS:
                if (k, j) not in self.table:
                    raise ConfigurationError(f"model is missing coefficient set {k.value}/{j.value}")
                table[k, j] = self.table[k, j]
        if len(self.table) != len(table):
            raise ConfigurationError("model table has entries outside the 8 (regime, subcell) groups")
        object.__setattr__(self, "table", table)
        object.__setattr__(self, "cell_dt", float(self.cell_dt))
        object.__setattr__(self, "cell_dx", float(self.cell_dx))
        object.__setattr__(self, "threshold", float(self.threshold))

    def __getitem__(self, key) -> CoefficientSet:
        k, j = key
        return self.table[Regime(k), Subcell(j)]

    def weights(self, regime: Regime) -> np.ndarray:
        """``(4, 10)`` matrix, one row per subcell in ``SUBCELLS`` order."""
        return np.stack([self.table[Regime(regime), j].as_row() for j in SUBCELLS])

    def size_label(self) -> str:
        return f"{self.cell_dt:g}x{self.cell_dx:g}"


@dataclass(frozen=True)
class TrainingSample:
    predictors: NeighborVector
    targets: tuple[float | None, float | None, float | None, float | None]
    regime: Regime

    def target(self, subcell: Subcell) -> float | None:
        return self.targets[SUBCELLS.index(Subcell(subcell))]


# --------------------------------------------------------------------------
# samples


def _check_pair(coarse: SpeedField, fine: SpeedField) -> None:
    expected = halve_spec(coarse.spec)
    if fine.spec != expected:
        raise UsageError(
            f"fine grid ({fine.spec.describe()}) is not the halved coarse grid "
            f"({coarse.spec.describe()} -> expected {expected.describe()})"
        )
    if fine.lane != coarse.lane:
        raise UsageError(f"coarse field is lane {coarse.lane} but fine field is lane {fine.lane}")


def subcell_targets(fine_cells: np.ndarray, coarse_shape: tuple[int, int]) -> np.ndarray:
    """Fine speeds of the subcells of every interior coarse cell, ``(nt-2, nx-2, 4)``."""
    nt, nx = coarse_shape
    out = np.empty((nt - 2, nx - 2, 4))
    for q, j in enumerate(SUBCELLS):
        da, db = SUBCELL_OFFSETS[j]
        out[:, :, q] = fine_cells[2 + da: 2 * nt - 2: 2, 2 + db: 2 * nx - 2: 2]
    return out


def sample_arrays(coarse: SpeedField, fine: SpeedField) -> tuple[np.ndarray, np.ndarray]:
    """Predictor matrix ``(n, 9)`` and target matrix ``(n, 4)`` (NaN = missing).

    Only interior coarse cells with nine present predictors contribute;
    rows are in row-major ``(a, b)`` order.
    """
    _check_pair(coarse, fine)
    nt, nx = coarse.spec.shape
    if nt < 3 or nx < 3:
        return np.empty((0, 9)), np.empty((0, 4))
    X = neighbor_stack(coarse.cells).reshape(-1, 9)
    Y = subcell_targets(fine.cells, (nt, nx)).reshape(-1, 4)
    full = ~np.isnan(X).any(axis=1)
    return X[full], Y[full]


def extract_samples(coarse: SpeedField, fine: SpeedField,
                    threshold: float = DEFAULT_THRESHOLD_KMH) -> list[TrainingSample]:
    X, Y = sample_arrays(coarse, fine)
    out = []
    for x, y in zip(X, Y):
        out.append(TrainingSample(
            NeighborVector(*(float(v) for v in x)),
            tuple(None if np.isnan(v) else float(v) for v in y),
            classify_regime(float(x[0]), threshold),
        ))
    return out


def training_pairs(trajectories: Sequence[Trajectory], spec: GridSpec, lane: int = 1,
                   shifts: int = 1) -> list[tuple[SpeedField, SpeedField]]:
    """Coarse/fine field pairs on ``spec`` and on copies shifted by fractions of a cell.

    With ``shifts = s`` the grid origin is moved by ``i*dt/s`` and ``j*dx/s``
    for ``i, j < s`` (the cell count shrinks so every copy stays inside
    ``spec``), giving ``s*s`` partially overlapping samplings of the same data.
    """
    if shifts < 1:
        raise ConfigurationError("shifts must be >= 1")
    pairs = []
    for i in range(shifts):
        for j in range(shifts):
            nt = spec.nt - (1 if i else 0)
            nx = spec.nx - (1 if j else 0)
            if nt < 1 or nx < 1:
                continue
            c_spec = GridSpec(spec.t0 + i * spec.dt / shifts, spec.x0 + j * spec.dx / shifts,
                              spec.dt, spec.dx, nt, nx)
            pairs.append((
                build_speed_field(trajectories, c_spec, lane),
                build_speed_field(trajectories, halve_spec(c_spec), lane),
            ))
    return pairs


# --------------------------------------------------------------------------
# fitting


def _ols(X: np.ndarray, y: np.ndarray, label: str) -> CoefficientSet:
    n = y.size
    if n < MIN_SAMPLES:
        raise FitError(f"group {label}: {n} samples, need at least {MIN_SAMPLES}")
    A = np.column_stack([X, np.ones(n)])
    sol, _, rank, _ = scipy.linalg.lstsq(A, y, lapack_driver="gelsy")
    deficient = rank < A.shape[1]
    if deficient:
        warnings.warn(f"group {label}: design matrix has rank {rank} < {A.shape[1]}; "
                      "using the minimum-norm solution", stacklevel=3)
    resid = y - A @ sol
    sst = float(np.sum((y - y.mean()) ** 2))
    r2 = None
    if sst > 0:
        r2 = min(max(1.0 - float(resid @ resid) / sst, 0.0), 1.0)
    return CoefficientSet(tuple(sol[:-1]), float(sol[-1]), r2, int(n), bool(deficient))


def _group(X: np.ndarray, Y: np.ndarray, regime: Regime, subcell: Subcell, threshold: float):
    in_regime = (X[:, 0] < threshold) if regime is Regime.CG else (X[:, 0] >= threshold)
    y = Y[:, SUBCELLS.index(subcell)]
    keep = in_regime & ~np.isnan(y)
    return X[keep], y[keep]


def fit_ols(samples: Sequence[TrainingSample], regime: Regime, subcell: Subcell) -> CoefficientSet:
    """Least-squares fit of one (regime, subcell) group.

    Uses the samples of ``regime`` whose ``subcell`` target is present.
    Solved by QR with column pivoting; a rank-deficient design gives the
    minimum-norm solution and sets ``rank_deficient``.
    """
    regime, subcell = Regime(regime), Subcell(subcell)
    q = SUBCELLS.index(subcell)
    rows = [(s.predictors.as_tuple(), s.targets[q]) for s in samples
            if s.regime is regime and s.targets[q] is not None]
    X = np.array([r[0] for r in rows], dtype=float).reshape(-1, 9)
    y = np.array([r[1] for r in rows], dtype=float)
    return _ols(X, y, f"{regime.value}/{subcell.value}")


def fit_arrays(X: np.ndarray, Y: np.ndarray, cell_dt: float, cell_dx: float,
               threshold: float = DEFAULT_THRESHOLD_KMH) -> RefinementModel:
    groups = [(k, j) for k in REGIMES for j in SUBCELLS]

    def one(kj):
        k, j = kj
        Xg, yg = _group(X, Y, k, j, threshold)
        return _ols(Xg, yg, f"{k.value}/{j.value}")

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        fitted = ordered_map(one, groups)
    for w in caught:
        warnings.warn(w.message, stacklevel=2)
    return RefinementModel(cell_dt, cell_dx, dict(zip(groups, fitted)), threshold)


def fit_model(coarse, fine, threshold: float = DEFAULT_THRESHOLD_KMH) -> RefinementModel:
    """Fit all eight groups from one coarse/fine pair or from sequences of pairs.

    Samples from several pairs (lanes, time windows, shifted grids) are pooled.
    """
    coarse_list = [coarse] if isinstance(coarse, SpeedField) else list(coarse)
    fine_list = [fine] if isinstance(fine, SpeedField) else list(fine)
    if len(coarse_list) != len(fine_list) or not coarse_list:
        raise UsageError("fit_model needs the same non-zero number of coarse and fine fields")
    dt, dx = coarse_list[0].spec.dt, coarse_list[0].spec.dx
    Xs, Ys = [], []
    for c, f in zip(coarse_list, fine_list):
        if not c.spec.same_cell_size(dt, dx):
            raise UsageError(f"mixed cell sizes in training data: {dt:g}x{dx:g} and "
                             f"{c.spec.dt:g}x{c.spec.dx:g}")
        X, Y = sample_arrays(c, f)
        Xs.append(X)
        Ys.append(Y)
    return fit_arrays(np.concatenate(Xs), np.concatenate(Ys), dt, dx, threshold)


# --------------------------------------------------------------------------
# persistence


def model_to_dict(model: RefinementModel) -> dict:
    regimes = {}
    for k in REGIMES:
        regimes[k.value] = {}
        for j in SUBCELLS:
            cs = model.table[k, j]
            regimes[k.value][j.value] = {
                "coeffs": dict(zip(PREDICTORS, cs.coeffs)),
                "intercept": cs.intercept,
                "r2": cs.r2,
                "n_samples": cs.n_samples,
            }
            if cs.rank_deficient:
                regimes[k.value][j.value]["rank_deficient"] = True
    return {
        "schema": MODEL_SCHEMA,
        "cell_dt_s": model.cell_dt,
        "cell_dx_m": model.cell_dx,
        "threshold_kmh": model.threshold,
        "regimes": regimes,
    }


def _finite(doc, key, path):
    if key not in doc:
        raise ModelLoadError(f"{path}/{key}: missing")
    v = doc[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ModelLoadError(f"{path}/{key}: expected a finite number, got {v!r}")
    return float(v)


def model_from_dict(doc: dict) -> RefinementModel:
    if not isinstance(doc, dict):
        raise ModelLoadError("model document must be a JSON object")
    schema = doc.get("schema")
    if schema != MODEL_SCHEMA:
        raise ModelLoadError(f"schema: expected {MODEL_SCHEMA!r}, got {schema!r}")
    dt = _finite(doc, "cell_dt_s", "")
    dx = _finite(doc, "cell_dx_m", "")
    thr = _finite(doc, "threshold_kmh", "")
    regimes = doc.get("regimes")
    if not isinstance(regimes, dict):
        raise ModelLoadError("regimes: missing or not an object")
    table = {}
    for k in REGIMES:
        for j in SUBCELLS:
            path = f"regimes/{k.value}/{j.value}"
            entry = regimes.get(k.value, {}).get(j.value) if isinstance(regimes.get(k.value), dict) else None
            if not isinstance(entry, dict):
                raise ModelLoadError(f"{path}: missing entry {k.value}/{j.value}")
            coeffs = entry.get("coeffs")
            if not isinstance(coeffs, dict):
                raise ModelLoadError(f"{path}/coeffs: missing")
            c = tuple(_finite(coeffs, name, f"{path}/coeffs") for name in PREDICTORS)
            r2 = entry.get("r2")
            if r2 is not None:
                r2 = _finite(entry, "r2", path)
                if not 0 <= r2 <= 1:
                    raise ModelLoadError(f"{path}/r2: {r2} outside [0, 1]")
            n = entry.get("n_samples", 0)
            if not isinstance(n, int) or n < 0:
                raise ModelLoadError(f"{path}/n_samples: expected a non-negative integer, got {n!r}")
            table[k, j] = CoefficientSet(c, _finite(entry, "intercept", path), r2, n,
                                         bool(entry.get("rank_deficient", False)))
    try:
        return RefinementModel(dt, dx, table, thr)
    except ConfigurationError as exc:
        raise ModelLoadError(str(exc)) from None


def model_to_json(model: RefinementModel) -> str:
    return json.dumps(model_to_dict(model), indent=2) + "\n"


def model_digest(model: RefinementModel) -> str:
    blob = json.dumps(model_to_dict(model), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def save_model(model: RefinementModel, sink) -> None:
    text = model_to_json(model)
    if isinstance(sink, (str, os.PathLike)):
        with open(sink, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sink.write(text)


def load_model(source) -> RefinementModel:
    try:
        if isinstance(source, (str, os.PathLike)):
            with open(source, encoding="utf-8") as fh:
                doc = json.load(fh)
        else:
            doc = json.load(source)
    except json.JSONDecodeError as exc:
        raise ModelLoadError(f"model file is not valid JSON: {exc}") from None
    return model_from_dict(doc)


# --------------------------------------------------------------------------
# built-in coefficients

TABLE_RESOURCE = "table1.csv"


def builtin_table_bytes() -> bytes:
    return resources.files("tsrefine.data").joinpath(TABLE_RESOURCE).read_bytes()


@lru_cache(maxsize=None)
def _builtin_models() -> dict[tuple[float, float], RefinementModel]:
    reader = csv.DictReader(io.StringIO(builtin_table_bytes().decode("utf-8")))
    tables: dict[tuple[float, float], dict] = {}
    for row in reader:
        size = (float(row["cell_dt_s"]), float(row["cell_dx_m"]))
        cs = CoefficientSet(
            tuple(float(row[name]) for name in PREDICTORS),
            float(row["intercept"]),
            float(row["r2"]),
            int(row["n_samples"]),
        )
        tables.setdefault(size, {})[Regime(row["regime"]), Subcell(row["subcell"])] = cs
    return {size: RefinementModel(size[0], size[1], t) for size, t in tables.items()}


def builtin_model(cell_dt: float, cell_dx: float) -> RefinementModel:
    """Published coefficients for one of the four standard cell sizes.

    The 240 s x 400 m free-flow rows come from only 19 samples each and
    carry large, oscillating weights; they are shipped as published.
    """
    models = _builtin_models()
    for size, model in models.items():
        if math.isclose(size[0], cell_dt, rel_tol=1e-9) and math.isclose(size[1], cell_dx, rel_tol=1e-9):
            return model
    supported = ", ".join(f"{dt:g}s x {dx:g}m" for dt, dx in BUILTIN_SIZES)
    raise ConfigurationError(f"no built-in model for {cell_dt:g}s x {cell_dx:g}m; supported sizes: {supported}")
