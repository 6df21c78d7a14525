"""Refining coarse time-space traffic speed diagrams with a regime-switched linear model."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigurationError,
    DataError,
    FitError,
    ModelLoadError,
    SchemaError,
    TsRefineError,
    UsageError,
)
from .grid import (  # noqa: E402
    GridSpec,
    NeighborVector,
    Regime,
    SpeedField,
    Subcell,
    Trajectory,
    TrajectoryPoint,
    build_speed_field,
    classify_regime,
    halve_spec,
    load_field,
    neighbor_vector,
    save_field,
)
from .trajio import IngestSchema, export_trajectories, parse_trajectories  # noqa: E402
from .wavegen import WaveScenario, generate  # noqa: E402
from .regression import (  # noqa: E402
    CoefficientSet,
    RefinementModel,
    TrainingSample,
    builtin_model,
    extract_samples,
    fit_model,
    fit_ols,
    load_model,
    save_model,
)
from .refiner import refine_iterated, refine_once  # noqa: E402
from .evaluate import ErrorReport, crop_to, evaluate, format_report  # noqa: E402
from .render import render_heatmap, render_svg  # noqa: E402

__all__ = [
    "ConfigurationError", "DataError", "FitError", "ModelLoadError", "SchemaError",
    "TsRefineError", "UsageError",
    "GridSpec", "NeighborVector", "Regime", "SpeedField", "Subcell", "Trajectory",
    "TrajectoryPoint", "build_speed_field", "classify_regime", "halve_spec", "load_field",
    "neighbor_vector", "save_field",
    "IngestSchema", "export_trajectories", "parse_trajectories",
    "WaveScenario", "generate",
    "CoefficientSet", "RefinementModel", "TrainingSample", "builtin_model", "extract_samples",
    "fit_model", "fit_ols", "load_model", "save_model",
    "refine_iterated", "refine_once",
    "ErrorReport", "crop_to", "evaluate", "format_report",
    "render_heatmap", "render_svg",
]
