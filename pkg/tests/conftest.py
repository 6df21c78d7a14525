import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tsrefine.grid import GridSpec, SpeedField, Trajectory  # noqa: E402
from tsrefine.wavegen import WaveScenario, generate  # noqa: E402

DEMOS = Path(__file__).resolve().parent.parent / "demos"

# two hours of 120 s stop-and-go cycles: hour 1 trains, hour 2 is held out
ACCEPTANCE_SCENARIO = WaveScenario(duration=7200, stopgo_period=120, stopgo_duty=0.3)


@pytest.fixture(scope="session")
def synthetic():
    return generate(ACCEPTANCE_SCENARIO)


@pytest.fixture(scope="session")
def default_synthetic():
    return generate(WaveScenario())


def random_trajectory(rng, vid, t_range=(0.0, 20.0), x_range=(-20.0, 100.0), lane=1,
                      max_speed=30.0):
    """Piecewise-linear trajectory with irregular sampling and occasional stops."""
    n = int(rng.integers(3, 12))
    dt = rng.uniform(0.3, 8.0, n - 1)
    t = np.cumsum(np.concatenate([[rng.uniform(*t_range)], dt]))
    v = rng.uniform(0.0, max_speed, n - 1)
    v[rng.random(n - 1) < 0.2] = 0.0
    x = rng.uniform(*x_range) + np.concatenate([[0.0], np.cumsum(v * dt)])
    return Trajectory(f"v{vid:03d}", lane, t, x)


def random_field(rng, nt, nx, spec=None, missing=0.1, lo=0.0, hi=100.0):
    cells = rng.uniform(lo, hi, (nt, nx))
    cells[rng.random((nt, nx)) < missing] = np.nan
    return SpeedField(spec or GridSpec(0.0, 0.0, 30.0, 50.0, nt, nx), cells)


# --------------------------------------------------------------------------
# acceptance gate bookkeeping

ACCEPTANCE_CRITERIA = (
    "ols-exactness",
    "builtin-table-guard",
    "metric-oracle",
    "shape-laws",
    "edie-construction",
    "e2e-1-4",
    "e2e-1-4-16",
    "us101-1-4",
    "determinism",
)
ACCEPTANCE_RESULTS: dict[str, str] = {}
_acceptance_collected = False


def record(name, ok, detail=""):
    """Store one criterion's outcome; ``ok`` is True, False or ``"SKIP"``."""
    status = ok if isinstance(ok, str) else ("PASS" if ok else "FAIL")
    ACCEPTANCE_RESULTS[name] = f"{status}  {name}  {detail}".rstrip()
    print(ACCEPTANCE_RESULTS[name])
    return ok


def pytest_collection_modifyitems(items):
    global _acceptance_collected
    _acceptance_collected = any(item.module.__name__ == "test_acceptance" for item in items)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_collected:
        return
    terminalreporter.section("acceptance criteria")
    for name in ACCEPTANCE_CRITERIA:
        terminalreporter.write_line(ACCEPTANCE_RESULTS.get(name, f"FAIL  {name}  (no result recorded)"))
