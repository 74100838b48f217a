import os
import sys

import numpy as np
import pytest

# Flat modules live at the repository root
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from core import DaySet, DayVelocityMatrix, SensorLayout, TimeGrid  # noqa: E402
from ingest import SyntheticSpec, generate_synthetic, profile_transitions  # noqa: E402


def iso_day(offset: int) -> str:
    """ISO date `offset` days after Monday 2012-01-02."""
    import datetime

    return (datetime.date(2012, 1, 2) + datetime.timedelta(days=offset)).isoformat()


def constant_dayset(levels, num_steps: int) -> DaySet:
    """One day per row of `levels` (M speeds each), constant over the day."""
    return DaySet(
        DayVelocityMatrix(iso_day(d), np.tile(np.asarray(row, dtype=float)[:, None], (1, num_steps)))
        for d, row in enumerate(levels)
    )


@pytest.fixture
def short_grid():
    return TimeGrid(start_minute=360.0, step_minutes=5.0, num_steps=37)


@pytest.fixture
def corridor():
    return SensorLayout.evenly_spaced(5, 4.0)


@pytest.fixture
def synthetic_days(short_grid):
    transitions = profile_transitions(5, short_grid.num_intervals, coupling=0.01, dip_depth=0.25)
    spec = SyntheticSpec(transitions=transitions, num_days=60, sigma=1.0, v0_range=(40.0, 70.0), seed=0)
    dayset, truth = generate_synthetic(spec)
    return dayset, truth
