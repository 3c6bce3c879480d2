import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from descent_vi.grid import build_grid  # noqa: E402
from descent_vi.model import Model, constant_obstacle, model_power  # noqa: E402
from descent_vi.penalty import PenaltyProblem  # noqa: E402

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture
def unit64():
    grid = build_grid(1, [1.0], [64])
    return PenaltyProblem(grid, Model(model_power(1.5), constant_obstacle(grid, 1e6)), 1.0)


@pytest.fixture
def contact64():
    grid = build_grid(1, [12.0], [64])
    return PenaltyProblem(grid, Model(model_power(1.5), constant_obstacle(grid, 0.5)), 0.01)
