import json
from pathlib import Path

import numpy as np
import pytest

from gpcmpc import gpc, models, orthopoly

REPO = Path(__file__).resolve().parents[1]
SCENARIO_DIR = REPO / "scenarios"


@pytest.fixture(scope="session")
def robot_scenario_path():
    return SCENARIO_DIR / "desk_robot.json"


@pytest.fixture(scope="session")
def quadrotor_scenario_path():
    return SCENARIO_DIR / "desk_quadrotor.json"


@pytest.fixture(scope="session")
def unicycle_gpc():
    """gPC model of the wheeled robot with the experiment's parameters."""
    model = models.UnicycleModel()
    sigma = np.sqrt(1.5e-3)
    params = [gpc.expand_param(orthopoly.HERMITE, 0.2, sigma, d, name)
              for d, name in enumerate(model.param_names)]
    return gpc.GpcModel.build(model, params, order=2)


def load_json(path):
    with open(path) as fh:
        return json.load(fh)
