import json
from pathlib import Path

import numpy as np
import pytest

from stcguide.models.problem import BoundarySet, ProblemConfig, ScpConfig, VehicleParams
from stcguide.services.config_loader import config_to_mapping, load_config
from stcguide.services.ocp import LandingProblem

REPO_ROOT = Path(__file__).resolve().parents[1]
SCENARIO_PATH = REPO_ROOT / "configs" / "reference_scenario.json"


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def scenario_config() -> ProblemConfig:
    return load_config(SCENARIO_PATH)


@pytest.fixture
def landing_problem() -> LandingProblem:
    return LandingProblem.from_config(ProblemConfig())


def hold_at_origin_config(**scp_overrides) -> ProblemConfig:
    """A vehicle resting at the pad with near-zero gravity and thrust bounds.

    Start and target coincide, so the straight-line guess is almost dynamically
    consistent and the solver only has to close the violation-accumulator defects.
    """
    vehicle = VehicleParams(
        isp=1e9, g0=1e-9, rho=0.0, m_i=100.0, m_dry=50.0,
        t_stc1_min=0.0, t_stc1_max=1e-6, t_stc2_min=2e-6, t_stc2_max=3e-6,
    )
    boundary = BoundarySet(
        m_i=100.0, m_dry=50.0,
        r_i=(0.0, 0.0, 0.0), r_f=(0.0, 0.0, 0.0),
        v_i=(0.0, 0.0, 0.0), v_f=(0.0, 0.0, 0.0),
        q_i=(1.0, 0.0, 0.0, 0.0), q_f=(1.0, 0.0, 0.0, 0.0),
    )
    settings = {"K": 5, "tf_guess": 0.5, "s_min": 0.5, "cert_points": 200, "max_iter": 30}
    settings.update(scp_overrides)
    return ProblemConfig(vehicle=vehicle, boundary=boundary, scp=ScpConfig(**settings), output_dir="out/hold")


@pytest.fixture
def hold_config() -> ProblemConfig:
    return hold_at_origin_config()


@pytest.fixture
def hold_config_path(tmp_path: Path, hold_config: ProblemConfig) -> Path:
    path = tmp_path / "hold.json"
    path.write_text(json.dumps(config_to_mapping(hold_config), indent=2))
    return path
