import copy
from typing import Any, Callable, Dict

import pytest
from ruamel.yaml import YAML

from app.core.cache import factorization_cache
from app.models.trajectory import SolverControls
from app.schemas.experiment import ExperimentConfig, ForcingBlock, ModelBlock
from app.services.context_service import ExperimentContext, build_context
from app.services.domain_service import build_grid
from app.services.model_service import build_forcing, build_model

# Coarse but fully featured experiment used by most service tests
SMALL_CONFIG: Dict[str, Any] = {
    "grid": {"n": 1, "L": 8.0, "N": 63},
    "model": {"lam": 1.0, "p": 4, "kind": "power", "beta": 1.0},
    "forcing": {"temporal": "exponential", "spatial": "gaussian", "amplitude": 0.35},
    "solver": {"dt": 0.05, "scheme": "imex", "snapshot_every": 10},
    "family": {"base_radius": 1.0, "sampler": "band_limited", "ensemble_size": 2},
    "tasks": {
        "verify_structure": {"samples": 2000},
        "simulate": {"t0": 0.0, "t1": 5.0, "tail_radii": [1.0, 2.0]},
        "estimates": {
            "tau": 0.0,
            "horizons": [3.0, 6.0, 12.0],
            "radii": [0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
            "cauchy_pairs": [[6.0, 12.0]],
        },
        "attractor": {
            "tau": 0.0,
            "ladder": [5.0, 10.0, 20.0, 30.0],
            "attraction_horizons": [5.0, 10.0, 20.0],
        },
    },
    "seed": 0,
    "jobs": 2,
}


@pytest.fixture(autouse=True)
def clear_factorizations():
    """Start every test with an empty factorization cache."""
    factorization_cache.clear()
    yield
    factorization_cache.clear()


@pytest.fixture
def grid():
    """1D grid on [-8, 8] with 63 interior nodes."""
    return build_grid(1, 8.0, 63)


@pytest.fixture
def grid_2d():
    """2D grid on [-4, 4]^2 with 15 nodes per axis."""
    return build_grid(2, 4.0, 15)


@pytest.fixture
def default_model(grid):
    """f(s) = -|s|^2 s with lambda = 1."""
    return build_model(ModelBlock(), grid)


@pytest.fixture
def forcing(grid):
    """Stationary Gaussian forcing of amplitude 0.35."""
    return build_forcing(ForcingBlock(), grid)


@pytest.fixture
def zero_forcing(grid):
    return build_forcing(ForcingBlock(amplitude=0.0), grid)


@pytest.fixture
def controls():
    return SolverControls(dt=0.05)


@pytest.fixture
def config_data() -> Dict[str, Any]:
    """A fresh, mutable copy of the small experiment."""
    return copy.deepcopy(SMALL_CONFIG)


@pytest.fixture
def small_config(config_data) -> ExperimentConfig:
    return ExperimentConfig.model_validate(config_data)


@pytest.fixture
def ctx(small_config) -> ExperimentContext:
    """Runtime context of the small experiment."""
    return build_context(small_config)


@pytest.fixture
def write_config(tmp_path) -> Callable[..., str]:
    """Write a mapping (or raw text) to a YAML file and return its path."""

    def write(data, name: str = "experiment.yaml") -> str:
        path = tmp_path / name
        if isinstance(data, str):
            path.write_text(data, encoding="utf-8")
        else:
            yaml = YAML(typ="safe", pure=True)
            with path.open("w", encoding="utf-8") as handle:
                yaml.dump(data, handle)
        return str(path)

    return write
