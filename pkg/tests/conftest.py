import copy
import json
from pathlib import Path

import pytest

from pdmp_impulse.model import load_model
from pdmp_impulse.valuefn import GridSpec, compute_h, value_iterate

MODEL_PATH = Path(__file__).resolve().parent.parent / "models" / "rm1.json"

# Start points used across MC cross-checks; pinned as grid nodes so value
# lookups at them carry no interpolation error.
PINNED = {1: ((2.0,), (7.0,)), 2: ((4.0,), (6.0,))}


def rm1_doc() -> dict:
    return json.loads(MODEL_PATH.read_text())


@pytest.fixture(scope="session")
def rm1():
    return load_model(MODEL_PATH)


@pytest.fixture(scope="session")
def rm1_zero_running():
    doc = rm1_doc()
    doc["costs"]["running"] = {"1": "0.0", "2": "0.0"}
    doc["costs"]["running_bound"] = 0.0
    return load_model(doc)


@pytest.fixture(scope="session")
def rm1_zero_intensity():
    doc = rm1_doc()
    doc["intensity"] = {"1": "0.0", "2": "0.0"}
    doc["intensity_bound"] = 0.0
    return load_model(doc)


@pytest.fixture(scope="session")
def cycle_model():
    """Single mode, no interior jumps, constant running cost: the no-impulse
    cost is a geometric series of discounted cycle costs."""
    doc = {
        "modes": [{"id": 1, "bounds": [[0.0, 10.0]]}],
        "flow": {"family": "constant-drift", "params": {"1": {"velocity": [-1.0]}}},
        "intensity": {"1": "0.0"},
        "intensity_bound": 0.0,
        "kernel": [
            {"from_mode": 1, "region": None,
             "atoms": [{"mode": 1, "zeta": ["5.0"], "prob": 1.0}]}
        ],
        "costs": {
            "running": {"1": "2.0"},
            "running_bound": 2.0,
            "intervention": {"kind": "constant", "value": 1.0},
            "intervention_bounds": [1.0, 1.0],
        },
        "control_set": [{"mode": 1, "zeta": [8.0]}],
        "discount": 0.5,
        "t_star_bound": 10.0,
    }
    return load_model(doc)


@pytest.fixture(scope="session")
def rm1_h(rm1):
    return compute_h(rm1, GridSpec(density=200, extra_points=PINNED), tol=1e-9)


@pytest.fixture(scope="session")
def rm1_table(rm1, rm1_h):
    return value_iterate(rm1, rm1_h, n_max=3, eps=0.01)


@pytest.fixture(scope="session")
def zero_running_table(rm1_zero_running):
    h0 = compute_h(rm1_zero_running, GridSpec(density=60), tol=1e-10)
    return value_iterate(rm1_zero_running, h0, n_max=2, eps=0.01), h0


@pytest.fixture(scope="session")
def zero_intensity_table(rm1_zero_intensity):
    h0 = compute_h(rm1_zero_intensity, GridSpec(density=80), tol=1e-10)
    return value_iterate(rm1_zero_intensity, h0, n_max=2, eps=0.01), h0
