import json

import numpy as np
import pytest

from pdmp_impulse.errors import (
    KernelCoverageError,
    ModelParseError,
    ModelValidationError,
    UnsupportedFeatureError,
)
from pdmp_impulse.model import as_state, load_model, validate_model

from conftest import rm1_doc


def test_load_rm1_echoes_declared_fields(rm1):
    assert rm1.mode_ids == (1, 2)
    assert len(rm1.control_set) == 2
    assert rm1.discount == 0.5
    assert rm1.dim == 1
    assert rm1.t_star_bound == 10.0
    assert rm1.costs.c_lower == rm1.costs.c_upper == 1.0


def test_missing_discount_is_parse_error():
    doc = rm1_doc()
    del doc["discount"]
    with pytest.raises(ModelParseError, match="discount required"):
        load_model(doc)


def test_bad_probability_sum_is_validation_error():
    doc = rm1_doc()
    doc["kernel"][0]["atoms"][0]["prob"] = 0.9
    with pytest.raises(ModelValidationError, match="sum"):
        load_model(doc)


def test_unknown_flow_family_unsupported():
    doc = rm1_doc()
    doc["flow"]["family"] = "runge-kutta"
    with pytest.raises(UnsupportedFeatureError, match="runge-kutta"):
        load_model(doc)


def test_parse_errors_name_the_field():
    doc = rm1_doc()
    del doc["costs"]["running_bound"]
    with pytest.raises(ModelParseError, match="running_bound"):
        load_model(doc)
    doc = rm1_doc()
    doc["control_set"] = []
    with pytest.raises(ModelParseError, match="control_set"):
        load_model(doc)


def test_load_from_json_text_and_path(tmp_path):
    doc = rm1_doc()
    by_dict = load_model(doc)
    by_text = load_model(json.dumps(doc))
    path = tmp_path / "m.json"
    path.write_text(json.dumps(doc))
    by_path = load_model(path)
    assert by_dict.content_hash == by_text.content_hash == by_path.content_hash


def test_validate_rm1_all_pass(rm1):
    report = validate_model(rm1, grid_density=50, rng_seed=1)
    assert report.passed
    names = {c.name for c in report.checks}
    assert {"exit_time_bounded", "kernel_atoms", "intervention_cost_bounds",
            "intervention_cost_triangle", "running_cost_bounds",
            "intensity_bounds", "flow_semigroup",
            "lipschitz_spot_estimates"} <= names
    # Constant intervention cost: sampled bounds collapse to the declared 1.
    assert report.estimated_constants["c_min_sampled"] == pytest.approx(1.0)
    assert report.estimated_constants["c_max_sampled"] == pytest.approx(1.0)
    json.loads(report.to_json())  # serializable


def test_validate_flags_boundary_atom():
    doc = rm1_doc()
    doc["kernel"][0]["atoms"][0]["zeta"] = ["10.0"]  # on the region boundary
    model = load_model(doc)
    report = validate_model(model, grid_density=10, rng_seed=1)
    check = next(c for c in report.checks if c.name == "kernel_atoms")
    assert not check.passed
    assert "boundary" in check.detail
    assert check.witness is not None
    with pytest.raises(ModelValidationError):
        validate_model(model, grid_density=10, rng_seed=1, raise_on_failure=True)


def test_validate_flags_zero_cost_entry():
    doc = rm1_doc()
    doc["costs"]["intervention"] = {"kind": "per_target", "values": [1.0, 0.0]}
    model = load_model(doc)
    report = validate_model(model, grid_density=10, rng_seed=1)
    check = next(c for c in report.checks if c.name == "intervention_cost_bounds")
    assert not check.passed
    assert "c0 > 0 violated" in check.detail


def test_validate_flags_unbounded_exit_time():
    doc = rm1_doc()
    # Decay toward an interior target never reaches the boundary.
    doc["flow"] = {
        "family": "exponential-decay-to-target",
        "params": {"1": {"rate": [1.0], "target": [5.0]},
                   "2": {"rate": [1.0], "target": [5.0]}},
    }
    model = load_model(doc)
    report = validate_model(model, grid_density=10, rng_seed=1)
    check = next(c for c in report.checks if c.name == "exit_time_bounded")
    assert not check.passed


def test_triangle_violation_detected():
    doc = rm1_doc()
    # Quadratic distance penalty: going far directly costs more than hopping
    # through the closer control point, so the triangle rule breaks near 0.
    doc["costs"]["intervention"] = {
        "kind": "expr", "expr": "0.1 + 0.01*(zeta[0]-y[0])**2"
    }
    doc["costs"]["intervention_bounds"] = [0.1, 2.0]
    model = load_model(doc)
    report = validate_model(model, grid_density=10, rng_seed=1)
    check = next(c for c in report.checks if c.name == "intervention_cost_triangle")
    assert not check.passed
    assert check.witness is not None


def test_expression_intervention_cost():
    doc = rm1_doc()
    doc["costs"]["intervention"] = {
        "kind": "expr", "expr": "1.0 + 0.01*abs(zeta[0] - y[0])"
    }
    doc["costs"]["intervention_bounds"] = [1.0, 1.2]
    model = load_model(doc)
    assert model.costs.intervention(1, (2.0,), 0) == pytest.approx(1.06)
    report = validate_model(model, grid_density=20, rng_seed=3)
    assert report.passed


def test_kernel_coverage_error():
    doc = rm1_doc()
    doc["kernel"][0]["region"] = [[0.0, 4.0]]  # mode-1 coverage hole above 4
    model = load_model(doc)
    with pytest.raises(KernelCoverageError):
        model.kernel.atoms_at(1, (6.0,))
    assert model.kernel.atoms_at(1, (3.0,))


def test_region_membership_helpers(rm1):
    region = rm1.region(1)
    assert region.contains_interior((5.0,))
    assert not region.contains_interior((0.0,))
    assert region.contains_closure((0.0,))
    assert not region.contains_closure((10.5,))


def test_mode_labels_preserved(rm1):
    # Mode identifiers are the declared labels (1-based here).
    assert set(rm1.modes) == {1, 2}
    with pytest.raises(ModelParseError):
        rm1.require_mode(3)


def test_static_atoms_helper(rm1):
    atoms = rm1.kernel.static_atoms_for(1)
    assert atoms == [(2, (5.0,), 1.0)]
    doc = rm1_doc()
    doc["kernel"][0]["atoms"][0]["zeta"] = ["zeta[0]*0.5 + 1.0"]
    model = load_model(doc)
    assert model.kernel.static_atoms_for(1) is None
    point, prob = model.kernel.atoms_at(1, (4.0,))[0]
    assert point.zeta == (3.0,)
    assert prob == 1.0


def test_content_hash_tracks_document():
    a = load_model(rm1_doc())
    doc = rm1_doc()
    doc["discount"] = 0.6
    b = load_model(doc)
    assert a.content_hash != b.content_hash
    assert a.content_hash == load_model(rm1_doc()).content_hash


def test_as_state_normalizes():
    x = as_state(1, 2)
    assert x.zeta == (2.0,)
    assert x.dim == 1
