import json

import numpy as np
import pytest

from pdmp_impulse.artifact import load_policy, save_policy
from pdmp_impulse.errors import ArtifactMismatchError
from pdmp_impulse.model import load_model

from conftest import rm1_doc


def test_round_trip_preserves_every_value(tmp_path, rm1, rm1_table):
    path = tmp_path / "policy.pdmpval"
    save_policy(path, rm1_table)
    loaded = load_policy(path, rm1)
    assert loaded.eps == rm1_table.eps
    assert loaded.n_max == rm1_table.n_max
    assert loaded.control_set == rm1_table.control_set
    for m in rm1_table.axes:
        assert np.array_equal(loaded.axes[m][0], rm1_table.axes[m][0])
        assert np.array_equal(loaded.h.values[m], rm1_table.h.values[m])
    for got, want in zip(loaded.stages, rm1_table.stages):
        for m in want.value:
            assert np.array_equal(got.value[m], want.value[m])
            assert np.array_equal(got.r[m], want.r[m])
            assert np.array_equal(got.wait[m], want.wait[m])
            assert np.array_equal(got.y_index[m], want.y_index[m])


def test_save_is_deterministic(tmp_path, rm1_table):
    a = tmp_path / "a.pdmpval"
    b = tmp_path / "b.pdmpval"
    save_policy(a, rm1_table)
    save_policy(b, rm1_table)
    assert a.read_bytes() == b.read_bytes()


def test_model_hash_guard(tmp_path, rm1_table):
    path = tmp_path / "policy.pdmpval"
    save_policy(path, rm1_table)
    doc = rm1_doc()
    doc["discount"] = 0.6
    other = load_model(doc)
    with pytest.raises(ArtifactMismatchError, match="different model"):
        load_policy(path, other)
    # Loading without a model skips the guard.
    assert load_policy(path).n_max == rm1_table.n_max


def test_format_tag_guard(tmp_path, rm1_table):
    path = tmp_path / "policy.pdmpval"
    save_policy(path, rm1_table)
    payload = json.loads(path.read_text())
    payload["format"] = "pdmpval/999"
    path.write_text(json.dumps(payload))
    with pytest.raises(ArtifactMismatchError, match="format"):
        load_policy(path)
