"""Versioned on-disk artifact holding h, the value functions and the policy.

JSON with sorted keys and repr-round-tripping floats, so artifacts are
byte-identical across runs with the same inputs and reload to the exact
stored values.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ArtifactMismatchError
from .model import PdmpModel, StatePoint
from .valuefn import FunctionStore, PolicyStage, PolicyTable

FORMAT_TAG = "pdmpval/1"


def _store_payload(store: FunctionStore) -> dict:
    return {
        str(m): {
            "axes": [list(a) for a in store.axes[m]],
            "values": store.values[m].ravel().tolist(),
            "shape": list(store.values[m].shape),
        }
        for m in store.axes
    }


def _store_from_payload(payload: dict, coverage) -> FunctionStore:
    axes = {}
    values = {}
    for key, entry in payload.items():
        m = int(key)
        axes[m] = tuple(np.asarray(a, dtype=float) for a in entry["axes"])
        values[m] = np.asarray(entry["values"], dtype=float).reshape(entry["shape"])
    return FunctionStore(axes, values, coverage)


def save_policy(path, table: PolicyTable) -> None:
    payload = {
        "format": FORMAT_TAG,
        "model_hash": table.model_hash,
        "eps": table.eps,
        "n_max": table.n_max,
        "grid": table.grid_spec,
        "coverage": {
            str(m): [list(lo), list(hi)] for m, (lo, hi) in table.coverage.items()
        },
        "control_set": [[y.mode, list(y.zeta)] for y in table.control_set],
        "h": _store_payload(table.h),
        "stages": [
            {
                str(m): {
                    "wait": stage.wait[m].ravel().astype(int).tolist(),
                    "r": stage.r[m].ravel().tolist(),
                    "y_index": stage.y_index[m].ravel().tolist(),
                    "value": stage.value[m].ravel().tolist(),
                    "shape": list(stage.value[m].shape),
                }
                for m in stage.value
            }
            for stage in table.stages
        ],
    }
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    Path(path).write_text(text)


def load_policy(path, model: PdmpModel | None = None) -> PolicyTable:
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != FORMAT_TAG:
        raise ArtifactMismatchError(
            f"unsupported artifact format {payload.get('format')!r}"
        )
    if model is not None and payload["model_hash"] != model.content_hash:
        raise ArtifactMismatchError(
            "artifact was computed for a different model "
            f"(stored {payload['model_hash'][:12]}..., "
            f"current {model.content_hash[:12]}...)"
        )
    coverage = {
        int(m): (tuple(lo), tuple(hi))
        for m, (lo, hi) in payload["coverage"].items()
    }
    h = _store_from_payload(payload["h"], coverage)
    control_set = tuple(StatePoint(m, tuple(z)) for m, z in payload["control_set"])
    table = PolicyTable(
        model_hash=payload["model_hash"],
        eps=payload["eps"],
        n_max=payload["n_max"],
        axes=h.axes,
        coverage=coverage,
        control_set=control_set,
        h=h,
        grid_spec=payload.get("grid"),
    )
    for stage_payload in payload["stages"]:
        wait = {}
        r = {}
        y_index = {}
        value = {}
        for key, entry in stage_payload.items():
            m = int(key)
            shape = tuple(entry["shape"])
            wait[m] = np.asarray(entry["wait"], dtype=bool).reshape(shape)
            r[m] = np.asarray(entry["r"], dtype=float).reshape(shape)
            y_index[m] = np.asarray(entry["y_index"], dtype=np.int64).reshape(shape)
            value[m] = np.asarray(entry["value"], dtype=float).reshape(shape)
        table.stages.append(PolicyStage(wait=wait, r=r, y_index=y_index, value=value))
    return table
