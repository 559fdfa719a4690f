"""JSON parameter checkpoints: a flat list of ``{name, shape, values}`` records.

Python's float repr is the shortest string that round-trips, so values
survive a save/load cycle bit for bit.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np


def to_records(state: dict[str, np.ndarray]) -> list[dict]:
    return [{"name": k, "shape": list(np.shape(v)), "values": [float(x) for x in np.ravel(v)]}
            for k, v in sorted(state.items())]


def from_records(records: list[dict]) -> dict[str, np.ndarray]:
    out = {}
    for rec in records:
        arr = np.array(rec["values"], dtype=np.float64)
        out[rec["name"]] = arr.reshape(rec["shape"])
    return out


def save(path, state: dict[str, np.ndarray], extra: dict | None = None) -> None:
    doc = {"params": to_records(state)}
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, separators=(",", ":")))


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    doc = json.loads(Path(path).read_text())
    state = from_records(doc.pop("params"))
    return state, doc
