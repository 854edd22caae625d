"""Checkpoint container: named float64 arrays plus metadata in one JSON file.

Layout::

    {
      "format": "cfdebias-checkpoint/1",
      "meta": {...},                      # seed, config hash, dims, ...
      "arrays": {
        "<name>": {"dtype": "<f8", "shape": [...], "data": "<base64 of little-endian bytes>"}
      }
    }

Arrays round-trip bit-exactly and the file bytes depend only on the contents
(keys are sorted, no timestamps), so identical runs produce identical files.
"""
from __future__ import annotations

import base64
import json
from pathlib import Path
from typing import Dict, Mapping, Tuple

import numpy as np

from .errors import InvalidArgumentError

FORMAT = "cfdebias-checkpoint/1"


def encode_array(arr: np.ndarray) -> dict:
    arr = np.asarray(arr, dtype="<f8")   # tobytes() is C-order; ascontiguousarray would promote 0-d to 1-d
    return {"dtype": "<f8", "shape": list(arr.shape),
            "data": base64.b64encode(arr.tobytes()).decode("ascii")}


def decode_array(obj: Mapping) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    return np.frombuffer(raw, dtype=obj.get("dtype", "<f8")).reshape(obj["shape"]).astype(np.float64)


def save_checkpoint(path, arrays: Mapping[str, np.ndarray], meta: Mapping) -> None:
    doc = {"format": FORMAT, "meta": dict(meta),
           "arrays": {k: encode_array(v) for k, v in arrays.items()}}
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def load_checkpoint(path) -> Tuple[Dict[str, np.ndarray], dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != FORMAT:
        raise InvalidArgumentError(f"{path}: not a {FORMAT} file")
    arrays = {k: decode_array(v) for k, v in doc["arrays"].items()}
    return arrays, doc["meta"]
