"""Checkpoint container.

A checkpoint is a numpy ``.npz`` archive (no pickling) holding:

* ``__header__`` -- a JSON document (model variant, hyperparameters, ...);
* ``param/<name>`` -- one float64 array per learned parameter;
* ``extra/<name>`` -- frozen arrays that travel with the model (embedding
  table, vocabulary tokens).

float64 arrays are stored verbatim, so values round-trip bit for bit.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


def save_checkpoint(path, header: dict, params: dict[str, np.ndarray], extras: dict | None = None) -> None:
    arrays = {"__header__": np.array(json.dumps(header, sort_keys=True))}
    for name, value in params.items():
        arrays[f"param/{name}"] = np.asarray(value, dtype=np.float64)
    for name, value in (extras or {}).items():
        arrays[f"extra/{name}"] = np.asarray(value)
    with open(Path(path), "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray], dict[str, np.ndarray]]:
    with np.load(Path(path), allow_pickle=False) as z:
        header = json.loads(str(z["__header__"]))
        params = {k[len("param/"):]: z[k] for k in z.files if k.startswith("param/")}
        extras = {k[len("extra/"):]: z[k] for k in z.files if k.startswith("extra/")}
    return header, params, extras
