"""On-disk formats: codebook arrays and training checkpoints.

Codebook file (``.vqcb``), little-endian throughout::

    int64 K, int64 d, int64 num_heads
    float64 words[num_heads][K][d]     # row-major

Reservoir snapshots use the same layout with ``K`` = stored rows and
``num_heads`` = 1.

Checkpoints are ``numpy.savez`` archives. Array entries are named
``param/<name>``, ``polyak/<name>``, ``bn/running_mean``, ``bn/running_var``,
``ema/<h>/counts``, ``ema/<h>/means`` and ``reservoir/items``; the entry
``meta`` holds a JSON document with the iteration counter, reservoir
``seen`` count, RNG state, metrics rows so far and the config text.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ShapeError
from .quantizer import Codebook

__all__ = ["save_codebooks", "load_codebooks", "save_array", "load_array",
           "save_checkpoint", "load_checkpoint"]

_HEADER = np.dtype("<i8")
_DATA = np.dtype("<f8")


def save_codebooks(path, codebooks) -> None:
    codebooks = list(codebooks)
    K, d = codebooks[0].words.shape
    if any(cb.words.shape != (K, d) for cb in codebooks):
        raise ShapeError("all heads must share K and d to be serialized together")
    with open(path, "wb") as fh:
        fh.write(np.array([K, d, len(codebooks)], dtype=_HEADER).tobytes())
        for cb in codebooks:
            fh.write(np.ascontiguousarray(cb.words, dtype=_DATA).tobytes())


def load_codebooks(path) -> list:
    raw = Path(path).read_bytes()
    K, d, heads = (int(v) for v in np.frombuffer(raw[:24], dtype=_HEADER))
    data = np.frombuffer(raw[24:], dtype=_DATA)
    if data.size != K * d * heads:
        raise ShapeError(f"file holds {data.size} values, header promises {K * d * heads}")
    data = data.reshape(heads, K, d).astype(np.float64)
    return [Codebook(data[h].copy()) for h in range(heads)]


def save_array(path, arr) -> None:
    """Write a single (rows, d) array, e.g. a reservoir snapshot."""
    save_codebooks(path, [Codebook(np.atleast_2d(arr))])


def load_array(path) -> np.ndarray:
    return load_codebooks(path)[0].words


def save_checkpoint(path, state, rows, config_text: str = "") -> None:
    arrays = {}
    for name, arr in state.model.params().items():
        arrays[f"param/{name}"] = arr
    if state.polyak is not None:
        for name, arr in state.polyak.items():
            arrays[f"polyak/{name}"] = arr
    if state.model.bn is not None:
        arrays["bn/running_mean"] = state.model.bn.running_mean
        arrays["bn/running_var"] = state.model.bn.running_var
    for h, ema in enumerate(state.ema or []):
        arrays[f"ema/{h}/counts"] = ema.counts
        arrays[f"ema/{h}/means"] = ema.means
    meta = {
        "iteration": state.iteration,
        "reestimations": state.reestimations,
        "rng": state.rng.bit_generator.state,
        "rows": [r.to_csv() for r in rows],
        "config": config_text,
    }
    if state.reservoir is not None:
        arrays["reservoir/items"] = state.reservoir.items
        meta["reservoir_seen"] = state.reservoir.seen
    arrays["meta"] = np.array(json.dumps(meta))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path, state):
    """Restore ``state`` (built from the same config) in place.

    Returns ``(rows_csv_lines, config_text)``.
    """
    with np.load(path) as z:
        meta = json.loads(str(z["meta"]))
        state.model.load_params({k[6:]: z[k] for k in z.files if k.startswith("param/")})
        if state.polyak is not None:
            for name in state.polyak:
                state.polyak[name][...] = z[f"polyak/{name}"]
        if state.model.bn is not None:
            state.model.bn.running_mean = z["bn/running_mean"].copy()
            state.model.bn.running_var = z["bn/running_var"].copy()
        for h, ema in enumerate(state.ema or []):
            ema.counts = z[f"ema/{h}/counts"].copy()
            ema.means = z[f"ema/{h}/means"].copy()
        if state.reservoir is not None:
            state.reservoir.items = z["reservoir/items"].copy()
            state.reservoir.seen = int(meta["reservoir_seen"])
    state.iteration = int(meta["iteration"])
    state.reestimations = int(meta["reestimations"])
    state.rng.bit_generator.state = meta["rng"]
    return meta["rows"], meta["config"]
