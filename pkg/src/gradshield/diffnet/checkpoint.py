"""Model checkpoint files with bit-exact round-trips.

Two equivalent serializations:

* binary: one self-describing JSON header line (layer_spec, d, seed) followed
  by d little-endian float64 parameter values;
* JSON: the same header with the parameters as a list of numbers.  Python's
  shortest-repr float rendering round-trips every finite double exactly.
"""

from __future__ import annotations

import json

import numpy as np

from ..ioutil import atomic_write_bytes, atomic_write_text
from .network import DiffNet

__all__ = [
    "save_checkpoint",
    "load_checkpoint",
    "save_checkpoint_json",
    "load_checkpoint_json",
    "CheckpointError",
]

_FORMAT = "diffnet-checkpoint"
_VERSION = 1


class CheckpointError(ValueError):
    """Malformed or mismatched checkpoint file."""


def _header(net: DiffNet) -> dict:
    return {
        "format": _FORMAT,
        "version": _VERSION,
        "layer_spec": [list(layer) for layer in net.layer_spec],
        "d": net.n_params,
        "seed": net.seed,
    }


def _parse_header(obj) -> dict:
    if not isinstance(obj, dict) or obj.get("format") != _FORMAT:
        raise CheckpointError("not a diffnet checkpoint")
    if obj.get("version") != _VERSION:
        raise CheckpointError(f"unsupported checkpoint version {obj.get('version')!r}")
    for key in ("layer_spec", "d"):
        if key not in obj:
            raise CheckpointError(f"checkpoint header missing {key!r}")
    return obj


def save_checkpoint(net: DiffNet, path) -> None:
    header = json.dumps(_header(net), sort_keys=True).encode("utf-8") + b"\n"
    body = np.ascontiguousarray(net.params.values, dtype="<f8").tobytes()
    atomic_write_bytes(path, header + body)


def load_checkpoint(path) -> DiffNet:
    with open(path, "rb") as f:
        header_line = f.readline()
        try:
            header = _parse_header(json.loads(header_line.decode("utf-8")))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"unreadable checkpoint header: {exc}") from exc
        body = f.read()
    d = int(header["d"])
    if len(body) != 8 * d:
        raise CheckpointError(f"expected {8 * d} parameter bytes, found {len(body)}")
    params = np.frombuffer(body, dtype="<f8").astype(np.float64)
    return DiffNet(header["layer_spec"], params, seed=header.get("seed"))


def save_checkpoint_json(net: DiffNet, path) -> None:
    payload = dict(_header(net), params=[float(v) for v in net.params.values])
    atomic_write_text(path, json.dumps(payload, sort_keys=True, indent=1) + "\n")


def load_checkpoint_json(path) -> DiffNet:
    with open(path, "r", encoding="utf-8") as f:
        payload = _parse_header(json.load(f))
    params = np.asarray(payload.get("params", []), dtype=np.float64)
    if params.size != int(payload["d"]):
        raise CheckpointError(
            f"expected {payload['d']} parameters, found {params.size}"
        )
    return DiffNet(payload["layer_spec"], params, seed=payload.get("seed"))
