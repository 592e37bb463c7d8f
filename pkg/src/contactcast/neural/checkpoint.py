"""Model checkpoints: ``manifest.json`` plus one CFT1 tensor per parameter."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..numerics import DTYPE_F32, read_tensor, write_tensor


def save_layers(directory, layers, extra: dict | None = None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    specs = []
    for k, layer in enumerate(layers):
        names = sorted(layer.params)
        for name in names:
            write_tensor(d / f"layer{k}.{name}.cft", layer.params[name], DTYPE_F32)
        specs.append(dict(layer.spec(), params=names))
    doc = {"layers": specs, **(extra or {})}
    (d / "manifest.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_into(directory, layers) -> dict:
    """Fill ``layers`` (built with the same specs) from a checkpoint."""
    d = Path(directory)
    doc = json.loads((d / "manifest.json").read_text())
    if len(doc["layers"]) != len(layers):
        raise ValueError(f"checkpoint has {len(doc['layers'])} layers, model has {len(layers)}")
    for k, (spec, layer) in enumerate(zip(doc["layers"], layers)):
        if spec["kind"] != layer.kind:
            raise ValueError(f"layer {k}: checkpoint kind {spec['kind']} vs model {layer.kind}")
        for name in spec["params"]:
            arr = read_tensor(d / f"layer{k}.{name}.cft").astype(np.float64)
            if arr.shape != layer.params[name].shape:
                raise ValueError(f"layer {k}.{name}: shape {arr.shape} vs {layer.params[name].shape}")
            layer.params[name][...] = arr
    return doc
