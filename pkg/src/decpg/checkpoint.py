"""Parameter checkpoints: named float64 tensors in a single .npz file.

Keys are '<component>/<index>'. A '__manifest__' entry lists the component
networks so loaders can validate structure. Round-trips are bit-exact.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import DataError

MANIFEST_KEY = "__manifest__"


def save_components(path, components: dict[str, list[np.ndarray]]) -> None:
    flat: dict[str, np.ndarray] = {}
    manifest = {}
    for name, params in components.items():
        manifest[name] = [list(p.shape) for p in params]
        for i, p in enumerate(params):
            flat[f"{name}/{i}"] = np.asarray(p, dtype=np.float64)
    flat[MANIFEST_KEY] = np.frombuffer(
        json.dumps(manifest, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **flat)


def load_components(path) -> dict[str, list[np.ndarray]]:
    with np.load(path) as data:
        if MANIFEST_KEY not in data:
            raise DataError("checkpoint has no manifest entry")
        manifest = json.loads(bytes(data[MANIFEST_KEY]).decode())
        out: dict[str, list[np.ndarray]] = {}
        for name, shapes in manifest.items():
            params = []
            for i, shape in enumerate(shapes):
                arr = data[f"{name}/{i}"]
                if list(arr.shape) != shape:
                    raise DataError(f"checkpoint tensor {name}/{i} has shape "
                                    f"{list(arr.shape)}, manifest says {shape}")
                params.append(arr)
            out[name] = params
    return out
