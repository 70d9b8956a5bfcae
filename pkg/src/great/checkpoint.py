"""Binary container for checkpoints and datasets.

Layout: magic bytes ``GRT1``, a 4-byte little-endian metadata length, JSON
metadata (config plus a tensor manifest of name/shape/offset), then the
concatenated little-endian float64 payloads. Datasets reuse the container
with tensors ``images`` and ``masks``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .data import SyntheticDataset
from .encoder import ModelWeights, named_parameters

MAGIC = b"GRT1"


class ContainerError(ValueError):
    pass


def save_container(path, named_arrays: list[tuple[str, np.ndarray]], config: dict) -> None:
    manifest = []
    offset = 0
    payloads = []
    for name, arr in named_arrays:
        arr = np.ascontiguousarray(arr, dtype="<f8")
        manifest.append({"name": name, "shape": list(arr.shape), "dtype": "<f8", "offset": offset})
        payloads.append(arr.tobytes())
        offset += arr.nbytes
    meta = json.dumps({"config": config, "tensors": manifest}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(meta)))
        fh.write(meta)
        for blob in payloads:
            fh.write(blob)


def load_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ContainerError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    (meta_len,) = struct.unpack("<I", raw[4:8])
    meta = json.loads(raw[8 : 8 + meta_len].decode("utf-8"))
    base = 8 + meta_len
    tensors = {}
    for entry in meta["tensors"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        start = base + entry["offset"]
        arr = np.frombuffer(raw, dtype="<f8", count=n, offset=start).reshape(shape)
        tensors[entry["name"]] = arr.astype(np.float64)
    return meta["config"], tensors


def save_checkpoint(path, mw: ModelWeights, extra_config: dict | None = None) -> None:
    config = dict(mw.config.to_dict())
    if extra_config:
        config.update(extra_config)
    save_container(path, [(n, t.data) for n, t in named_parameters(mw)], config)


def load_into_model(path, mw: ModelWeights) -> ModelWeights:
    """Overwrite a model's weights with a checkpoint's tensors, shape-checked."""
    _, tensors = load_container(path)
    for name, t in named_parameters(mw):
        if name not in tensors:
            raise ContainerError(f"checkpoint missing tensor {name!r}")
        arr = tensors[name]
        if arr.shape != t.data.shape:
            raise ContainerError(
                f"checkpoint tensor {name!r} has shape {arr.shape}, model expects {t.data.shape}"
            )
        t.data = arr
    return mw


def save_dataset(path, ds: SyntheticDataset) -> None:
    config = {
        "kind": "dataset",
        "count": len(ds),
        "size": int(ds.images.shape[1]),
        "classes": ds.classes,
        "seed": ds.seed,
    }
    save_container(
        path, [("images", ds.images), ("masks", ds.masks.astype(np.float64))], config
    )


def load_dataset(path) -> SyntheticDataset:
    config, tensors = load_container(path)
    if config.get("kind") != "dataset":
        raise ContainerError(f"{path} is not a dataset container")
    return SyntheticDataset(
        images=tensors["images"],
        masks=tensors["masks"].astype(np.int64),
        classes=int(config["classes"]),
        seed=int(config["seed"]),
    )
