"""Versioned binary checkpoint container.

Layout: 8 magic bytes, a little-endian uint32 format version, a uint64
header length, a canonical-JSON header, then the raw array payload. Arrays
are stored as little-endian 64-bit floats (parameters) or 64-bit ints
(permutations) with explicit names and shapes in the header, so a save ->
load -> save cycle is byte-identical. The header also carries the flow
config, the training displacement scale `alpha`, a config hash and the tool
version.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict

import numpy as np
import torch

from trajflow import __version__
from trajflow.errors import CheckpointError
from trajflow.flows import FlowConfig, FlowModel

MAGIC = b"TRJFLOW1"
FORMAT_VERSION = 1


def config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:12]


def _named_arrays(model: FlowModel) -> list[tuple[str, np.ndarray]]:
    arrays = [
        (name, p.detach().numpy()) for name, p in model.named_parameters()
    ]
    arrays += [(name, b.numpy()) for name, b in model.named_buffers()]
    arrays.sort(key=lambda item: item[0])
    return arrays


def save_checkpoint(model: FlowModel, path, extra_meta: dict | None = None) -> None:
    arrays = _named_arrays(model)
    manifest = []
    payload = bytearray()
    for name, arr in arrays:
        dtype = "<i8" if arr.dtype.kind == "i" else "<f8"
        raw = np.ascontiguousarray(arr).astype(dtype).tobytes()
        manifest.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "dtype": dtype,
                "offset": len(payload),
                "nbytes": len(raw),
            }
        )
        payload += raw
    cfg = asdict(model.config)
    header = {
        "format_version": FORMAT_VERSION,
        "tool_version": __version__,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "alpha": model.alpha,
        "meta": extra_meta or {},
        "arrays": manifest,
    }
    header_json = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(header_json)))
        fh.write(header_json)
        fh.write(payload)


def _read(path) -> tuple[dict, bytes]:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise CheckpointError(f"{path}: bad magic bytes {magic!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        try:
            header = json.loads(fh.read(header_len).decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
        return header, fh.read()


def read_header(path) -> dict:
    return _read(path)[0]


def load_checkpoint(path) -> FlowModel:
    header, payload = _read(path)
    try:
        config = FlowConfig(**header["config"])
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: invalid config in header: {exc}") from exc
    model = FlowModel(config, seed=0)
    model.alpha = float(header.get("alpha", 1.0))

    targets = dict(model.named_parameters())
    targets.update(dict(model.named_buffers()))
    seen = set()
    for entry in header["arrays"]:
        name = entry["name"]
        if name not in targets:
            raise CheckpointError(f"{path}: unexpected array {name!r} for this config")
        shape = tuple(entry["shape"])
        target = targets[name]
        if shape != tuple(target.shape):
            raise CheckpointError(
                f"{path}: array {name!r} has shape {shape}, config implies {tuple(target.shape)}"
            )
        raw = payload[entry["offset"] : entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=entry["dtype"]).reshape(shape)
        with torch.no_grad():
            target.copy_(torch.as_tensor(arr.copy()))
        seen.add(name)
    missing = set(targets) - seen
    if missing:
        raise CheckpointError(f"{path}: missing arrays {sorted(missing)}")
    return model
