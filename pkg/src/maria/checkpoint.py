"""Self-describing binary checkpoints.

Layout (all integers little-endian):

    magic   6 bytes  b"MARIA1"
    version u32
    digest  32 bytes sha256 of the header JSON bytes
    hlen    u32      header JSON length
    header  hlen bytes: {"spec": ..., "meta": ...} canonical JSON
    count   u32      parameter records
    record: nlen u16, name utf-8, ndim u8, dims u32 each, float64 data

The header embeds the full structural spec, so a checkpoint can be loaded
without the original config file; the digest catches corrupted or edited
headers before any tensor is trusted.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .autodiff import Graph
from .config import canonical_json
from .model import model_from_spec

MAGIC = b"MARIA1"
VERSION = 1


class CheckpointError(ValueError):
    """Unreadable, corrupted, or incompatible checkpoint file."""


def save_checkpoint(path: str | Path, spec: dict, params: list[tuple[str, np.ndarray]], meta: dict | None = None) -> None:
    header = canonical_json({"spec": spec, "meta": meta or {}}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(hashlib.sha256(header).digest())
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(struct.pack("<I", len(params)))
        for name, arr in params:
            encoded = name.encode("utf-8")
            arr = np.ascontiguousarray(arr, dtype="<f8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return data


def load_checkpoint(path: str | Path) -> tuple[dict, dict, list[tuple[str, np.ndarray]]]:
    import json

    with open(path, "rb") as fh:
        if _read_exact(fh, len(MAGIC), "magic") != MAGIC:
            raise CheckpointError(f"{path}: not a model checkpoint (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        stored_digest = _read_exact(fh, 32, "digest")
        (hlen,) = struct.unpack("<I", _read_exact(fh, 4, "header length"))
        header = _read_exact(fh, hlen, "header")
        if hashlib.sha256(header).digest() != stored_digest:
            raise CheckpointError(f"{path}: header digest mismatch (corrupted file?)")
        doc = json.loads(header.decode("utf-8"))
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "parameter count"))
        params: list[tuple[str, np.ndarray]] = []
        for _ in range(count):
            (nlen,) = struct.unpack("<H", _read_exact(fh, 2, "name length"))
            name = _read_exact(fh, nlen, "name").decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1, "rank"))
            shape = tuple(
                struct.unpack("<I", _read_exact(fh, 4, f"{name} dim"))[0] for _ in range(ndim)
            )
            size = int(np.prod(shape, dtype=np.int64)) if shape else 1
            raw = _read_exact(fh, size * 8, f"{name} data")
            params.append((name, np.frombuffer(raw, dtype="<f8").reshape(shape).copy()))
        if fh.read(1):
            raise CheckpointError(f"{path}: trailing bytes after the last parameter")
    return doc["spec"], doc["meta"], params


def save_model(path: str | Path, model, meta: dict | None = None) -> None:
    save_checkpoint(path, model.spec(), [(n, v.data) for n, v in model.named_parameters()], meta)


def load_model(path: str | Path, seed: int = 0):
    """Rebuild the saved model; returns (model, graph, meta)."""
    spec, meta, params = load_checkpoint(path)
    graph = Graph(seed=seed)
    model = model_from_spec(graph, spec, seed=seed)
    named = dict(model.named_parameters())
    saved_names = [name for name, _ in params]
    if set(named) != set(saved_names):
        missing = sorted(set(named) - set(saved_names))
        extra = sorted(set(saved_names) - set(named))
        raise CheckpointError(f"parameter names disagree with the saved architecture: missing {missing}, extra {extra}")
    for name, arr in params:
        target = named[name]
        if target.data.shape != arr.shape:
            raise CheckpointError(f"parameter {name!r}: saved shape {arr.shape}, model expects {target.data.shape}")
        target.data[...] = arr
    return model, graph, meta
