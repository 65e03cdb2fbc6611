"""Bit-exact model snapshots.

Format (version 1), documented here and in the README:

    bytes 0-3   magic b"RLMS"
    bytes 4-7   format version, uint32 little-endian
    bytes 8-15  header length H, uint64 little-endian
    H bytes     UTF-8 JSON header, keys sorted:
                  arch    - architecture description dict
                  build   - {slope, dropout, bn_momentum} used at build time
                  entries - ordered [{name, dtype, shape}] for the payload
                  meta    - free-form dict (may be empty)
    rest        raw little-endian C-order array payloads, concatenated in
                entry order

Arrays round-trip bit-exactly (raw IEEE-754 bytes, no text conversion) and
a snapshot written twice from the same state is byte-identical.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .blocks import build_model
from .errors import DataError

MAGIC = b"RLMS"
VERSION = 1
_DTYPES = {"<f8": np.dtype("<f8"), "<i8": np.dtype("<i8")}


def save_state(path: str | Path, arch: dict, state: dict[str, np.ndarray],
               build: dict | None = None, meta: dict | None = None) -> None:
    """Write a named-array state dict plus its architecture description."""
    entries = []
    payload = bytearray()
    for name in state:
        arr = np.ascontiguousarray(state[name])
        if arr.dtype.kind == "f":
            arr = arr.astype("<f8", copy=False)
        elif arr.dtype.kind in "iu":
            arr = arr.astype("<i8", copy=False)
        else:
            raise DataError(f"unsupported dtype for snapshot entry {name}: {arr.dtype}")
        entries.append({"name": name, "dtype": arr.dtype.str,
                        "shape": list(arr.shape)})
        payload += arr.tobytes(order="C")
    header = json.dumps(
        {"arch": arch, "build": build or {}, "entries": entries, "meta": meta or {}},
        sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.uint32(VERSION).tobytes())
        fh.write(np.uint64(len(header)).tobytes())
        fh.write(header)
        fh.write(bytes(payload))


def load_state(path: str | Path) -> tuple[dict, dict[str, np.ndarray], dict, dict]:
    """Read a snapshot; returns (arch, state, build, meta)."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise DataError(f"{path}: not a model snapshot (bad magic)")
    version = int(np.frombuffer(raw[4:8], dtype="<u4")[0])
    if version != VERSION:
        raise DataError(f"{path}: unsupported snapshot version {version}")
    hlen = int(np.frombuffer(raw[8:16], dtype="<u8")[0])
    header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    offset = 16 + hlen
    state: dict[str, np.ndarray] = {}
    for entry in header["entries"]:
        dtype = _DTYPES.get(entry["dtype"])
        if dtype is None:
            raise DataError(f"{path}: unknown dtype {entry['dtype']}")
        shape = tuple(entry["shape"])
        nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64)) if shape else dtype.itemsize
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        arr = np.frombuffer(raw[offset:offset + nbytes], dtype=dtype, count=count)
        state[entry["name"]] = arr.reshape(shape).copy()
        offset += nbytes
    return header["arch"], state, header.get("build", {}), header.get("meta", {})


def save_model(path: str | Path, model, slope: float = 0.01,
               dropout: float = 0.0, bn_momentum: float = 0.99,
               optimizer=None, meta: dict | None = None) -> None:
    state = model.named_state()
    if optimizer is not None:
        state.update(optimizer.state())
    build = {"slope": slope, "dropout": dropout, "bn_momentum": bn_momentum}
    save_state(path, model.arch, state, build=build, meta=meta)


def load_model(path: str | Path):
    """Rebuild a model from a snapshot; returns (model, state, meta)."""
    arch, state, build, meta = load_state(path)
    model = build_model(arch, rng=None, slope=build.get("slope", 0.01),
                        dropout=build.get("dropout", 0.0),
                        bn_momentum=build.get("bn_momentum", 0.99))
    model.load_state(state)
    return model, state, meta
