"""Binary checkpoint format: magic, JSON manifest, raw little-endian payload.

Layout: b"LLAMO1" | uint64-LE manifest byte length | manifest JSON (UTF-8) |
tensor payload. The manifest lists name, shape, dtype, byte offset, byte
length, and trainable flag per tensor plus an arbitrary config snapshot.
Saving is deterministic, so save -> load -> save is byte-identical.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .numerics import ParameterStore

MAGIC = b"LLAMO1"

_DTYPES = {"float32": "<f4", "float64": "<f8"}


class BadMagic(ValueError):
    pass


class ManifestMismatch(ValueError):
    pass


class TruncatedPayload(ValueError):
    pass


def save_checkpoint(store: ParameterStore, path: str, config: dict) -> None:
    entries = []
    payload = bytearray()
    for name, tensor, trainable in store.items():
        dtype_name = "float64" if tensor.data.dtype == np.float64 else "float32"
        raw = np.ascontiguousarray(tensor.data).astype(_DTYPES[dtype_name]).tobytes()
        entries.append({
            "name": name,
            "shape": list(tensor.data.shape),
            "dtype": dtype_name,
            "offset": len(payload),
            "nbytes": len(raw),
            "trainable": trainable,
        })
        payload.extend(raw)
    manifest = json.dumps({"tensors": entries, "config": config},
                          sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        fh.write(payload)


def load_checkpoint(path: str) -> tuple[ParameterStore, dict]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:len(MAGIC)] != MAGIC:
        raise BadMagic(f"{path}: not a checkpoint (bad magic)")
    header_end = len(MAGIC) + 8
    if len(blob) < header_end:
        raise TruncatedPayload(f"{path}: missing manifest length")
    (manifest_len,) = struct.unpack("<Q", blob[len(MAGIC):header_end])
    manifest_end = header_end + manifest_len
    if len(blob) < manifest_end:
        raise TruncatedPayload(f"{path}: manifest truncated")
    try:
        manifest = json.loads(blob[header_end:manifest_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ManifestMismatch(f"{path}: manifest is not valid JSON") from exc
    payload = blob[manifest_end:]
    store = ParameterStore()
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        dtype_name = entry["dtype"]
        if dtype_name not in _DTYPES:
            raise ManifestMismatch(f"{path}: unknown dtype {dtype_name!r}")
        itemsize = 8 if dtype_name == "float64" else 4
        expected = int(np.prod(shape, dtype=np.int64)) * itemsize if shape else itemsize
        if entry["nbytes"] != expected:
            raise ManifestMismatch(
                f"{path}: {entry['name']} claims {entry['nbytes']} bytes for "
                f"shape {shape} ({expected} expected)")
        lo, hi = entry["offset"], entry["offset"] + entry["nbytes"]
        if hi > len(payload):
            raise TruncatedPayload(
                f"{path}: payload ends before {entry['name']} does")
        arr = np.frombuffer(payload[lo:hi], dtype=_DTYPES[dtype_name]).reshape(shape)
        numpy_dtype = np.float64 if dtype_name == "float64" else np.float32
        store.add(entry["name"], arr.astype(numpy_dtype),
                  trainable=entry["trainable"], dtype=numpy_dtype)
    return store, manifest["config"]
