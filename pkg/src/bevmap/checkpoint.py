"""Checkpoint serialization.

A checkpoint is a directory holding one ``.bin`` file per named array
plus a ``manifest.json``. The binary layout is fixed so files are
byte-reproducible across platforms:

    uint32 LE  ndim
    uint32 LE  dim[0] ... dim[ndim-1]
    float32 LE data, C order

Only float32 arrays are accepted; the manifest records each entry's
name, shape, file, and sha256 of the file bytes, along with caller
metadata (step counters, seeds, config echo). Manifests contain no
timestamps, so identical training runs produce identical checkpoint
bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError

__all__ = [
    "write_array_file",
    "read_array_file",
    "save_checkpoint",
    "load_checkpoint",
]

FORMAT_VERSION = 1


def _encode_array(arr: np.ndarray) -> bytes:
    if arr.dtype != np.float32:
        raise CheckpointError(
            f"checkpoint arrays must be float32, got {arr.dtype}")
    header = struct.pack("<I", arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    body = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return header + body


def _decode_array(raw: bytes, origin: str) -> np.ndarray:
    if len(raw) < 4:
        raise CheckpointError(f"{origin}: truncated header")
    (ndim,) = struct.unpack_from("<I", raw, 0)
    need = 4 + 4 * ndim
    if ndim > 32 or len(raw) < need:
        raise CheckpointError(f"{origin}: malformed shape header")
    shape = struct.unpack_from(f"<{ndim}I", raw, 4)
    count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
    if len(raw) != need + 4 * count:
        raise CheckpointError(
            f"{origin}: expected {need + 4 * count} bytes, got {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=need)
    return data.reshape(shape).astype(np.float32, copy=True)


def write_array_file(path, arr: np.ndarray):
    Path(path).write_bytes(_encode_array(np.asarray(arr)))


def read_array_file(path) -> np.ndarray:
    p = Path(path)
    if not p.is_file():
        raise CheckpointError(f"missing array file {p}")
    return _decode_array(p.read_bytes(), str(p))


def save_checkpoint(ckpt_dir, arrays: dict[str, np.ndarray], meta: dict):
    """Write all arrays plus a manifest into ``ckpt_dir``.

    Array names become file names directly and therefore must not
    contain path separators.
    """
    out = Path(ckpt_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for name in sorted(arrays):
        if "/" in name or "\\" in name:
            raise CheckpointError(f"array name {name!r} contains a path separator")
        raw = _encode_array(np.asarray(arrays[name]))
        fname = name + ".bin"
        (out / fname).write_bytes(raw)
        entries.append({
            "name": name,
            "shape": list(np.asarray(arrays[name]).shape),
            "file": fname,
            "sha256": hashlib.sha256(raw).hexdigest(),
        })
    manifest = {
        "format_version": FORMAT_VERSION,
        "entries": entries,
        "meta": meta,
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def load_checkpoint(ckpt_dir) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint directory back into (arrays, meta).

    Every entry's file hash and shape are verified; any mismatch raises
    CheckpointError.
    """
    root = Path(ckpt_dir)
    mpath = root / "manifest.json"
    if not mpath.is_file():
        raise CheckpointError(f"no manifest.json under {root}")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as e:
        raise CheckpointError(f"unreadable manifest {mpath}: {e}") from e
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format {manifest.get('format_version')!r}")
    arrays = {}
    for entry in manifest["entries"]:
        fpath = root / entry["file"]
        if not fpath.is_file():
            raise CheckpointError(f"missing checkpoint file {fpath}")
        raw = fpath.read_bytes()
        digest = hashlib.sha256(raw).hexdigest()
        if digest != entry["sha256"]:
            raise CheckpointError(
                f"checksum mismatch for {entry['name']} in {root}")
        arr = _decode_array(raw, str(fpath))
        if list(arr.shape) != list(entry["shape"]):
            raise CheckpointError(
                f"shape mismatch for {entry['name']}: manifest says "
                f"{entry['shape']}, file has {list(arr.shape)}")
        arrays[entry["name"]] = arr
    return arrays, manifest["meta"]
