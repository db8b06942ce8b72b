"""Checkpoint bundles: a JSON manifest plus raw f32 tensor blobs.

Layout of a bundle directory:

    manifest.json   format_version, kind, config echo, tensor table
    weights.bin     all tensors, little-endian row-major f32, concatenated

The tensor table maps each name to {dtype, shape, file, byte_offset,
byte_length, checksum(sha256)}.  Tensors are written in sorted-name order at
aligned offsets, so save -> load -> save reproduces byte-identical files.
"""

import hashlib
import json
from pathlib import Path

import numpy as np
import torch

from .errors import (CheckpointCorruptionError, CheckpointFormatError,
                     CheckpointVersionError)

FORMAT_VERSION = 1
BLOB_NAME = "weights.bin"


def _to_blob(tensor):
    arr = tensor.detach().to(torch.float32).contiguous().numpy()
    return arr.astype("<f4", copy=False).tobytes()


def save_checkpoint(state, path, *, kind, config=None, extra=None):
    """Write a bundle from a {name: tensor} state dict.

    `config` is echoed into the manifest for humans and for load-time
    validation; `extra` holds small JSON-able metadata (e.g. step counts).
    Returns the manifest dict."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    table = {}
    offset = 0
    chunks = []
    for name in sorted(state):
        blob = _to_blob(state[name])
        table[name] = {
            "dtype": "f32",
            "shape": list(state[name].shape),
            "file": BLOB_NAME,
            "byte_offset": offset,
            "byte_length": len(blob),
            "checksum": hashlib.sha256(blob).hexdigest(),
        }
        chunks.append(blob)
        offset += len(blob)
    manifest = {"format_version": FORMAT_VERSION, "kind": kind,
                "config": config or {}, "extra": extra or {},
                "tensors": table}
    (path / BLOB_NAME).write_bytes(b"".join(chunks))
    (path / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def read_manifest(path):
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.exists():
        raise CheckpointFormatError(f"no manifest.json under {path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointFormatError(f"manifest is not valid JSON: {exc}") from exc
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint format version {version!r} not supported "
            f"(expected {FORMAT_VERSION})")
    return manifest


def load_checkpoint(path, *, kind=None):
    """Read a bundle back into ({name: tensor}, manifest).

    Validates every tensor's checksum and byte length before returning;
    corruption errors name the offending tensor."""
    path = Path(path)
    manifest = read_manifest(path)
    if kind is not None and manifest.get("kind") != kind:
        raise CheckpointFormatError(
            f"checkpoint kind {manifest.get('kind')!r}, expected {kind!r}")
    blobs = {}
    state = {}
    for name, meta in manifest.get("tensors", {}).items():
        if meta.get("dtype") != "f32":
            raise CheckpointFormatError(
                f"tensor {name} has unsupported dtype {meta.get('dtype')!r}")
        fname = meta["file"]
        if fname not in blobs:
            blob_path = path / fname
            if not blob_path.exists():
                raise CheckpointFormatError(
                    f"blob file {fname} missing (first needed by tensor {name})")
            blobs[fname] = blob_path.read_bytes()
        data = blobs[fname]
        start, length = meta["byte_offset"], meta["byte_length"]
        if start + length > len(data):
            raise CheckpointCorruptionError(
                name, f"tensor {name} extends past end of {fname}")
        chunk = data[start:start + length]
        if hashlib.sha256(chunk).hexdigest() != meta["checksum"]:
            raise CheckpointCorruptionError(
                name, f"checksum mismatch for tensor {name}")
        shape = tuple(meta["shape"])
        count = int(np.prod(shape)) if shape else 1
        if count * 4 != length:
            raise CheckpointCorruptionError(
                name, f"tensor {name}: byte length {length} inconsistent "
                f"with shape {shape}")
        arr = np.frombuffer(chunk, dtype="<f4").reshape(shape)
        state[name] = torch.from_numpy(arr.copy())
    return state, manifest
