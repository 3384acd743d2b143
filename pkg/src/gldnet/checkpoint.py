"""Versioned checkpoint container with a content checksum.

Layout: 8-byte magic, u32 format version, u64 header length, JSON header,
raw little-endian tensor payloads in header order, and a trailing sha256
over everything before it. Tensors are stored in their native precision
(f4 for 32-bit models, f8 for 64-bit) so a load reproduces forward
outputs bitwise at the same precision.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

MAGIC = b"GLDCKPT\x00"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Unreadable, corrupt, or incompatible checkpoint file."""


def _dtype_tag(dtype):
    return {np.dtype(np.float32): "f4", np.dtype(np.float64): "f8"}[np.dtype(dtype)]


def save_checkpoint(path, model, model_cfg, step=0, adam=None, train_cfg=None):
    """Serialize model parameters, buffers, optimizer moments, and configs."""
    arrays = {}
    for name, p in model.named_parameters():
        arrays[name] = p.data
    for name, buf in model.named_buffers():
        arrays[name] = buf
    if adam is not None:
        arrays.update(adam.state_arrays())
    index = []
    payloads = []
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        if arr.ndim:  # ascontiguousarray would promote 0-d scalars to 1-d
            arr = np.ascontiguousarray(arr)
        index.append({"name": name, "shape": list(arr.shape), "dtype": _dtype_tag(arr.dtype)})
        payloads.append(arr.astype("<" + _dtype_tag(arr.dtype), copy=False).tobytes())
    header = {
        "format_version": FORMAT_VERSION,
        "step": int(step),
        "model_config": model_cfg.to_dict(),
        "train_config": dict(train_cfg) if train_cfg else None,
        "adam_step": int(adam.step) if adam is not None else None,
        "tensors": index,
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    blob = MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(hbytes)) + hbytes + b"".join(payloads)
    digest = hashlib.sha256(blob).digest()
    with open(path, "wb") as fh:
        fh.write(blob + digest)


def load_checkpoint(path):
    """Read and verify a checkpoint; returns (header dict, {name: array})."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as e:
        raise CheckpointError(f"{path}: {e}") from e
    if len(blob) < len(MAGIC) + 12 + 32 or blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch, file is corrupt")
    pos = len(MAGIC)
    version, hlen = struct.unpack("<IQ", body[pos : pos + 12])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version} != supported {FORMAT_VERSION}")
    pos += 12
    header = json.loads(body[pos : pos + hlen].decode())
    pos += hlen
    arrays = {}
    for entry in header["tensors"]:
        dt = np.dtype("<" + entry["dtype"])
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = count * dt.itemsize
        arrays[entry["name"]] = np.frombuffer(body[pos : pos + nbytes], dtype=dt).reshape(
            entry["shape"]
        ).astype(entry["dtype"])
        pos += nbytes
    if pos != len(body):
        raise CheckpointError(f"{path}: payload length does not match header")
    return header, arrays


def restore_model(model, arrays):
    """Copy checkpoint arrays into an already-built model, by name."""
    seen = set()
    for name, p in model.named_parameters():
        if name not in arrays:
            raise CheckpointError(f"checkpoint missing parameter {name!r}")
        if tuple(arrays[name].shape) != p.shape:
            raise CheckpointError(
                f"parameter {name!r}: checkpoint shape {arrays[name].shape} != model {p.shape}"
            )
        p.data = arrays[name].astype(p.dtype, copy=True)
        seen.add(name)
    for name, buf in model.named_buffers():
        if name in arrays:
            buf[...] = arrays[name].astype(buf.dtype)
            seen.add(name)
    return seen


def restore_adam(adam, header, arrays):
    if header.get("adam_step") is not None:
        adam.step = int(header["adam_step"])
    for name, arr in arrays.items():
        if name.startswith("adam.m."):
            adam.m[name[len("adam.m.") :]] = arr.copy()
        elif name.startswith("adam.v."):
            adam.v[name[len("adam.v.") :]] = arr.copy()
