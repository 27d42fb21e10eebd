"""Binary checkpoint container.

Layout (all integers little-endian)::

    8 bytes   magic  b"LSEGCKPT"
    u32       format version
    u64       header length in bytes
    header    UTF-8 JSON: tensor directory, Adam scalars, free-form metadata
    payload   raw little-endian IEEE-754 arrays, concatenated in directory order

The JSON is written with sorted keys and no whitespace, so save -> load -> save
reproduces the file byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import CheckpointError, FormatError
from .optim import AdamState

MAGIC = b"LSEGCKPT"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")
_DTYPES = {"float32": "<f4", "float64": "<f8"}


@dataclass
class Checkpoint:
    tensors: dict  # name -> ndarray (parameters and BN buffers)
    adam: Optional[AdamState] = None
    metadata: dict = field(default_factory=dict)


def tensor_digest(array):
    """SHA-256 over dtype, shape and little-endian bytes."""
    a = np.asarray(array)
    h = hashlib.sha256()
    h.update(f"{a.dtype.name}:{a.shape}".encode())
    h.update(np.ascontiguousarray(a, dtype=a.dtype.newbyteorder("<")).tobytes())
    return h.hexdigest()


def _entry(name, group, array, offset):
    a = np.asarray(array)
    if a.dtype.name not in _DTYPES:
        raise CheckpointError(f"{name}: unsupported dtype {a.dtype}")
    raw = np.ascontiguousarray(a, dtype=_DTYPES[a.dtype.name]).tobytes()
    meta = {"name": name, "group": group, "dtype": a.dtype.name, "shape": list(a.shape),
            "offset": offset, "nbytes": len(raw)}
    return meta, raw


def to_bytes(ckpt):
    directory, chunks, offset = [], [], 0
    items = [("tensor", k, v) for k, v in ckpt.tensors.items()]
    adam = None
    if ckpt.adam is not None:
        s = ckpt.adam
        adam = {"learning_rate": s.learning_rate, "beta1": s.beta1, "beta2": s.beta2,
                "epsilon": s.epsilon, "step_count": s.step_count}
        items += [("adam_m", k, v) for k, v in s.first_moment.items()]
        items += [("adam_v", k, v) for k, v in s.second_moment.items()]
    for group, name, arr in items:
        meta, raw = _entry(name, group, arr, offset)
        directory.append(meta)
        chunks.append(raw)
        offset += len(raw)
    header = {"format_version": FORMAT_VERSION, "tensors": directory, "adam": adam,
              "metadata": ckpt.metadata}
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _PREFIX.pack(MAGIC, FORMAT_VERSION, len(hbytes)) + hbytes + b"".join(chunks)


def from_bytes(blob):
    if len(blob) < _PREFIX.size:
        raise FormatError(f"checkpoint truncated: {len(blob)} bytes, need at least {_PREFIX.size}", offset=0)
    magic, version, hlen = _PREFIX.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError("not a checkpoint file (bad magic)", offset=0)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint format version {version}", offset=8)
    start = _PREFIX.size
    if len(blob) < start + hlen:
        raise FormatError(f"header truncated: expected {hlen} bytes", offset=start)
    try:
        header = json.loads(blob[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"malformed checkpoint header: {exc}", offset=start) from exc
    base = start + hlen
    tensors, first, second = {}, {}, {}
    for meta in header["tensors"]:
        lo = base + meta["offset"]
        hi = lo + meta["nbytes"]
        if hi > len(blob):
            raise FormatError(f"{meta['name']}: payload truncated, expected {hi} bytes, file has {len(blob)}",
                              offset=lo)
        arr = np.frombuffer(blob[lo:hi], dtype=_DTYPES[meta["dtype"]]).astype(meta["dtype"])
        arr = arr.reshape(meta["shape"])
        {"tensor": tensors, "adam_m": first, "adam_v": second}[meta["group"]][meta["name"]] = arr
    adam = None
    if header["adam"] is not None:
        adam = AdamState(first_moment=first, second_moment=second, **header["adam"])
    return Checkpoint(tensors=tensors, adam=adam, metadata=header["metadata"])


def save_checkpoint(ckpt, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(to_bytes(ckpt))
    return path


def load_checkpoint(path):
    return from_bytes(Path(path).read_bytes())


def snapshot(net, adam=None, metadata=None):
    """Copy a network's current state into a :class:`Checkpoint`."""
    tensors = {k: np.array(v, copy=True) for k, v in net.state_dict().items()}
    if adam is not None:
        adam = AdamState(adam.learning_rate, adam.beta1, adam.beta2, adam.epsilon, adam.step_count,
                         {k: v.copy() for k, v in adam.first_moment.items()},
                         {k: v.copy() for k, v in adam.second_moment.items()})
    return Checkpoint(tensors=tensors, adam=adam, metadata=dict(metadata or {}))
