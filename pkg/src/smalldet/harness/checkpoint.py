"""Checkpoint persistence.

Binary layout: magic ``PTDT``, u32 version, u32 tensor count, then per
tensor a u32 name length, the UTF-8 name, u32 rank, u64 dims, and the raw
values as little-endian float32. Metadata (config echo, loss curve, model
shape) travels in a JSON sidecar next to the binary. Values are stored in
single precision, so round-trips are bit-exact in the training mode.
"""

import json
import os
import struct

import numpy as np

from ..tensor import real_dtype
from .model import named_parameters

PTDT_MAGIC = b"PTDT"
PTDT_VERSION = 1


def sidecar_path(path):
    return str(path) + ".meta.json"


def save_checkpoint(path, named_tensors, metadata):
    with open(path, "wb") as f:
        f.write(PTDT_MAGIC)
        f.write(struct.pack("<II", PTDT_VERSION, len(named_tensors)))
        for name, arr in named_tensors:
            # asarray, not ascontiguousarray: the latter promotes rank-0
            # inputs to 1-D and would corrupt scalar shapes
            arr = np.asarray(arr, dtype="<f4", order="C")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", arr.ndim))
            for dim in arr.shape:
                f.write(struct.pack("<Q", dim))
            f.write(arr.tobytes())
    with open(sidecar_path(path), "w") as f:
        json.dump(metadata, f, indent=1, sort_keys=True)
        f.write("\n")


def load_checkpoint(path):
    """Returns (ordered name -> float32 array dict, metadata dict)."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != PTDT_MAGIC:
        raise ValueError(f"not a checkpoint file: {path}")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != PTDT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version} in {path}")
    offset = 12
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        dims = struct.unpack_from(f"<{rank}Q", blob, offset)
        offset += 8 * rank
        size = int(np.prod(dims, dtype=np.int64)) if rank else 1
        values = np.frombuffer(blob, dtype="<f4", offset=offset, count=size)
        offset += 4 * size
        tensors[name] = values.reshape(dims).copy()
    if offset != len(blob):
        raise ValueError(f"trailing bytes in checkpoint {path}")
    meta = {}
    if os.path.exists(sidecar_path(path)):
        with open(sidecar_path(path)) as f:
            meta = json.load(f)
    return tensors, meta


def load_into_model(model, tensors):
    """Copy checkpoint tensors into the model, failing on the first
    missing, extra, or shape-mismatched entry."""
    named = named_parameters(model)
    for name, param in named:
        if name not in tensors:
            raise ValueError(f"checkpoint is missing tensor {name!r}")
        arr = tensors[name]
        if tuple(arr.shape) != tuple(param.data.shape):
            raise ValueError(
                f"tensor {name!r} has shape {tuple(arr.shape)}, "
                f"model expects {tuple(param.data.shape)}"
            )
        param.data = arr.astype(real_dtype())
    extra = sorted(set(tensors) - {name for name, _ in named})
    if extra:
        raise ValueError(f"checkpoint holds unknown tensor {extra[0]!r}")
