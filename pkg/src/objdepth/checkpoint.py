"""Checkpoint files: a JSON manifest followed by a blob of little-endian tensors.

Layout::

    b"OBJDCKPT" | u32 version | u64 manifest length | manifest (UTF-8 JSON) | tensor blob

The manifest carries the full run config, the training step, a metric
snapshot and an index of ``{name, dtype, shape, offset}`` into the blob.
"""

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np
import torch

from .config import ModelConfig
from .errors import CheckpointIncompatibleError, ParseError

MAGIC = b"OBJDCKPT"
VERSION = 1
_HEADER = struct.Struct("<IQ")
_DTYPES = {torch.float32: "<f4", torch.float64: "<f8"}


@dataclass
class Checkpoint:
    config: ModelConfig
    step: int
    tensors: dict
    metrics: dict = field(default_factory=dict)


def save_checkpoint(path, model, step=0, metrics=None):
    index, chunks, offset = [], [], 0
    for name, tensor in model.state_dict().items():
        arr = tensor.detach().cpu().numpy().astype(_DTYPES[tensor.dtype], copy=False)
        raw = np.ascontiguousarray(arr).tobytes()
        index.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "config": model.cfg.to_dict(),
        "step": int(step),
        "metrics": metrics or {},
        "tensors": index,
        "blob_bytes": offset,
    }
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(VERSION, len(head)))
        fh.write(head)
        for raw in chunks:
            fh.write(raw)
    os.replace(tmp, path)


def read_checkpoint(path):
    """Parse a checkpoint file fully; raises ParseError on any corruption."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[: len(MAGIC)] != MAGIC:
        raise ParseError(f"{path}: not a checkpoint file")
    pos = len(MAGIC)
    if len(data) < pos + _HEADER.size:
        raise ParseError(f"{path}: truncated header")
    version, head_len = _HEADER.unpack_from(data, pos)
    if version != VERSION:
        raise ParseError(f"{path}: unsupported checkpoint version {version}")
    pos += _HEADER.size
    if len(data) < pos + head_len:
        raise ParseError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(data[pos : pos + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: corrupt manifest ({exc})") from None
    pos += head_len
    blob = data[pos:]
    if len(blob) != manifest.get("blob_bytes"):
        raise ParseError(f"{path}: tensor blob has {len(blob)} bytes, manifest says {manifest.get('blob_bytes')}")
    tensors = {}
    for entry in manifest["tensors"]:
        dtype = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"], dtype=np.int64))
        end = entry["offset"] + count * dtype.itemsize
        if end > len(blob):
            raise ParseError(f"{path}: tensor {entry['name']} runs past end of blob")
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=entry["offset"]).reshape(entry["shape"])
        tensors[entry["name"]] = torch.from_numpy(arr.astype(dtype.newbyteorder("="), copy=True))
    cfg = ModelConfig.from_dict(manifest["config"])
    return Checkpoint(cfg, manifest["step"], tensors, manifest.get("metrics", {}))


def load_into(model, ckpt):
    """Copy checkpoint tensors into ``model`` after checking every name and shape."""
    expected = model.state_dict()
    diffs = []
    for name, tensor in expected.items():
        if name not in ckpt.tensors:
            diffs.append(f"missing {name} {tuple(tensor.shape)}")
        elif tuple(ckpt.tensors[name].shape) != tuple(tensor.shape):
            diffs.append(f"{name}: checkpoint {tuple(ckpt.tensors[name].shape)} vs model {tuple(tensor.shape)}")
    diffs += [f"unexpected {name}" for name in ckpt.tensors if name not in expected]
    if diffs:
        raise CheckpointIncompatibleError(diffs)
    model.load_state_dict({k: v.to(expected[k].dtype) for k, v in ckpt.tensors.items()})
    return model


def load_checkpoint(path, cfg=None):
    """Build a model from a checkpoint (optionally against an explicit config)."""
    from .model import ObjectDepthNet

    ckpt = read_checkpoint(path)
    model = ObjectDepthNet(cfg or ckpt.config)
    load_into(model, ckpt)
    return model, ckpt
