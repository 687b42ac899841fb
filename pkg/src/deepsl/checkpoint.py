"""Binary checkpoints: magic, version, JSON header, then little-endian float64 parameters.

Layout::

    b"DSLCKPT\\0"  uint32 version  uint64 header_length  header (UTF-8 JSON)  payload

The payload is every parameter array, row-major, in the order listed by
``header["arrays"]``.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .model import DslModel
from .netfuncs import MlpParams

MAGIC = b"DSLCKPT\0"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    format_version: int
    model: DslModel
    train_config: Optional[dict] = None
    normalization: Optional[dict] = None
    classes: Optional[list] = None
    label_column: Optional[str] = None


def write_atomic(path, data: bytes) -> None:
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _net_header(net: MlpParams) -> dict:
    return {"layer_dims": list(net.layer_dims), "activation": net.activation,
            "output_range": list(net.output_range) if net.output_range is not None else None}


def to_bytes(ckpt: Checkpoint) -> bytes:
    model = ckpt.model
    arrays = []
    for group, items in model.groups():
        for i, a in enumerate(items):
            arrays.append({"name": f"{group}.{i}", "shape": list(a.shape)})
    header = {
        "format_version": FORMAT_VERSION,
        "model": {"n": model.n, "k": model.k, "d": model.d, "ablation": model.ablation,
                  "head_bias": model.head_bias is not None,
                  "nets": {name: _net_header(net) for name, net in model.nets().items()}},
        "arrays": arrays,
        "train_config": ckpt.train_config,
        "normalization": ckpt.normalization,
        "classes": ckpt.classes,
        "label_column": ckpt.label_column,
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = model.flat().astype("<f8").tobytes()
    return MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(head)) + head + payload


def from_bytes(data: bytes) -> Checkpoint:
    if data[:8] != MAGIC:
        raise ValueError("not a checkpoint file")
    version, head_len = struct.unpack("<IQ", data[8:20])
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    header = json.loads(data[20:20 + head_len].decode("utf-8"))
    payload = np.frombuffer(data[20 + head_len:], dtype="<f8").astype(float)
    spec = header["model"]
    shapes = [tuple(a["shape"]) for a in header["arrays"]]
    if payload.size != sum(int(np.prod(s)) for s in shapes):
        raise ValueError("checkpoint payload size does not match its header")

    nets = {}
    for name, h in spec["nets"].items():
        dims = h["layer_dims"]
        W = [np.zeros((o, i)) for i, o in zip(dims[:-1], dims[1:])]
        b = [np.zeros(o) for o in dims[1:]]
        rng = tuple(h["output_range"]) if h["output_range"] is not None else None
        nets[name] = MlpParams(tuple(dims), W, b, h["activation"], rng)
    k, d = spec["k"], spec["d"]
    skeleton = DslModel(spec["n"], k, d, nets.get("a"), nets["inv_p"], nets["q"], nets["w"], nets.get("v"),
                        np.zeros((k, d)), np.zeros(k) if spec["head_bias"] else None, spec["ablation"])
    model = skeleton.with_flat(payload)
    return Checkpoint(version, model, header.get("train_config"), header.get("normalization"),
                      header.get("classes"), header.get("label_column"))


def save(path, ckpt: Checkpoint) -> None:
    write_atomic(path, to_bytes(ckpt))


def load(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())
