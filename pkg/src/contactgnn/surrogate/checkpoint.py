"""Versioned binary parameter checkpoints with a JSON sidecar."""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .model import GnnConfig, init_params

MAGIC = b"CGNNCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model, seed: int, extra: Optional[dict] = None) -> Path:
    """Write ``path`` (binary) and ``path.json`` (config, seed, extra)."""
    path = Path(path)
    names, shapes, blobs = [], [], []
    for name, p in model.named_parameters():
        names.append(name)
        shapes.append(list(p.shape))
        blobs.append(p.detach().numpy().astype("<f8").tobytes())
    header = json.dumps({"config": model.cfg.to_dict(), "names": names, "shapes": shapes}).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)
    side = {"config": model.cfg.to_dict(), "seed": seed, "format_version": VERSION}
    if extra:
        side.update(extra)
    Path(str(path) + ".json").write_text(json.dumps(side, indent=2))
    return path


def load_checkpoint(path):
    """Returns ``(model, sidecar)``; the sidecar is ``{}`` when absent."""
    path = Path(path)
    data = path.read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic bytes")
    version, hlen = struct.unpack("<II", data[8:16])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    header = json.loads(data[16:16 + hlen].decode())
    model = init_params(GnnConfig.from_dict(header["config"]), 0)
    params = dict(model.named_parameters())
    if list(params) != header["names"]:
        raise CheckpointError(f"{path}: parameter layout does not match config")
    flat = np.frombuffer(data[16 + hlen:], dtype="<f8")
    expected = sum(int(np.prod(s)) for s in header["shapes"])
    if len(flat) != expected:
        raise CheckpointError(f"{path}: expected {expected} values, found {len(flat)}")
    pos = 0
    with torch.no_grad():
        for name, shape in zip(header["names"], header["shapes"]):
            n = int(np.prod(shape))
            params[name].copy_(torch.from_numpy(flat[pos:pos + n].reshape(shape).astype(np.float64)))
            pos += n
    side_path = Path(str(path) + ".json")
    side = json.loads(side_path.read_text()) if side_path.exists() else {}
    return model, side
