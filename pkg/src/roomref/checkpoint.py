"""Byte-stable model checkpoints.

Layout: 4-byte magic, 8-byte little-endian header length, canonical JSON
header, then each tensor's raw little-endian bytes in header order. The
header records the model config, the vocabulary fingerprint, the class
catalog, and the training step, so evaluation can refuse mismatched
artifacts. Writing the same model twice yields identical bytes.
"""

from __future__ import annotations

import json
import os

import numpy as np
import torch

from .errors import DataError, MissingArtifactError
from .model import GroundingModel, ModelConfig, init_model

MAGIC = b"RRCK"
CHECKPOINT_VERSION = 1

_DTYPE_CODES = {
    torch.float32: "<f4",
    torch.float64: "<f8",
}
_CODE_DTYPES = {code: dt for dt, code in _DTYPE_CODES.items()}


def save_checkpoint(
    path: str,
    model: GroundingModel,
    vocab_fingerprint: str,
    catalog,
    step: int,
) -> None:
    state = model.state_dict()
    tensors = []
    blobs = []
    for name in sorted(state):
        tensor = state[name].detach().cpu().contiguous()
        if tensor.dtype not in _DTYPE_CODES:
            raise DataError(f"unsupported checkpoint dtype {tensor.dtype} for {name}")
        code = _DTYPE_CODES[tensor.dtype]
        blob = tensor.numpy().astype(np.dtype(code), copy=False).tobytes()
        tensors.append({"name": name, "shape": list(tensor.shape), "dtype": code})
        blobs.append(blob)
    header = {
        "format_version": CHECKPOINT_VERSION,
        "model_config": model.cfg.to_dict(),
        "vocab_fingerprint": vocab_fingerprint,
        "catalog": list(catalog),
        "step": step,
        "tensors": tensors,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(header_bytes).to_bytes(8, "little"))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)


def read_checkpoint_header(path: str) -> dict:
    if not os.path.exists(path):
        raise MissingArtifactError(f"missing checkpoint: {path}")
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise DataError(f"{path}: not a checkpoint file")
        header_len = int.from_bytes(fh.read(8), "little")
        return json.loads(fh.read(header_len).decode("utf-8"))


def load_checkpoint(path: str) -> tuple[GroundingModel, dict]:
    """Rebuild the model from a checkpoint; returns (model, header)."""
    if not os.path.exists(path):
        raise MissingArtifactError(f"missing checkpoint: {path}")
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise DataError(f"{path}: not a checkpoint file")
        header_len = int.from_bytes(fh.read(8), "little")
        header = json.loads(fh.read(header_len).decode("utf-8"))
        if header.get("format_version") != CHECKPOINT_VERSION:
            raise DataError(
                f"{path}: unsupported checkpoint version {header.get('format_version')!r}"
            )
        cfg = ModelConfig.from_dict(header["model_config"])
        model = init_model(cfg, seed=0)
        state = {}
        for meta in header["tensors"]:
            dtype = np.dtype(meta["dtype"])
            count = int(np.prod(meta["shape"])) if meta["shape"] else 1
            raw = fh.read(count * dtype.itemsize)
            if len(raw) != count * dtype.itemsize:
                raise DataError(f"{path}: truncated tensor {meta['name']}")
            arr = np.frombuffer(raw, dtype=dtype).reshape(meta["shape"]).copy()
            state[meta["name"]] = torch.from_numpy(arr).to(_CODE_DTYPES[meta["dtype"]])
        missing = set(model.state_dict()) - set(state)
        if missing:
            raise DataError(f"{path}: checkpoint lacks tensors {sorted(missing)}")
    model.load_state_dict(state)
    model.eval()
    return model, header
