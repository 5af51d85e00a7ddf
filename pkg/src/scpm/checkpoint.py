"""Binary checkpoint format.

Layout: ``b"SCPM"``, u32 LE version, u32 LE header length, UTF-8 JSON header,
then raw little-endian float32 payloads in the order of ``header["tensors"]``.
Tensor offsets are relative to the start of the payload.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .autograd import ContractError, Rng
from .data import Vocabulary
from .model import ModelConfig, StyleTransferModel

MAGIC = b"SCPM"
VERSION = 1


class CheckpointError(ContractError):
    pass


def save_checkpoint(path, model: StyleTransferModel, vocab: Vocabulary, *, config: dict,
                    epoch: int, phase: str, rng_state: dict | None = None, extra: dict | None = None) -> Path:
    path = Path(path)
    directory, offset, payloads = [], 0, []
    for name, t in model.params().items():
        buf = np.ascontiguousarray(t.data, dtype="<f4").tobytes()
        directory.append({"name": name, "rank": t.data.ndim, "dims": list(t.shape), "offset": offset})
        payloads.append(buf)
        offset += len(buf)
    header = {
        "config": config,
        "model_config": model.cfg.to_dict(),
        "vocab": vocab.itos,
        "epoch": epoch,
        "phase": phase,
        "rng_state": rng_state,
        "trained": {"clf": model.clf.trained, "eval_clf": model.eval_clf.trained},
        "extra": extra or {},
        "tensors": directory,
    }
    hbytes = json.dumps(header).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".ckpt")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<II", VERSION, len(hbytes)))
            f.write(hbytes)
            for buf in payloads:
                f.write(buf)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def read_header(path) -> dict:
    with open(path, "rb") as f:
        return _read_header(f, path)


def _read_header(f, path) -> dict:
    if f.read(4) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack("<II", f.read(8))
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    return json.loads(f.read(hlen).decode("utf-8"))


def load_checkpoint(path) -> tuple[StyleTransferModel, Vocabulary, dict]:
    with open(path, "rb") as f:
        header = _read_header(f, path)
        payload = f.read()
    cfg = ModelConfig.from_dict(header["model_config"])
    model = StyleTransferModel.create(cfg, Rng(0))
    params = model.params()
    for entry in header["tensors"]:
        name = entry["name"]
        if name not in params:
            raise CheckpointError(f"{path}: unknown tensor {name}")
        n = int(np.prod(entry["dims"])) if entry["dims"] else 1
        arr = np.frombuffer(payload, dtype="<f4", count=n, offset=entry["offset"])
        if list(params[name].shape) != entry["dims"]:
            raise CheckpointError(f"{path}: shape mismatch for {name}")
        params[name].data = arr.astype(np.float64).reshape(entry["dims"])
    model.clf.trained = header["trained"]["clf"]
    model.eval_clf.trained = header["trained"]["eval_clf"]
    return model, Vocabulary(header["vocab"]), header
