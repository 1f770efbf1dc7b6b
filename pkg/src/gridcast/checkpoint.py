"""Binary model checkpoints.

Layout: 16-byte magic, u32 format version, u32 header length, a UTF-8 JSON
header (model config, schedule fingerprint, loss trace, parameter manifest),
the named parameter blobs as little-endian float32 in manifest order, and a
trailing SHA-256 of everything before it. Files are written atomically.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np
import torch

from .errors import DataError
from .model import ModelConfig, ModelParams, NoisePredictorNet

MAGIC = b"GRIDCASTMODEL\x00\x00\x00"
FORMAT_VERSION = 1
_CHECKSUM_BYTES = 32


def save_checkpoint(params: ModelParams, path: str | Path) -> None:
    """Serialize a model to ``path``. Parameters are stored as float32, so
    only float32 models round-trip bitwise."""
    path = Path(path)
    state = params.net.state_dict()
    manifest = []
    blobs = []
    for name, tensor in state.items():
        arr = tensor.detach().cpu().numpy().astype("<f4")
        manifest.append({"name": name, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = {
        "config": dataclasses.asdict(params.config),
        "schedule": {
            "T": int(params.schedule_fingerprint[0]),
            "beta_start": float(params.schedule_fingerprint[1]),
            "beta_end": float(params.schedule_fingerprint[2]),
        },
        "loss_trace": [float(v) for v in params.loss_trace],
        "params": manifest,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = bytearray()
    body += MAGIC
    body += struct.pack("<I", FORMAT_VERSION)
    body += struct.pack("<I", len(header_bytes))
    body += header_bytes
    for blob in blobs:
        body += blob
    body += hashlib.sha256(bytes(body)).digest()

    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(bytes(body))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str | Path) -> ModelParams:
    """Read a checkpoint back into a ready-to-use model.

    Raises DataError for a missing file, bad magic, unsupported version,
    malformed header, or checksum mismatch.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    floor = len(MAGIC) + 8 + _CHECKSUM_BYTES
    if len(raw) < floor:
        raise DataError(f"checkpoint {path} is truncated ({len(raw)} bytes)")
    if raw[: len(MAGIC)] != MAGIC:
        raise DataError(f"{path} is not a model checkpoint (bad magic)")
    digest = hashlib.sha256(raw[:-_CHECKSUM_BYTES]).digest()
    if digest != raw[-_CHECKSUM_BYTES:]:
        raise DataError(f"checkpoint {path} failed its checksum, refusing to load")
    offset = len(MAGIC)
    version, header_len = struct.unpack_from("<II", raw, offset)
    offset += 8
    if version != FORMAT_VERSION:
        raise DataError(f"unsupported checkpoint format version {version}")
    if offset + header_len > len(raw) - _CHECKSUM_BYTES:
        raise DataError(f"checkpoint {path} header overruns the file")
    try:
        header = json.loads(raw[offset : offset + header_len].decode("utf-8"))
        config_dict = dict(header["config"])
        schedule = header["schedule"]
        manifest = header["params"]
        loss_trace = [float(v) for v in header.get("loss_trace", [])]
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(f"checkpoint {path} has a malformed header: {exc}") from exc
    offset += header_len

    known = {f.name for f in dataclasses.fields(ModelConfig)}
    unknown = set(config_dict) - known
    if unknown:
        raise DataError(f"checkpoint config has unknown fields: {sorted(unknown)}")
    config = ModelConfig(**config_dict)
    net = NoisePredictorNet(config)

    state = {}
    for entry in manifest:
        shape = tuple(int(d) for d in entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 4
        if offset + nbytes > len(raw) - _CHECKSUM_BYTES:
            raise DataError(f"checkpoint {path} parameter data is truncated")
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(shape)
        state[entry["name"]] = torch.from_numpy(arr.copy())
        offset += nbytes
    if offset != len(raw) - _CHECKSUM_BYTES:
        raise DataError(f"checkpoint {path} has trailing bytes after parameters")

    expected = set(net.state_dict().keys())
    got = set(state.keys())
    if expected != got:
        missing = sorted(expected - got)
        extra = sorted(got - expected)
        raise DataError(
            f"checkpoint parameters do not match the architecture "
            f"(missing {missing}, unexpected {extra})"
        )
    net.load_state_dict(state, strict=True)
    return ModelParams(
        net=net,
        config=config,
        schedule_fingerprint=(
            int(schedule["T"]),
            float(schedule["beta_start"]),
            float(schedule["beta_end"]),
        ),
        loss_trace=loss_trace,
    )
