"""Binary model checkpoints: magic, UTF-8 JSON header, raw float32 payload.

Layout: ``b"CMLB1"`` | u32 little-endian header length | header JSON |
payload. The header carries the encoder config and a tensor index of
(name, shape, byte offset) entries; the payload is the concatenation of all
tensors as little-endian float32, so a round-trip is bitwise exact on any
platform.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from . import numcore as nc
from .encoder import EncoderConfig, MetricModel

MAGIC = b"CMLB1"


class CheckpointError(RuntimeError):
    pass


class CheckpointMagicError(CheckpointError):
    """File does not start with the checkpoint magic."""


class CheckpointHeaderError(CheckpointError):
    """Header is malformed or internally inconsistent."""


class CheckpointPayloadError(CheckpointError):
    """Payload truncated or longer than the index describes."""


class CheckpointShapeError(CheckpointError):
    """Tensor index disagrees with the config's parameter layout."""


def save_checkpoint(model: MetricModel, path: str | Path) -> None:
    arrays = model.state_arrays()
    index = []
    offset = 0
    chunks = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f4")
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    header = {
        "config": model.config.to_dict(),
        "has_mlm_head": model.has_mlm_head,
        "tensors": index,
        "payload_bytes": offset,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    tmp = Path(path).with_suffix(Path(path).suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for chunk in chunks:
            fh.write(chunk)
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> MetricModel:
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 4 or raw[: len(MAGIC)] != MAGIC:
        raise CheckpointMagicError(f"{path} is not a model checkpoint")
    (header_len,) = struct.unpack_from("<I", raw, len(MAGIC))
    header_end = len(MAGIC) + 4 + header_len
    if header_end > len(raw):
        raise CheckpointHeaderError(f"{path}: header extends past end of file")
    try:
        header = json.loads(raw[len(MAGIC) + 4 : header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointHeaderError(f"{path}: unreadable header: {exc}") from exc
    try:
        config = EncoderConfig.from_dict(header["config"])
        index = header["tensors"]
        payload_bytes = header["payload_bytes"]
        has_mlm = header["has_mlm_head"]
    except (KeyError, TypeError) as exc:
        raise CheckpointHeaderError(f"{path}: header missing field: {exc}") from exc

    payload = raw[header_end:]
    if len(payload) != payload_bytes:
        raise CheckpointPayloadError(
            f"{path}: payload is {len(payload)} bytes, header says {payload_bytes}"
        )
    expected_offset = 0
    params: dict[str, nc.Parameter] = {}
    for entry in index:
        name, shape, offset = entry["name"], tuple(entry["shape"]), entry["offset"]
        if offset != expected_offset:
            raise CheckpointHeaderError(
                f"{path}: tensor {name} at offset {offset}, expected {expected_offset}"
            )
        nbytes = int(np.prod(shape, dtype=np.int64)) * 4
        if offset + nbytes > len(payload):
            raise CheckpointPayloadError(f"{path}: payload truncated at tensor {name}")
        arr = np.frombuffer(payload, dtype="<f4", count=nbytes // 4, offset=offset)
        params[name] = nc.Parameter(name, arr.reshape(shape).copy())
        expected_offset = offset + nbytes
    if expected_offset != payload_bytes:
        raise CheckpointPayloadError(
            f"{path}: index covers {expected_offset} bytes of {payload_bytes}"
        )
    try:
        return MetricModel(config, params, has_mlm_head=has_mlm)
    except Exception as exc:
        raise CheckpointShapeError(f"{path}: {exc}") from exc
