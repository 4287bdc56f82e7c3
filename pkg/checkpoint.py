"""
Versioned binary checkpoint container.

    "<4sHI"  magic, format version, header length
    header   UTF-8 JSON: encoder config, vocabulary, metadata, tensor count
    tensors  per tensor: "<H" name length, name, "<B" ndim, "<{ndim}I" shape, little-endian float32 data
    trailer  SHA-256 of everything above
"""

import hashlib
import io
import json
import struct

import numpy as np
import torch

from models import EncoderConfig, ReportModel, Vocabulary
from utils import DataError, ensure_parent_dir

MAGIC = b"RDCL"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sHI")
_DIGEST_LEN = 32


class CheckpointError(DataError):
    pass


class ChecksumMismatch(CheckpointError):
    pass


def save_checkpoint(path: str, model: ReportModel, vocab: Vocabulary, metadata: dict | None = None):
    state = model.state_dict()
    header = json.dumps(
        {
            "config": model.config.to_dict(),
            "vocabulary": vocab.itos,
            "metadata": metadata or {},
            "n_tensors": len(state),
        },
        sort_keys=True,
    ).encode("utf-8")

    buf = io.BytesIO()
    buf.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header)))
    buf.write(header)
    for name, tensor in state.items():
        array = tensor.detach().cpu().numpy().astype("<f4")
        encoded = name.encode("utf-8")
        buf.write(struct.pack("<H", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<B", array.ndim))
        buf.write(struct.pack(f"<{array.ndim}I", *array.shape))
        buf.write(array.tobytes())
    payload = buf.getvalue()

    ensure_parent_dir(path)
    with open(path, "wb") as f:
        f.write(payload)
        f.write(hashlib.sha256(payload).digest())


def read_checkpoint(path: str) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < _PREFIX.size + _DIGEST_LEN:
        raise CheckpointError(f"{path}: file too short to be a checkpoint")
    payload, digest = data[:-_DIGEST_LEN], data[-_DIGEST_LEN:]
    if hashlib.sha256(payload).digest() != digest:
        raise ChecksumMismatch(f"{path}: checksum mismatch")

    magic, version, header_len = _PREFIX.unpack_from(payload, 0)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (magic {magic!r})")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    offset = _PREFIX.size
    header = json.loads(payload[offset : offset + header_len].decode("utf-8"))
    offset += header_len

    arrays = {}
    try:
        for _ in range(header["n_tensors"]):
            (name_len,) = struct.unpack_from("<H", payload, offset)
            offset += 2
            name = payload[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<B", payload, offset)
            offset += 1
            shape = struct.unpack_from(f"<{ndim}I", payload, offset)
            offset += 4 * ndim
            count = int(np.prod(shape)) if ndim else 1
            arrays[name] = np.frombuffer(payload, dtype="<f4", count=count, offset=offset).reshape(shape)
            offset += 4 * count
    except (struct.error, ValueError) as e:
        raise CheckpointError(f"{path}: truncated tensor table ({e})") from e
    if offset != len(payload):
        raise CheckpointError(f"{path}: {len(payload) - offset} trailing bytes after tensor table")
    return header, arrays


def load_checkpoint(path: str) -> tuple[ReportModel, Vocabulary, dict]:
    header, arrays = read_checkpoint(path)
    config = EncoderConfig.from_dict(header["config"])
    vocab = Vocabulary(header["vocabulary"])
    model = ReportModel(config)
    target = model.state_dict()
    if set(arrays) != set(target):
        raise CheckpointError(f"{path}: tensor names do not match the model built from its config")
    state = {name: torch.from_numpy(arrays[name].copy()).to(target[name].dtype) for name in target}
    model.load_state_dict(state)
    return model, vocab, header["metadata"]
