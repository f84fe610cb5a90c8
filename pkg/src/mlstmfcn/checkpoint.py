"""Self-describing single-file model checkpoints.

Layout::

    b"MLSTMFCN"            8-byte magic
    uint32 LE              format version
    uint64 LE              header length in bytes
    header                 UTF-8 JSON (sorted keys): config, tensor table,
                           payload length and SHA-256, free-form metadata
    payload                concatenated little-endian float64 tensors

The checksum makes a truncated or partially written file fail to load.
Files are written to a temporary sibling and renamed into place.
"""

import hashlib
import json
import os
import struct
import tempfile

import numpy as np

from .errors import ParseError
from .model import ModelConfig, ModelParams

MAGIC = b"MLSTMFCN"
FORMAT_VERSION = 1


def atomic_write_bytes(path, data):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


def encode_checkpoint(config, params, extras=None, metadata=None):
    tensors = dict(params.arrays())
    for k, v in (extras or {}).items():
        tensors[f"extra.{k}"] = np.asarray(v, dtype=np.float64)
    table = []
    chunks = []
    offset = 0
    for name, arr in tensors.items():
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        table.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = {
        "format_version": FORMAT_VERSION,
        "config": config.to_dict(),
        "tensors": table,
        "payload_bytes": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
        "metadata": metadata or {},
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(hbytes)) + hbytes + payload


def decode_checkpoint(blob):
    """Inverse of :func:`encode_checkpoint`. Returns (config, params, extras, metadata)."""
    fixed = len(MAGIC) + 12
    if len(blob) < fixed or blob[: len(MAGIC)] != MAGIC:
        raise ParseError("not a checkpoint file (bad magic)")
    version, hlen = struct.unpack("<IQ", blob[len(MAGIC) : fixed])
    if version != FORMAT_VERSION:
        raise ParseError(f"unsupported checkpoint format version {version}")
    if fixed + hlen > len(blob):
        raise ParseError("checkpoint truncated inside header")
    try:
        header = json.loads(blob[fixed : fixed + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"corrupt checkpoint header: {exc}") from None
    if not isinstance(header, dict) or not {"config", "tensors", "payload_bytes", "payload_sha256"} <= set(header):
        raise ParseError("checkpoint header is missing required fields")
    payload = blob[fixed + hlen :]
    if len(payload) != header["payload_bytes"]:
        raise ParseError(f"checkpoint payload has {len(payload)} bytes, expected {header['payload_bytes']}")
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise ParseError("checkpoint payload checksum mismatch")
    values = {}
    for entry in header["tensors"]:
        raw = payload[entry["offset"] : entry["offset"] + entry["nbytes"]]
        values[entry["name"]] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(entry["shape"])
    try:
        config = ModelConfig.from_dict(header["config"])
        extras = {k[len("extra.") :]: v for k, v in values.items() if k.startswith("extra.")}
        params = ModelParams.from_named(config, {k: v for k, v in values.items() if not k.startswith("extra.")})
    except (KeyError, TypeError) as exc:
        raise ParseError(f"checkpoint does not describe a complete model: missing {exc}") from None
    return config, params, extras, header.get("metadata", {})


def save_checkpoint(path, config, params, extras=None, metadata=None):
    atomic_write_bytes(path, encode_checkpoint(config, params, extras, metadata))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())
