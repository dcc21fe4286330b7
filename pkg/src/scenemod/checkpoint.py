"""Bit-exact checkpoint container for parameter stores.

Layout:
  bytes 0..7    magic ``b"MODCKPT1"``
  bytes 8..15   little-endian uint64 header length
  header        UTF-8 JSON: {"entries": [{"name", "shape", "offset"}, ...]}
  payload       concatenated raw little-endian float64 data

Entries are written sorted by name, so saving the same store twice yields
byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import (
    CorruptHeaderError,
    DataError,
    DuplicateNameError,
    TruncatedPayloadError,
)
from .tensor import ParameterStore

MAGIC = b"MODCKPT1"


def save_checkpoint(store: ParameterStore, path) -> None:
    entries = []
    chunks = []
    offset = 0
    for name, value in store.items():
        raw = value.astype("<f8", copy=False).tobytes()
        entries.append({"name": name, "shape": list(value.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"entries": entries}, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for raw in chunks:
            f.write(raw)


def load_checkpoint(path) -> ParameterStore:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    blob = path.read_bytes()
    if len(blob) < len(MAGIC) + 8 or blob[: len(MAGIC)] != MAGIC:
        raise CorruptHeaderError(f"{path}: bad magic")
    (header_len,) = struct.unpack("<Q", blob[8:16])
    header_end = 16 + header_len
    if header_end > len(blob):
        raise CorruptHeaderError(f"{path}: header length exceeds file size")
    try:
        header = json.loads(blob[16:header_end].decode("utf-8"))
        entries = header["entries"]
    except (ValueError, KeyError, UnicodeDecodeError) as exc:
        raise CorruptHeaderError(f"{path}: unparsable header: {exc}") from exc

    seen = set()
    store = ParameterStore()
    payload = blob[header_end:]
    for entry in entries:
        try:
            name, shape, offset = entry["name"], entry["shape"], entry["offset"]
        except (TypeError, KeyError) as exc:
            raise CorruptHeaderError(f"{path}: malformed entry {entry!r}") from exc
        if name in seen:
            raise DuplicateNameError(f"{path}: duplicate name {name!r}")
        seen.add(name)
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if offset < 0 or offset + nbytes > len(payload):
            raise TruncatedPayloadError(
                f"{path}: truncated payload for {name!r} "
                f"(need {offset + nbytes} bytes, have {len(payload)})"
            )
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
        store[name] = arr.reshape(shape).copy()
    return store


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
