"""
Binary tensor container and checkpoint format

Layout: 8-byte magic, little-endian uint64 header length, UTF-8 JSON header,
then the raw little-endian payload. The header lists every array with its
name, shape, dtype and byte offset into the payload.
"""
import json
import struct
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import numpy as np

from src.models.errors import CheckpointError

CHECKPOINT_MAGIC = b"PGRDCKPT"
_LEN = struct.Struct("<Q")

PathLike = Union[str, Path]


class ContainerError(Exception):
    """Low-level container failure; wrapped by the format-specific readers"""

    def __init__(self, message: str, offset: Optional[int] = None, tensor: Optional[str] = None):
        super().__init__(message)
        self.message = message
        self.offset = offset
        self.tensor = tensor


def _little_endian(array: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(array, dtype=array.dtype.newbyteorder("<"))


def encode_container(magic: bytes, arrays: Mapping[str, np.ndarray], meta: Mapping[str, Any]) -> bytes:
    """Serialize named arrays plus metadata"""
    if len(magic) != 8:
        raise ValueError("magic must be 8 bytes")
    entries = []
    chunks = []
    offset = 0
    for name, array in arrays.items():
        data = _little_endian(np.asarray(array))
        raw = data.tobytes(order="C")
        entries.append({
            "name": name,
            "shape": list(data.shape),
            "dtype": data.dtype.str,
            "offset": offset,
            "nbytes": len(raw),
        })
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": dict(meta), "tensors": entries}, sort_keys=True).encode("utf-8")
    return magic + _LEN.pack(len(header)) + header + b"".join(chunks)


def decode_container(magic: bytes, blob: bytes) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    """Inverse of encode_container; raises ContainerError on corruption"""
    if len(blob) < 16:
        raise ContainerError("file shorter than magic + header length", offset=len(blob))
    if blob[:8] != magic:
        raise ContainerError(f"bad magic {blob[:8]!r}, expected {magic!r}", offset=0)
    (header_len,) = _LEN.unpack_from(blob, 8)
    start = 16 + header_len
    if start > len(blob):
        raise ContainerError("header runs past end of file", offset=len(blob))
    try:
        header = json.loads(blob[16:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"unreadable header: {exc}", offset=16) from exc

    payload = memoryview(blob)[start:]
    arrays: Dict[str, np.ndarray] = {}
    for entry in header.get("tensors", []):
        name = entry["name"]
        dtype = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        end = entry["offset"] + entry["nbytes"]
        if entry["nbytes"] != int(np.prod(shape, dtype=np.int64)) * dtype.itemsize:
            raise ContainerError("size does not match shape", offset=start + entry["offset"], tensor=name)
        if end > len(payload):
            raise ContainerError("payload truncated", offset=start + len(payload), tensor=name)
        chunk = payload[entry["offset"]:end]
        arrays[name] = np.frombuffer(chunk, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
    return arrays, header.get("meta", {})


def save_checkpoint(path: PathLike, tensors: Mapping[str, np.ndarray], meta: Mapping[str, Any]) -> Path:
    """Write a PGRDCKPT file"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_container(CHECKPOINT_MAGIC, tensors, meta))
    return path


def load_checkpoint(path: PathLike) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    """Read a PGRDCKPT file"""
    try:
        return decode_container(CHECKPOINT_MAGIC, Path(path).read_bytes())
    except ContainerError as exc:
        raise CheckpointError(f"{path}: {exc.message}", tensor=exc.tensor) from exc
