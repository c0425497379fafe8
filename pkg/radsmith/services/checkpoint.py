"""Flat binary container of named arrays.

Layout:
    8 bytes   magic b"RSMCKPT1"
    8 bytes   little-endian uint64 header length
    N bytes   UTF-8 JSON header {version, metadata, tensors: [{name, dtype, shape, offset, nbytes}]}
    ...       raw little-endian tensor bytes, offsets relative to the end of the header
"""
import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, Mapping, Tuple, Union

import numpy as np

from radsmith.core.errors import CheckpointError

logger = logging.getLogger(__name__)

MAGIC = b"RSMCKPT1"
CHECKPOINT_VERSION = 1
_ALLOWED_DTYPES = ("<f8", "<f4")


def save_checkpoint(path: Union[str, Path], tensors: Mapping[str, np.ndarray],
                    metadata: Mapping[str, Any]) -> None:
    """Write `tensors` in insertion order with `metadata` embedded in the header"""
    entries = []
    blobs = []
    offset = 0
    for name, array in tensors.items():
        little = np.ascontiguousarray(array, dtype=np.asarray(array).dtype.newbyteorder("<"))
        if little.dtype.str not in _ALLOWED_DTYPES:
            raise CheckpointError(f"tensor '{name}' has unsupported dtype {little.dtype}")
        blob = little.tobytes()
        entries.append({
            "name": name,
            "dtype": little.dtype.str,
            "shape": list(little.shape),
            "offset": offset,
            "nbytes": len(blob),
        })
        blobs.append(blob)
        offset += len(blob)

    header = json.dumps({
        "version": CHECKPOINT_VERSION,
        "metadata": dict(metadata),
        "tensors": entries,
    }, sort_keys=True).encode("utf-8")

    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)
    logger.info("Saved checkpoint %s (%d tensors, %d bytes)", path, len(entries), offset)


def load_checkpoint(path: Union[str, Path]) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    """Read back (tensors, metadata); arrays come back in native byte order"""
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"Checkpoint not found or unreadable: {path}") from e

    if len(raw) < 16 or raw[:8] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    (header_len,) = struct.unpack("<Q", raw[8:16])
    body_start = 16 + header_len
    if body_start > len(raw):
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[16:body_start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: header is not valid JSON") from e
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {header.get('version')}")

    tensors: Dict[str, np.ndarray] = {}
    for entry in header.get("tensors", []):
        if entry["dtype"] not in _ALLOWED_DTYPES:
            raise CheckpointError(f"{path}: tensor '{entry['name']}' has unsupported dtype {entry['dtype']}")
        start = body_start + entry["offset"]
        end = start + entry["nbytes"]
        if end > len(raw):
            raise CheckpointError(f"{path}: tensor '{entry['name']}' runs past end of file")
        dtype = np.dtype(entry["dtype"])
        array = np.frombuffer(raw[start:end], dtype=dtype)
        expected = int(np.prod(entry["shape"], dtype=np.int64))
        if array.size != expected:
            raise CheckpointError(f"{path}: tensor '{entry['name']}' has {array.size} values, expected {expected}")
        tensors[entry["name"]] = array.reshape(entry["shape"]).astype(dtype.newbyteorder("="))
    return tensors, header.get("metadata", {})
