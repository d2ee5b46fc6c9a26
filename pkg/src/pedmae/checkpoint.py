"""Binary checkpoint container: named arrays plus a JSON metadata block.

The layout is canonical — metadata keys sorted, arrays stored in sorted name
order, little-endian, C-contiguous — so saving a loaded checkpoint reproduces
the original file byte for byte.

    magic "PMAE" | uint32 version | uint64 header length | header JSON | raw array data
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"PMAE"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path: str | Path, arrays: dict[str, np.ndarray],
                    metadata: dict) -> None:
    index = []
    blobs = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        index.append({"name": name, "dtype": arr.dtype.str,
                      "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = json.dumps({"metadata": metadata, "arrays": index},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
        head = fh.read(12)
        if len(head) != 12:
            raise CheckpointError(f"{path}: truncated header")
        version, header_len = struct.unpack("<IQ", head)
        if version != FORMAT_VERSION:
            raise CheckpointError(
                f"{path}: unsupported checkpoint version {version} "
                f"(expected {FORMAT_VERSION})")
        header = fh.read(header_len)
        if len(header) != header_len:
            raise CheckpointError(f"{path}: truncated metadata block")
        try:
            doc = json.loads(header.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: corrupt metadata block") from exc
        arrays: dict[str, np.ndarray] = {}
        for entry in doc["arrays"]:
            dtype = np.dtype(entry["dtype"])
            shape = tuple(entry["shape"])
            nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
            blob = fh.read(nbytes)
            if len(blob) != nbytes:
                raise CheckpointError(
                    f"{path}: truncated array data for '{entry['name']}'")
            arrays[entry["name"]] = np.frombuffer(blob, dtype=dtype).reshape(shape).copy()
        if fh.read(1):
            raise CheckpointError(f"{path}: trailing bytes after array data")
    return arrays, doc["metadata"]
