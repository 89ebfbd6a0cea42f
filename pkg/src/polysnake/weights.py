"""Binary weight file.

Layout (all integers little-endian)::

    magic     8 bytes   b"PSNKWTS\\0"
    version   uint32
    hdr_len   uint64
    header    hdr_len bytes of UTF-8 JSON:
              {"meta": {...}, "tensors": [{"name", "dtype", "shape", "offset", "nbytes"}, ...]}
    payload   concatenated little-endian tensor bytes; offsets are relative
              to the start of the payload

Readers reject any version other than :data:`FORMAT_VERSION`.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"PSNKWTS\0"
FORMAT_VERSION = 1
_DTYPES = {"f4": np.float32, "f8": np.float64, "i8": np.int64, "u8": np.uint64}


class WeightFileError(ValueError):
    pass


def save_tensors(path: str | Path, tensors: Mapping[str, np.ndarray], meta: dict | None = None) -> None:
    directory = []
    chunks = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        code = arr.dtype.str[1:]
        if code not in _DTYPES:
            raise WeightFileError(f"unsupported dtype {arr.dtype} for {name}")
        data = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes()
        directory.append({"name": name, "dtype": code, "shape": list(arr.shape),
                          "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    header = json.dumps({"meta": meta or {}, "tensors": directory}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(header)))
        fh.write(header)
        for c in chunks:
            fh.write(c)


def load_tensors(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise WeightFileError(f"{path}: not a weight file (bad magic)")
    version, hlen = struct.unpack_from("<IQ", raw, 8)
    if version != FORMAT_VERSION:
        raise WeightFileError(f"{path}: unsupported format version {version}")
    start = 8 + 12
    header = json.loads(raw[start:start + hlen].decode())
    payload = memoryview(raw)[start + hlen:]
    out = {}
    for ent in header["tensors"]:
        dt = np.dtype(_DTYPES[ent["dtype"]]).newbyteorder("<")
        buf = payload[ent["offset"]:ent["offset"] + ent["nbytes"]]
        out[ent["name"]] = np.frombuffer(buf, dtype=dt).reshape(ent["shape"]).astype(dt.newbyteorder("="))
    return out, header["meta"]
