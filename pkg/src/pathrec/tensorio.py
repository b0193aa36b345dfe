"""Binary container for named dense tensors.

Layout (all little-endian)::

    magic   4s   b"PRTC"
    version u16
    count   u32
    count x { name_len u16, name utf-8, dtype u8 (0=f32, 1=f64), ndim u8, dims u64[ndim] }
    data blocks, row-major, in header order
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"PRTC"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}


class ContainerError(ValueError):
    pass


def save_tensors(path, tensors: dict[str, np.ndarray], dtype="<f4") -> None:
    dtype = np.dtype(dtype)
    if dtype not in _CODES:
        raise ContainerError(f"unsupported dtype {dtype}")
    header = [MAGIC, struct.pack("<HI", VERSION, len(tensors))]
    blocks = []
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype=dtype)
        raw = name.encode("utf-8")
        header.append(struct.pack("<H", len(raw)) + raw)
        header.append(struct.pack("<BB", _CODES[dtype], arr.ndim))
        header.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        blocks.append(arr.tobytes(order="C"))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(b"".join(header))
        fh.write(b"".join(blocks))


def load_tensors(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ContainerError(f"{path}: bad magic")
    version, count = struct.unpack_from("<HI", data, 4)
    if version != VERSION:
        raise ContainerError(f"{path}: unsupported version {version}")
    pos = 10
    specs = []
    for _ in range(count):
        (n,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + n].decode("utf-8")
        pos += n
        code, ndim = struct.unpack_from("<BB", data, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}Q", data, pos)
        pos += 8 * ndim
        specs.append((name, _DTYPES[code], shape))
    out = {}
    for name, dtype, shape in specs:
        size = int(np.prod(shape)) * dtype.itemsize
        if pos + size > len(data):
            raise ContainerError(f"{path}: truncated tensor {name}")
        out[name] = np.frombuffer(data, dtype=dtype, count=int(np.prod(shape)), offset=pos).reshape(shape).astype(np.float64)
        pos += size
    return out
