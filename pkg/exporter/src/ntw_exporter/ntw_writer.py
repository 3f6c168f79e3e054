"""Standalone writer for the NTW named-tensor container.

The byte layout is the integration contract with the consuming engine:
magic "NTW1", u32 little-endian tensor count, then per tensor a u16 name
length, the UTF-8 name, u8 dtype code (0 = float32), u8 rank, rank x u32
dims and the row-major little-endian float32 payload. No padding.
"""

import struct

import numpy as np

MAGIC = b"NTW1"
DTYPE_F32 = 0


def write_ntw(path, tensors: dict) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<BB", DTYPE_F32, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())
