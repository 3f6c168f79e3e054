"""NTW named-tensor weight container.

Byte layout (little-endian, no padding or alignment):

    magic "NTW1"
    u32   tensor count
    per tensor:
        u16   name length
        ...   UTF-8 name
        u8    dtype code (0 = float32)
        u8    rank
        u32   dims (rank of them)
        f32   payload, row-major, dim-product elements
"""

import struct

import numpy as np

from .errors import FormatError, WeightLoadError

MAGIC = b"NTW1"
DTYPE_F32 = 0


def write_ntw(path, tensors: dict[str, np.ndarray]) -> None:
    """Serialize an ordered name -> tensor map. float32 only."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            arr = np.asarray(arr)
            if arr.dtype != np.float32:
                raise FormatError(
                    f"NTW stores float32 tensors; {name!r} has dtype {arr.dtype}"
                )
            encoded = name.encode("utf-8")
            if len(encoded) > 0xFFFF:
                raise FormatError(f"tensor name too long: {len(encoded)} bytes")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<BB", DTYPE_F32, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_ntw(path) -> dict[str, np.ndarray]:
    """Parse an NTW file back into an ordered name -> tensor map."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    if len(data) < 8:
        raise FormatError("truncated NTW file: missing tensor count")
    (count,) = struct.unpack_from("<I", data, 4)
    pos = 8
    tensors: dict[str, np.ndarray] = {}

    def take(n, what):
        nonlocal pos
        if pos + n > len(data):
            raise FormatError(f"truncated NTW file while reading {what}")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    for i in range(count):
        (name_len,) = struct.unpack("<H", take(2, f"name length of tensor {i}"))
        try:
            name = take(name_len, f"name of tensor {i}").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"tensor {i} name is not valid UTF-8") from exc
        dtype_code, rank = struct.unpack("<BB", take(2, f"header of {name!r}"))
        if dtype_code != DTYPE_F32:
            raise FormatError(f"unknown dtype code {dtype_code} for {name!r}")
        dims = struct.unpack(f"<{rank}I", take(4 * rank, f"dims of {name!r}"))
        n_elem = 1
        for d in dims:
            n_elem *= d
        payload = take(4 * n_elem, f"payload of {name!r}")
        # frombuffer views are read-only; loaded weights must be trainable.
        arr = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
        tensors[name] = arr
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing byte(s) after last tensor")
    return tensors


def save_weights(model, path) -> None:
    """Write every model parameter, in layer order, to an NTW file."""
    write_ntw(path, {name: model.params[name] for name in model.param_names()})


def load_weights(model, path) -> dict[str, np.ndarray]:
    """Bind an NTW file onto a model's parameters.

    Every model parameter must be present with a matching shape; names in
    the file that the model does not use are ignored (a full checkpoint can
    seed a topless backbone). Returns the loaded store.
    """
    store = read_ntw(path)
    missing = [n for n in model.param_names() if n not in store]
    if missing:
        raise WeightLoadError(f"NTW file is missing tensor(s): {', '.join(missing)}")
    for name in model.param_names():
        have = store[name]
        want = model.params[name].shape
        if have.shape != want:
            raise WeightLoadError(
                f"tensor {name} has shape {have.shape} in file, model expects {want}"
            )
    for name in model.param_names():
        model.params[name] = store[name].astype(model.dtype, copy=False)
    return store
