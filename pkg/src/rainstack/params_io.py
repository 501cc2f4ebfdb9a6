"""Binary parameter dumps: the "VDMF" named-tensor format.

Layout (all integers little-endian):

    magic   4 bytes  b"VDMF"
    version u8       currently 1
    then, repeated until end of file, one record per tensor:
      name_len  u32
      name      name_len bytes, UTF-8
      rank      i32
      extents   rank x i32
      payload   prod(extents) x f32

Model parameters round-trip through :mod:`rainstack.model`'s named-tensor
flattening; payloads are stored as float32, so loading reproduces the saved
values at float32 precision.
"""

import struct

import numpy as np

from .frame_io import _atomic_write
from .model import ModelParams, from_named_tensors, named_tensors

VDMF_MAGIC = b"VDMF"
VDMF_VERSION = 1


def write_params_file(path, tensors: dict) -> None:
    """Write a ``name -> array`` mapping as a VDMF file."""

    def emit(tmp):
        with open(tmp, "wb") as f:
            f.write(VDMF_MAGIC)
            f.write(struct.pack("<B", VDMF_VERSION))
            for name, arr in tensors.items():
                arr = np.asarray(arr, dtype="<f4")
                raw = name.encode("utf-8")
                f.write(struct.pack("<I", len(raw)))
                f.write(raw)
                f.write(struct.pack("<i", arr.ndim))
                f.write(struct.pack(f"<{arr.ndim}i", *arr.shape))
                f.write(np.ascontiguousarray(arr).tobytes())

    _atomic_write(path, emit)


def read_params_file(path) -> dict:
    """Read a VDMF file back into a ``name -> float64 array`` mapping."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != VDMF_MAGIC:
        raise ValueError(f"bad magic in {path}: expected {VDMF_MAGIC!r}")
    if len(data) < 5:
        raise ValueError(f"truncated VDMF header in {path}")
    version = data[4]
    if version != VDMF_VERSION:
        raise ValueError(f"unsupported VDMF version {version} in {path}")
    tensors = {}
    pos = 5
    end = len(data)
    while pos < end:
        if pos + 4 > end:
            raise ValueError(f"truncated tensor record in {path}")
        (name_len,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if pos + name_len + 4 > end:
            raise ValueError(f"truncated tensor record in {path}")
        name = data[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = struct.unpack_from("<i", data, pos)
        pos += 4
        if rank < 0 or pos + 4 * rank > end:
            raise ValueError(f"invalid rank for tensor {name!r} in {path}")
        extents = struct.unpack_from(f"<{rank}i", data, pos)
        pos += 4 * rank
        if any(e < 0 for e in extents):
            raise ValueError(f"negative extent for tensor {name!r} in {path}")
        count = int(np.prod(extents, dtype=np.int64)) if rank else 1
        nbytes = 4 * count
        if pos + nbytes > end:
            raise ValueError(f"truncated payload for tensor {name!r} in {path}")
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=pos)
        pos += nbytes
        if name in tensors:
            raise ValueError(f"duplicate tensor {name!r} in {path}")
        tensors[name] = arr.reshape(extents).astype(np.float64)
    return tensors


def save_model_params(path, params: ModelParams) -> None:
    """Dump a full model parameter set to a VDMF file."""
    write_params_file(path, named_tensors(params))


def load_model_params(path) -> ModelParams:
    """Load a full model parameter set from a VDMF file."""
    return from_named_tensors(read_params_file(path))
