"""Dense NCHW tensors, macroblock tiling and the FBT1 raw tensor format.

Tensors are plain 4-D numpy arrays of float32 or float64 in row-major
``(n, c, h, w)`` order.  Nothing here does arithmetic; tiling is a pure
reshape/transpose so that ``untile(tile(t, k), k)`` is bit-exact.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

FBT1_MAGIC = b"FBT1"
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}
_AXIS_NAMES = ("n", "c", "h", "w")


class DivisibilityError(ValueError):
    """Raised when a spatial axis is not a multiple of the macroblock size."""

    def __init__(self, axis: str, size: int, k: int):
        self.axis = axis
        super().__init__(f"axis {axis!r} of size {size} is not divisible by macroblock size k={k}")


class FormatError(ValueError):
    pass


def as_tensor(x, dtype=None) -> np.ndarray:
    t = np.asarray(x, dtype=dtype)
    if t.ndim != 4:
        raise ValueError(f"expected a 4-D (n, c, h, w) tensor, got shape {t.shape}")
    if t.dtype not in _DTYPE_CODES:
        t = t.astype(np.float64)
    if min(t.shape) < 1:
        raise ValueError(f"all tensor dimensions must be >= 1, got {t.shape}")
    return t


def check_macroblock(h: int, w: int, k: int) -> None:
    if k < 1:
        raise ValueError(f"macroblock size must be >= 1, got {k}")
    if h % k:
        raise DivisibilityError("h", h, k)
    if w % k:
        raise DivisibilityError("w", w, k)


def tile(t: np.ndarray, k: int) -> np.ndarray:
    """Split every channel into ``k x k`` macroblocks.

    Returns an array of shape ``(n, c, h//k, w//k, k, k)`` where
    ``out[n, c, bi, bj, r, s] == t[n, c, bi*k + r, bj*k + s]``.
    """
    t = as_tensor(t)
    n, c, h, w = t.shape
    check_macroblock(h, w, k)
    return np.ascontiguousarray(t.reshape(n, c, h // k, k, w // k, k).transpose(0, 1, 2, 4, 3, 5))


def untile(tt: np.ndarray, k: int) -> np.ndarray:
    tt = np.asarray(tt)
    if tt.ndim != 6 or tt.shape[4] != k or tt.shape[5] != k:
        raise ValueError(f"expected tiled shape (n, c, bh, bw, {k}, {k}), got {tt.shape}")
    n, c, bh, bw = tt.shape[:4]
    return np.ascontiguousarray(tt.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, bh * k, bw * k))


def write_fbt1(path, t: np.ndarray) -> None:
    t = np.asarray(t)
    if t.ndim != 4:
        raise ValueError(f"FBT1 stores 4-D tensors only, got shape {t.shape}")
    if t.dtype not in _DTYPE_CODES:
        raise ValueError(f"FBT1 stores float32/float64 only, got {t.dtype}")
    header = FBT1_MAGIC + struct.pack("<B4I", _DTYPE_CODES[t.dtype], *t.shape)
    data = np.ascontiguousarray(t, dtype=t.dtype.newbyteorder("<"))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(data.tobytes())


def read_fbt1(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 21 or raw[:4] != FBT1_MAGIC:
        raise FormatError(f"{path}: not an FBT1 tensor file")
    code, *dims = struct.unpack_from("<B4I", raw, 4)
    if code not in _CODE_DTYPES:
        raise FormatError(f"{path}: unknown dtype code {code}")
    dtype = _CODE_DTYPES[code].newbyteorder("<")
    count = int(np.prod(dims))
    if len(raw) - 21 != count * dtype.itemsize:
        raise FormatError(f"{path}: payload size does not match dims {tuple(dims)}")
    return np.frombuffer(raw, dtype=dtype, offset=21).astype(_CODE_DTYPES[code]).reshape(dims)
