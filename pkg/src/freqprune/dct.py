"""Macroblocked orthonormal 2-D DCT-II with JPEG zigzag coefficient order.

The transform is written as explicit small-matrix products so that the MAC
count of the implementation is exactly the one the cost model charges:
every produced coefficient costs ``k*k`` multiply-accumulates per block.

Coefficients are accumulated elementwise in a fixed order (pixel 0 first),
which makes a truncated transform bit-identical to the full transform on
the coefficients it keeps.
"""

from __future__ import annotations

import contextlib
import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .tensor import as_tensor, check_macroblock, read_fbt1, write_fbt1

MAX_K = 8
ZIGZAG_CONVENTION = "jpeg-zigzag-v1"

# Test hook: nonzero values corrupt every basis handed out, so the
# verification suite can demonstrate that it notices.
_basis_perturbation = 0.0


@contextlib.contextmanager
def perturbed_basis(eps: float):
    global _basis_perturbation
    old = _basis_perturbation
    _basis_perturbation = float(eps)
    try:
        yield
    finally:
        _basis_perturbation = old


def _check_k(k: int) -> None:
    if not 1 <= k <= MAX_K:
        raise ValueError(f"macroblock size k must be in 1..{MAX_K}, got {k}")


@lru_cache(maxsize=None)
def _basis(k: int, eps: float) -> np.ndarray:
    f = np.arange(k)[:, None]
    x = np.arange(k)[None, :]
    alpha = np.where(f == 0, np.sqrt(1.0 / k), np.sqrt(2.0 / k))
    b = alpha * np.cos(np.pi * (2 * x + 1) * f / (2 * k))
    if eps:
        b = b + eps * np.eye(k)
    b.setflags(write=False)
    return b


def dct_basis(k: int) -> np.ndarray:
    """1-D orthonormal DCT-II matrix; row ``f`` is frequency ``f``."""
    _check_k(k)
    return _basis(k, _basis_perturbation)


@lru_cache(maxsize=None)
def zigzag_order(k: int) -> tuple[tuple[int, int], ...]:
    """JPEG zigzag traversal of a ``k x k`` coefficient grid as (row, col) pairs."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    order = []
    for s in range(2 * k - 1):
        rows = range(max(0, s - k + 1), min(s, k - 1) + 1)
        if s % 2 == 0:
            rows = reversed(rows)
        order.extend((i, s - i) for i in rows)
    return tuple(order)


def zigzag_indices(k: int) -> np.ndarray:
    """Flat (row-major) index of each zigzag position."""
    return np.array([i * k + j for i, j in zigzag_order(k)], dtype=np.intp)


def block_basis(k: int) -> np.ndarray:
    """``(k*k, k*k)`` matrix mapping a flattened block to zigzag-ordered coefficients."""
    b = dct_basis(k)
    return np.kron(b, b)[zigzag_indices(k)]


@dataclass(frozen=True)
class FreqTensor:
    """Frequency-domain activations, shape ``(n, c, k*k, h//k, w//k)``.

    Axis 2 runs over coefficients in zigzag order.
    """

    data: np.ndarray
    k: int

    def __post_init__(self):
        if self.data.ndim != 5 or self.data.shape[2] != self.k * self.k:
            raise ValueError(f"FreqTensor data must be (n, c, {self.k * self.k}, bh, bw), got {self.data.shape}")

    @property
    def shape(self):
        return self.data.shape

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def c(self) -> int:
        return self.data.shape[1]

    @property
    def blocks(self) -> int:
        return self.data.shape[3] * self.data.shape[4]

    @property
    def spatial_shape(self) -> tuple[int, int]:
        return self.data.shape[3] * self.k, self.data.shape[4] * self.k

    def replace(self, data: np.ndarray) -> "FreqTensor":
        return FreqTensor(data, self.k)


def _blocks_last(t: np.ndarray, k: int) -> np.ndarray:
    # (n, c, h, w) -> (n, c, k*k, bh, bw) with pixels in row-major block order
    n, c, h, w = t.shape
    v = t.reshape(n, c, h // k, k, w // k, k).transpose(0, 1, 3, 5, 2, 4)
    return v.reshape(n, c, k * k, h // k, w // k)


def _forward(t: np.ndarray, k: int, retained: np.ndarray) -> np.ndarray:
    n, c, h, w = t.shape
    check_macroblock(h, w, k)
    basis = block_basis(k).astype(t.dtype, copy=False)
    px = _blocks_last(t, k)
    out = np.zeros((n, c, k * k, h // k, w // k), dtype=t.dtype)
    for q in range(k * k):
        chans = np.flatnonzero(retained > q)
        if chans.size == 0:
            break
        sub = px[:, chans] if chans.size < c else px
        acc = basis[q, 0] * sub[:, :, 0]
        for p in range(1, k * k):
            acc += basis[q, p] * sub[:, :, p]
        out[:, chans, q] = acc
    return out


def dct_forward(t, k: int) -> FreqTensor:
    """Full macroblocked DCT of every channel."""
    _check_k(k)
    t = as_tensor(t)
    return FreqTensor(_forward(t, k, np.full(t.shape[1], k * k)), k)


def dct_truncated(t, k: int, retained) -> FreqTensor:
    """DCT producing only the first ``retained[c]`` zigzag coefficients of channel ``c``.

    Dropped coefficients are never computed and read back as exact zeros.
    """
    _check_k(k)
    t = as_tensor(t)
    m = np.asarray(retained, dtype=np.int64).reshape(-1)
    if m.size != t.shape[1]:
        raise ValueError(f"need one retained count per channel ({t.shape[1]}), got {m.size}")
    if m.min(initial=0) < 0 or m.max(initial=0) > k * k:
        raise ValueError(f"retained counts must lie in [0, {k * k}]")
    return FreqTensor(_forward(t, k, m), k)


def dct_inverse(f: FreqTensor) -> np.ndarray:
    k = f.k
    _check_k(k)
    y = f.data
    n, c, qn, bh, bw = y.shape
    basis = block_basis(k).astype(y.dtype, copy=False)
    px = np.empty((n, c, k * k, bh, bw), dtype=y.dtype)
    for p in range(k * k):
        acc = basis[0, p] * y[:, :, 0]
        for q in range(1, qn):
            acc += basis[q, p] * y[:, :, q]
        px[:, :, p] = acc
    return np.ascontiguousarray(
        px.reshape(n, c, k, k, bh, bw).transpose(0, 1, 4, 2, 5, 3).reshape(n, c, bh * k, bw * k)
    )


def transform_mac_count(c: int, h: int, w: int, k: int, retained=None) -> int:
    """MACs of a (possibly truncated) DCT or IDCT over ``c`` channels."""
    check_macroblock(h, w, k)
    if retained is None:
        return c * h * w * k * k
    m = np.asarray(retained, dtype=np.int64).reshape(-1)
    if m.size != c:
        raise ValueError(f"need {c} retained counts, got {m.size}")
    return int((h // k) * (w // k) * k * k * int(m.sum()))


def save_freq(path, f: FreqTensor) -> None:
    n, c, qn, bh, bw = f.data.shape
    write_fbt1(path, f.data.reshape(n, c * qn, bh, bw))
    meta = {"k": f.k, "zigzag": ZIGZAG_CONVENTION, "channels": c}
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=2))


def load_freq(path) -> FreqTensor:
    meta = json.loads(Path(str(path) + ".json").read_text())
    if meta.get("zigzag") != ZIGZAG_CONVENTION:
        raise ValueError(f"{path}: unsupported zigzag convention {meta.get('zigzag')!r}")
    k = int(meta["k"])
    raw = read_fbt1(path)
    n, ck, bh, bw = raw.shape
    return FreqTensor(raw.reshape(n, ck // (k * k), k * k, bh, bw), k)
