"""Dense per-frequency-band execution of pruned pointwise convolutions.

With band masks on both sides, coefficient ``q`` is nonzero only for the
input channels with ``m_in > q`` and is only needed for the output channels
with ``m_out > q``.  Sorting channels by descending prefix length turns both
sets into leading ranges, so each band is a dense
``(a_out(q) x a_in(q)) @ (a_in(q) x positions)`` product.  Consecutive bands
with identical channel counts are fused into one wider product.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .dct import FreqTensor, block_basis
from .masks import PruneMask
from .pointwise import PointwiseLayer


@dataclass(frozen=True)
class BandGroup:
    q_lo: int
    q_hi: int
    a_in: int
    a_out: int


@dataclass(frozen=True)
class BandPlan:
    k: int
    m_in: np.ndarray
    m_out: np.ndarray
    perm_in: np.ndarray
    perm_out: np.ndarray
    a_in: np.ndarray
    a_out: np.ndarray
    blocks: int | None = None  # macroblock positions per image
    n: int = 1
    groups: tuple[BandGroup, ...] = field(default=())

    @property
    def c_in(self) -> int:
        return self.m_in.size

    @property
    def c_out(self) -> int:
        return self.m_out.size

    def to_json(self) -> dict:
        d = {
            "k": self.k,
            "perm_in": self.perm_in.tolist(),
            "perm_out": self.perm_out.tolist(),
            "a_in": self.a_in.tolist(),
            "a_out": self.a_out.tolist(),
            "blocks": self.blocks,
            "n": self.n,
        }
        if self.blocks is not None:
            d["macs"] = banded_macs(self)
        return d

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)


def _prefix_lengths(mask: PruneMask | None, c: int | None, k: int, side: str) -> np.ndarray:
    if mask is None:
        if c is None:
            raise ValueError(f"{side} channel count is required when no {side} mask is given")
        return np.full(c, k * k, dtype=np.int64)
    if mask.strategy != "band":
        raise ValueError(f"{side} mask must be a band mask, got {mask.strategy!r}")
    if mask.k != k:
        raise ValueError(f"{side} mask has k={mask.k}, plan uses k={k}")
    if c is not None and mask.c != c:
        raise ValueError(f"{side} mask covers {mask.c} channels, expected {c}")
    return mask.payload.astype(np.int64)


def plan_bands(input_mask: PruneMask | None, output_mask: PruneMask | None, *, k: int | None = None,
               c_in: int | None = None, c_out: int | None = None, h: int | None = None,
               w: int | None = None, n: int = 1) -> BandPlan:
    """Channel orders and per-coefficient active channel counts for two band masks.

    A missing input mask means the producer is not frequency-wrapped, so every
    input channel is treated as fully populated.
    """
    ks = {m.k for m in (input_mask, output_mask) if m is not None}
    if k is not None:
        ks.add(k)
    if len(ks) != 1:
        raise ValueError(f"masks disagree on macroblock size: {sorted(ks)}")
    k = ks.pop()
    m_in = _prefix_lengths(input_mask, c_in, k, "input")
    m_out = _prefix_lengths(output_mask, c_out, k, "output")
    q = np.arange(k * k)
    a_in = (m_in[None, :] > q[:, None]).sum(axis=1)
    a_out = (m_out[None, :] > q[:, None]).sum(axis=1)
    groups = []
    lo = 0
    for hi in range(1, k * k + 1):
        if hi == k * k or (a_in[hi], a_out[hi]) != (a_in[lo], a_out[lo]):
            groups.append(BandGroup(lo, hi, int(a_in[lo]), int(a_out[lo])))
            lo = hi
    blocks = None
    if h is not None and w is not None:
        blocks = -(-h // k) * -(-w // k)
    return BandPlan(
        k=k, m_in=m_in, m_out=m_out,
        perm_in=np.argsort(-m_in, kind="stable"),
        perm_out=np.argsort(-m_out, kind="stable"),
        a_in=a_in, a_out=a_out, blocks=blocks, n=n, groups=tuple(groups),
    )


def banded_macs(plan: BandPlan) -> int:
    if plan.blocks is None:
        raise ValueError("plan has no spatial size; build it with h and w")
    return int(np.dot(plan.a_in, plan.a_out)) * plan.blocks * plan.n


def transform_macs(plan: BandPlan) -> tuple[int, int]:
    """(truncated DCT, truncated IDCT) MACs for the plan's masks."""
    if plan.blocks is None:
        raise ValueError("plan has no spatial size; build it with h and w")
    per = plan.blocks * plan.n * plan.k * plan.k
    return int(plan.m_in.sum()) * per, int(plan.m_out.sum()) * per


def execute_banded(f: FreqTensor, layer: PointwiseLayer, plan: BandPlan, *, check: bool = True,
                   trace: list | None = None) -> FreqTensor:
    """Run the pointwise layer band by band on dense, permuted channel ranges.

    ``trace`` (a list) receives one ``(q_lo, q_hi, in_rows, out_rows)`` tuple
    per product; every row range starts at zero, i.e. is contiguous.
    """
    if layer.bias is not None:
        raise ValueError("execute_banded takes a bias-free layer")
    if f.k != plan.k or f.c != plan.c_in or layer.c_in != plan.c_in or layer.c_out != plan.c_out:
        raise ValueError("tensor, layer and plan disagree on channels or macroblock size")
    if plan.blocks is not None and (f.blocks != plan.blocks or f.n != plan.n):
        raise ValueError(f"plan expects {plan.n} x {plan.blocks} blocks, tensor has {f.n} x {f.blocks}")
    n, c_in, qn, bh, bw = f.data.shape
    if check:
        beyond = np.arange(qn)[None, :] >= plan.m_in[:, None]
        if np.any(f.data[:, beyond]):
            raise ValueError("input has nonzero coefficients outside the plan's input bands")
    cols = n * bh * bw
    x = np.ascontiguousarray(f.data[:, plan.perm_in].transpose(1, 2, 0, 3, 4)).reshape(c_in, qn, cols)
    wp = layer.weight.astype(f.data.dtype)[np.ix_(plan.perm_out, plan.perm_in)]
    y = np.zeros((plan.c_out, qn, cols), dtype=f.data.dtype)
    for g in plan.groups:
        if g.a_in == 0 or g.a_out == 0:
            continue
        nq = g.q_hi - g.q_lo
        src = x[:g.a_in, g.q_lo:g.q_hi].reshape(g.a_in, nq * cols)
        y[:g.a_out, g.q_lo:g.q_hi] = (wp[:g.a_out, :g.a_in] @ src).reshape(g.a_out, nq, cols)
        if trace is not None:
            trace.append((g.q_lo, g.q_hi, (0, g.a_in), (0, g.a_out)))
    out = np.empty((n, plan.c_out, qn, bh, bw), dtype=f.data.dtype)
    out[:, plan.perm_out] = y.reshape(plan.c_out, qn, n, bh, bw).transpose(2, 0, 1, 3, 4)
    return f.replace(out)


class BandedPointwise:
    """Spatial-in, spatial-out pruned pointwise layer with preallocated buffers.

    A compiled pass gathers each input channel (in plan order) and produces
    only its retained coefficients; the band products run as dense BLAS
    calls writing straight into the output coefficient buffer; a second
    compiled pass applies the truncated IDCT and scatters channels back
    through the inverse output permutation.  Ragged spatial edges are
    zero-padded on the way in and cropped on the way out.
    """

    def __init__(self, layer: PointwiseLayer, plan: BandPlan, h: int, w: int, n: int = 1, dtype=np.float64):
        from ._kernels import layout_kernels

        if layer.bias is not None:
            raise ValueError("BandedPointwise takes a bias-free layer")
        if layer.c_in != plan.c_in or layer.c_out != plan.c_out:
            raise ValueError("layer and plan disagree on channel counts")
        k = plan.k
        self.plan, self.h, self.w, self.n = plan, h, w, n
        self.dtype = np.dtype(dtype)
        self.blocks = -(-h // k) * -(-w // k)
        self.cols = n * self.blocks
        qn = k * k
        self.basis = np.ascontiguousarray(block_basis(k).astype(self.dtype))
        self.weight = np.ascontiguousarray(layer.weight.astype(self.dtype)[np.ix_(plan.perm_out, plan.perm_in)])
        self.perm_in = plan.perm_in.astype(np.int64)
        self.perm_out = plan.perm_out.astype(np.int64)
        self.m_in = plan.m_in[plan.perm_in].astype(np.int64)
        self.m_out = plan.m_out[plan.perm_out].astype(np.int64)
        self._dct, self._idct = layout_kernels(k)
        # coefficients beyond a channel's prefix are never read, so no zero fill
        self.y = np.empty((plan.c_in, qn, self.cols), self.dtype)
        self.z = np.empty((plan.c_out, qn, self.cols), self.dtype)
        self.out = np.empty((n, plan.c_out, h, w), self.dtype)

    def macs(self) -> dict:
        p = self.plan
        per = self.cols * p.k * p.k
        return {
            "dct": int(p.m_in.sum()) * per,
            "pointwise": int(np.dot(p.a_in, p.a_out)) * self.cols,
            "idct": int(p.m_out.sum()) * per,
        }

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if x.shape != (self.n, self.plan.c_in, self.h, self.w):
            raise ValueError(f"expected input {(self.n, self.plan.c_in, self.h, self.w)}, got {x.shape}")
        x = np.ascontiguousarray(x, dtype=self.dtype)
        cols = self.cols
        self._dct(x, self.perm_in, self.m_in, self.basis, self.y)
        for g in self.plan.groups:
            if g.a_out == 0:
                continue
            nq = g.q_hi - g.q_lo
            dst = self.z[:g.a_out, g.q_lo:g.q_hi].reshape(g.a_out, nq * cols)
            if g.a_in == 0:
                dst[...] = 0.0
                continue
            src = self.y[:g.a_in, g.q_lo:g.q_hi].reshape(g.a_in, nq * cols)
            np.matmul(self.weight[:g.a_out, :g.a_in], src, out=dst)
        self._idct(self.z, self.perm_out, self.m_out, self.basis, self.out)
        return self.out
