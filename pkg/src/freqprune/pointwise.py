"""Pointwise (1x1) convolution in the spatial and the frequency domain."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dct import FreqTensor, dct_inverse, dct_truncated
from .tensor import as_tensor


@dataclass
class PointwiseLayer:
    weight: np.ndarray  # (c_out, c_in)
    bias: np.ndarray | None = None
    k: int | None = None

    def __post_init__(self):
        self.weight = np.asarray(self.weight)
        if self.weight.ndim != 2 or min(self.weight.shape) < 1:
            raise ValueError(f"weight must be a (c_out, c_in) matrix, got {self.weight.shape}")
        if not np.all(np.isfinite(self.weight)):
            raise ValueError("weight contains non-finite values")
        if self.bias is not None:
            self.bias = np.asarray(self.bias).reshape(-1)
            if self.bias.size != self.c_out:
                raise ValueError(f"bias needs {self.c_out} entries, got {self.bias.size}")

    @property
    def c_out(self) -> int:
        return self.weight.shape[0]

    @property
    def c_in(self) -> int:
        return self.weight.shape[1]

    def without_bias(self) -> "PointwiseLayer":
        return PointwiseLayer(self.weight, None, self.k)


def pointwise_macs(c_in: int, c_out: int, h: int, w: int, n: int = 1) -> int:
    return n * c_in * h * w * c_out


def conv1x1_spatial(x, layer: PointwiseLayer) -> np.ndarray:
    x = as_tensor(x)
    if x.shape[1] != layer.c_in:
        raise ValueError(f"input has {x.shape[1]} channels, layer expects {layer.c_in}")
    w = layer.weight.astype(x.dtype, copy=False)
    out = np.einsum("oc,nchw->nohw", w, x, optimize=True)
    if layer.bias is not None:
        out += layer.bias.astype(x.dtype)[None, :, None, None]
    return out


def conv1x1_freq(f: FreqTensor, layer: PointwiseLayer, mask=None) -> FreqTensor:
    """Channel mixing applied independently to every coefficient and block.

    ``mask`` restricts the *output* coefficients: anything masked at
    ``(c_out, q)`` is forced to zero.  Soft masks (float matrices) multiply.
    """
    if f.c != layer.c_in:
        raise ValueError(f"input has {f.c} channels, layer expects {layer.c_in}")
    if layer.bias is not None:
        raise ValueError("conv1x1_freq takes a bias-free layer; freq_wrapped applies the bias on DC")
    w = layer.weight.astype(f.data.dtype, copy=False)
    out = np.einsum("oc,ncqij->noqij", w, f.data, optimize=True)
    if mask is not None:
        from .masks import mask_matrix

        mat = mask_matrix(mask, layer.c_out, f.k)
        if mat.dtype == bool:
            out[:, ~mat] = 0.0
        else:
            out *= mat.astype(out.dtype)[None, :, :, None, None]
    return f.replace(out)


def freq_wrapped(x, layer: PointwiseLayer, mask=None, k: int | None = None) -> np.ndarray:
    """DCT -> 1x1 conv -> IDCT, equal to ``conv1x1_spatial`` when nothing is pruned.

    ``mask`` is a :class:`~freqprune.masks.LayerMask` (or ``None`` for full
    retention).  The input DCT is truncated to the input band; the output
    mask zeroes coefficients before the IDCT.  A bias lands on the DC
    coefficient as ``bias * k``, the orthonormal DCT of a constant block.
    """
    x = as_tensor(x)
    k = k or layer.k
    if k is None:
        raise ValueError("macroblock size k is required")
    from .masks import PruneMask, apply_mask, band_lengths

    in_mask = out_mask = None
    if mask is not None:
        in_mask, out_mask = mask.input, mask.output
    if in_mask is None:
        retained = np.full(layer.c_in, k * k)
    else:
        retained = band_lengths(in_mask, layer.c_in, k)
    f = dct_truncated(x, k, retained)
    if in_mask is not None and not (isinstance(in_mask, PruneMask) and in_mask.strategy == "band"):
        f = apply_mask(f, in_mask)
    y = conv1x1_freq(f, layer.without_bias(), out_mask)
    if layer.bias is not None:
        y.data[:, :, 0] += (layer.bias.astype(x.dtype) * k)[None, :, None, None]
    return dct_inverse(y)
