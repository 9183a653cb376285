"""Learnable frequency-contiguous masks (FCMask).

One scalar per channel in ``[0, 1]`` expands into ``num_coefs`` soft
coefficient masks through a clamped ramp of slope ``num_coefs``::

    coefmask_n = clip((fc - n / num_coefs) * num_coefs, 0, 1)

so at most one coefficient per channel sits strictly between 0 and 1 and the
kept coefficients always form a zigzag prefix.
"""

from __future__ import annotations

import numpy as np

from .masks import PruneMask


def coefmask(fc, num_coefs: int) -> np.ndarray:
    """Soft masks for every coefficient; ``fc`` may be a scalar or a vector of channels.

    >>> coefmask(0.9, 4).round(6).tolist()
    [1.0, 1.0, 1.0, 0.6]
    """
    fc = np.asarray(fc, dtype=np.float64)
    n = np.arange(num_coefs)
    ramp = (fc[..., None] * num_coefs) - n
    return np.clip(ramp, 0.0, 1.0)


def coefmask_grad(fc, num_coefs: int) -> np.ndarray:
    """d coefmask_n / d fc: ``num_coefs`` on the open ramp, zero when saturated or at a kink."""
    fc = np.asarray(fc, dtype=np.float64)
    ramp = (fc[..., None] * num_coefs) - np.arange(num_coefs)
    return np.where((ramp > 0.0) & (ramp < 1.0), float(num_coefs), 0.0)


def fcmask_regularizer(params, lam: float) -> float:
    """``lam * sum over mask vectors of mean |fc|``."""
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    return float(lam * sum(np.mean(np.abs(np.asarray(p, dtype=np.float64))) for p in params))


def fcmask_regularizer_grad(p, lam: float) -> np.ndarray:
    # the domain is [0, 1], where |fc| is the identity
    p = np.asarray(p, dtype=np.float64)
    return np.full(p.shape, lam / p.size)


def round_and_fix(fc, num_coefs: int) -> np.ndarray:
    """Hard prefix lengths after rounding every soft mask at 0.5."""
    fc = np.atleast_1d(np.asarray(fc, dtype=np.float64))
    return (coefmask(fc, num_coefs) >= 0.5).sum(axis=-1).astype(np.int64)


def round_and_fix_mask(fc, k: int) -> PruneMask:
    return PruneMask.band(round_and_fix(fc, k * k), k)


class FCMaskParam:
    """Per-channel FCMask vector for one side of one layer."""

    def __init__(self, channels: int, k: int, value: float = 1.0):
        self.k = k
        self.values = np.full(channels, float(value))

    @property
    def num_coefs(self) -> int:
        return self.k * self.k

    def soft(self) -> np.ndarray:
        return coefmask(self.values, self.num_coefs)

    def clamp(self) -> None:
        np.clip(self.values, 0.0, 1.0, out=self.values)

    def band(self) -> PruneMask:
        return round_and_fix_mask(self.values, self.k)

    def mean(self) -> float:
        return float(np.mean(self.values))
