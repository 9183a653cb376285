"""Wall-clock comparison of a spatial 1x1 conv and its banded frequency-domain form."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .bandexec import BandedPointwise, plan_bands
from .masks import LayerMask, uniform_band
from .pointwise import PointwiseLayer, conv1x1_spatial, freq_wrapped, pointwise_macs


@dataclass
class BenchResult:
    c_in: int
    c_out: int
    h: int
    w: int
    k: int
    level: float
    reps: int
    warmup: int
    threads: int
    dtype: str
    spatial_median_s: float
    freq_median_s: float
    speedup: float  # spatial time / frequency time
    mac_speedup: float  # spatial MACs / (DCT + banded + IDCT MACs)
    spatial_macs: int
    freq_macs: int
    max_abs_error: float

    def to_json(self) -> dict:
        return asdict(self)

    def summary(self) -> str:
        return (f"c_in={self.c_in} c_out={self.c_out} {self.h}x{self.w} k={self.k} level={self.level:g} "
                f"({self.threads} thread{'s' if self.threads != 1 else ''}, median of {self.reps})\n"
                f"  spatial   {self.spatial_median_s * 1e3:9.3f} ms  {self.spatial_macs:>14,} MACs\n"
                f"  frequency {self.freq_median_s * 1e3:9.3f} ms  {self.freq_macs:>14,} MACs\n"
                f"  measured speedup {self.speedup:.3f}x   MAC-predicted {self.mac_speedup:.3f}x")


def _reference(x, layer: PointwiseLayer, masks: LayerMask, k: int) -> np.ndarray:
    # zero-pad to whole macroblocks, run the plain masked wrapper, crop back
    n, c, h, w = x.shape
    ph, pw = -h % k, -w % k
    xp = np.pad(x, ((0, 0), (0, 0), (0, ph), (0, pw)))
    return freq_wrapped(xp, PointwiseLayer(layer.weight), masks, k)[:, :, :h, :w]


def run_bench(c_in: int = 512, c_out: int = 512, h: int = 28, w: int = 28, k: int = 3, level: float = 0.5,
              reps: int = 20, warmup: int = 3, threads: int = 1, seed: int = 0, dtype=np.float64,
              n: int = 1) -> BenchResult:
    """Median wall-clock of both paths under uniform band masks of the given level.

    Both sides drop ``floor(level * c * k*k)`` coefficients, spread evenly
    over channels.  Spatial sizes that ``k`` does not divide are zero-padded
    on the frequency path only.  Timings alternate between the two paths so
    that slow drifts affect both equally; warm-up calls are not timed.
    """
    if min(c_in, c_out, h, w, k, reps, n) < 1 or warmup < 0:
        raise ValueError("dimensions, k and reps must be >= 1; warmup must be >= 0")
    dtype = np.dtype(dtype)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, c_in, h, w)).astype(dtype)
    layer = PointwiseLayer((rng.standard_normal((c_out, c_in)) / np.sqrt(c_in)).astype(dtype))
    masks = LayerMask(uniform_band(c_in, k, level), uniform_band(c_out, k, level))
    plan = plan_bands(masks.input, masks.output, h=h, w=w, n=n)
    fast = BandedPointwise(layer, plan, h, w, n=n, dtype=dtype)

    err = float(np.max(np.abs(fast(x) - _reference(x.astype(np.float64), layer, masks, k)), initial=0.0))
    macs = fast.macs()
    freq_macs = macs["dct"] + macs["pointwise"] + macs["idct"]
    spatial_macs = pointwise_macs(c_in, c_out, h, w, n)

    t_sp, t_fr = [], []
    with threadpool_limits(limits=threads):
        for _ in range(warmup):
            conv1x1_spatial(x, layer)
            fast(x)
        for _ in range(reps):
            t0 = time.perf_counter()
            conv1x1_spatial(x, layer)
            t1 = time.perf_counter()
            fast(x)
            t2 = time.perf_counter()
            t_sp.append(t1 - t0)
            t_fr.append(t2 - t1)
    sp, fr = float(np.median(t_sp)), float(np.median(t_fr))
    return BenchResult(c_in, c_out, h, w, k, float(level), reps, warmup, threads, dtype.name, sp, fr,
                       sp / fr, spatial_macs / freq_macs if freq_macs else float("inf"),
                       spatial_macs, freq_macs, err)
