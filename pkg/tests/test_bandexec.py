import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from freqprune.bandexec import BandedPointwise, banded_macs, execute_banded, plan_bands, transform_macs
from freqprune.costmodel import LayerConfig, layer_macs
from freqprune.dct import dct_forward, dct_truncated
from freqprune.masks import LayerMask, PruneMask, apply_mask, uniform_band
from freqprune.pointwise import PointwiseLayer, conv1x1_freq, freq_wrapped, pointwise_macs


def masked_reference(f, layer, mi, mo):
    return apply_mask(conv1x1_freq(apply_mask(f, mi), layer), mo).data


case = st.tuples(st.integers(1, 4), st.integers(1, 10), st.integers(1, 10), st.integers(1, 3), st.integers(1, 3),
                 st.integers(1, 2), st.integers(0, 2**32 - 1))


@given(case)
def test_banded_equals_masked_dense(c):
    k, c_in, c_out, bh, bw, n, seed = c
    rng = np.random.default_rng(seed)
    mi = PruneMask.band(rng.integers(0, k * k + 1, c_in), k)
    mo = PruneMask.band(rng.integers(0, k * k + 1, c_out), k)
    layer = PointwiseLayer(rng.standard_normal((c_out, c_in)))
    f = dct_truncated(rng.standard_normal((n, c_in, bh * k, bw * k)), k, mi.payload)
    plan = plan_bands(mi, mo, h=bh * k, w=bw * k, n=n)
    trace = []
    got = execute_banded(f, layer, plan, trace=trace)
    assert np.max(np.abs(got.data - masked_reference(f, layer, mi, mo)), initial=0.0) < 1e-10
    # every sub-GEMM reads and writes a leading, contiguous channel range
    for q_lo, q_hi, (a0, a1), (b0, b1) in trace:
        assert a0 == 0 and b0 == 0
        assert a1 == plan.a_in[q_lo] and b1 == plan.a_out[q_lo]
    main, _, _ = layer_macs(LayerConfig("l", "pointwise", c_in, c_out, bh * k, bw * k, k=k), LayerMask(mi, mo))
    assert banded_macs(plan) == main * n <= pointwise_macs(c_in, c_out, bh * k, bw * k, n)


def test_plan_counts_and_groups():
    plan = plan_bands(PruneMask.band([1, 4, 2], 2), PruneMask.band([4, 0], 2), h=4, w=4)
    assert plan.perm_in.tolist() == [1, 2, 0]
    assert plan.a_in.tolist() == [3, 2, 1, 1] and plan.a_out.tolist() == [1, 1, 1, 1]
    assert [(g.q_lo, g.q_hi, g.a_in, g.a_out) for g in plan.groups] == [(0, 1, 3, 1), (1, 2, 2, 1), (2, 4, 1, 1)]
    assert banded_macs(plan) == (3 + 2 + 1 + 1) * 4
    assert transform_macs(plan) == (7 * 4 * 4, 4 * 4 * 4)
    d = plan.to_json()
    assert d["macs"] == banded_macs(plan) and json.dumps(d)


def test_plan_stable_order_on_ties():
    plan = plan_bands(PruneMask.band([2, 3, 2, 3], 2), None, c_out=1)
    assert plan.perm_in.tolist() == [1, 3, 0, 2]


def test_missing_masks_mean_full():
    plan = plan_bands(None, None, k=3, c_in=2, c_out=5, h=6, w=6)
    assert banded_macs(plan) == pointwise_macs(2, 5, 6, 6)
    assert len(plan.groups) == 1


def test_plan_errors():
    with pytest.raises(ValueError):
        plan_bands(PruneMask("coef", 2, 2, [0]), None, c_out=2)
    with pytest.raises(ValueError):
        plan_bands(PruneMask.band([1], 2), PruneMask.band([1], 3))
    with pytest.raises(ValueError):
        plan_bands(None, None, k=2, c_in=2)
    with pytest.raises(ValueError):
        banded_macs(plan_bands(None, None, k=2, c_in=2, c_out=2))


def test_execute_rejects_out_of_band_input(rng):
    f = dct_forward(rng.standard_normal((1, 2, 4, 4)), 2)
    plan = plan_bands(PruneMask.band([1, 1], 2), None, c_out=2, h=4, w=4)
    with pytest.raises(ValueError):
        execute_banded(f, PointwiseLayer(np.eye(2)), plan)
    execute_banded(f, PointwiseLayer(np.eye(2)), plan, check=False)


@pytest.mark.parametrize("h,w,k", [(6, 6, 3), (7, 5, 3), (28, 28, 3), (9, 10, 4)])
@pytest.mark.parametrize("dtype", [np.float64, np.float32])
def test_fused_executor_matches_padded_reference(h, w, k, dtype, rng):
    c_in, c_out, n = 5, 4, 2
    mi = PruneMask.band(rng.integers(0, k * k + 1, c_in), k)
    mo = PruneMask.band(rng.integers(0, k * k + 1, c_out), k)
    layer = PointwiseLayer(rng.standard_normal((c_out, c_in)))
    x = rng.standard_normal((n, c_in, h, w))
    fast = BandedPointwise(layer, plan_bands(mi, mo, h=h, w=w, n=n), h, w, n=n, dtype=dtype)
    got = fast(x.astype(dtype))
    ph, pw = -h % k, -w % k
    ref = freq_wrapped(np.pad(x, ((0, 0), (0, 0), (0, ph), (0, pw))), layer, LayerMask(mi, mo), k)[:, :, :h, :w]
    tol = 1e-10 if dtype == np.float64 else 1e-4
    assert got.dtype == dtype and np.max(np.abs(got - ref)) < tol


def test_fused_executor_macs_and_shape_check(rng):
    plan = plan_bands(uniform_band(8, 3, 0.5), uniform_band(8, 3, 0.5), h=6, w=6)
    fast = BandedPointwise(PointwiseLayer(rng.standard_normal((8, 8))), plan, 6, 6)
    m = fast.macs()
    assert m["pointwise"] == banded_macs(plan)
    assert (m["dct"], m["idct"]) == transform_macs(plan)
    with pytest.raises(ValueError):
        fast(np.zeros((1, 8, 6, 7)))
