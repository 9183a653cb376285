import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from freqprune.dct import dct_forward
from freqprune.masks import (LayerMask, MaskSet, Profile, ProfileAccumulator, PruneMask, apply_mask, band_from_chan_coef,
                             band_lengths, contiguity_fraction, from_matrix, make_mask, mask_matrix, uniform_band)

bool_matrices = st.integers(1, 3).flatmap(
    lambda k: st.tuples(st.just(k), st.lists(st.lists(st.booleans(), min_size=k * k, max_size=k * k),
                                             min_size=1, max_size=8)))


def test_contiguity_fraction_hand_built():
    mat = np.array([
        [1, 1, 1, 0],  # prefix
        [0, 0, 0, 0],  # empty prefix
        [1, 0, 1, 0],  # hole
        [0, 1, 1, 1],  # missing DC
        [1, 1, 1, 1],  # full
    ], dtype=bool)
    assert contiguity_fraction(mat) == 3 / 5
    assert contiguity_fraction(mat[:2]) == 1.0
    assert contiguity_fraction(mat[2:4]) == 0.0
    assert contiguity_fraction(PruneMask.band([0, 2, 4], 2)) == 1.0


@given(bool_matrices)
def test_band_from_chan_coef_never_adds(case):
    k, rows = case
    mat = np.array(rows, dtype=bool)
    band = band_from_chan_coef(PruneMask("chan-coef", len(rows), k, mat))
    bm = band.matrix()
    assert not np.any(bm & ~mat)
    assert band.retained <= int(mat.sum())
    assert contiguity_fraction(bm) == 1.0
    # prefix rows are kept exactly
    prefix = ~np.any(~mat[:, :-1] & mat[:, 1:], axis=1)
    assert np.array_equal(bm[prefix], mat[prefix])


@given(bool_matrices)
def test_matrix_roundtrip_through_chan_coef(case):
    k, rows = case
    mat = np.array(rows, dtype=bool)
    assert np.array_equal(from_matrix(mat, "chan-coef", k).matrix(), mat)


def test_from_matrix_exact_encodings():
    mat = np.array([[1, 1, 0, 0], [0, 0, 0, 0], [1, 1, 0, 0]], dtype=bool)
    cm = from_matrix(np.array([[1] * 4, [0] * 4, [1] * 4], dtype=bool), "channel", 2)
    assert cm.payload == (0, 2)
    assert from_matrix(np.array([[1, 0, 0, 1]] * 2, dtype=bool), "coef", 2).payload == (0, 3)
    with pytest.raises(ValueError):
        from_matrix(mat, "channel", 2)
    with pytest.raises(ValueError):
        from_matrix(mat, "coef", 2)
    assert from_matrix(mat, "band", 2).payload.tolist() == [2, 0, 2]
    with pytest.raises(ValueError):
        from_matrix(np.array([[1, 0, 1, 0]], dtype=bool), "band", 2)


def test_prune_mask_validation():
    with pytest.raises(ValueError):
        PruneMask("bogus", 2, 2, [])
    with pytest.raises(ValueError):
        PruneMask.band([5], 2)
    with pytest.raises(ValueError):
        PruneMask("channel", 2, 2, [2])
    with pytest.raises(ValueError):
        PruneMask("coef", 2, 2, [1, 1])
    with pytest.raises(ValueError):
        PruneMask("chan-coef", 2, 2, np.ones((2, 3)))


def test_band_lengths_enclosing_prefix():
    mat = np.array([[1, 0, 1, 0], [0, 0, 0, 0], [0, 0, 0, 1]], dtype=bool)
    assert band_lengths(mat, 3, 2).tolist() == [3, 0, 4]
    assert band_lengths(PruneMask.band([1, 2, 3], 2), 3, 2).tolist() == [1, 2, 3]


@given(st.integers(1, 12), st.integers(1, 4), st.floats(0, 1))
def test_make_mask_drops_exact_count(c, k, rho):
    imp = np.random.default_rng(c * 31 + k).random((c, k * k))
    q = k * k
    cc = make_mask(imp, "chan-coef", rho)
    assert cc.retained == c * q - int(np.floor(rho * c * q + 1e-9))
    ch = make_mask(imp, "channel", rho)
    assert len(ch.payload) == c - int(np.floor(rho * c + 1e-9))
    co = make_mask(imp, "coef", rho)
    assert len(co.payload) == q - int(np.floor(rho * q + 1e-9))
    band = make_mask(imp, "band", rho)
    assert band.strategy == "band" and band.retained <= cc.retained
    assert not np.any(band.matrix() & ~cc.matrix())


def test_make_mask_drops_least_important_with_stable_ties():
    imp = np.array([[3.0, 1.0, 1.0, 0.5]])
    m = make_mask(imp, "chan-coef", 0.5)
    assert m.matrix().tolist() == [[True, False, True, False]]


@given(st.integers(1, 40), st.integers(1, 4), st.floats(0, 1))
def test_uniform_band_spreads_evenly(c, k, rho):
    m = uniform_band(c, k, rho)
    drop = int(np.floor(rho * c * k * k + 1e-9))
    assert m.retained == c * k * k - drop
    assert m.payload.max() - m.payload.min() <= 1


def test_apply_mask_zeroes_pruned(rng):
    f = dct_forward(rng.standard_normal((1, 2, 4, 4)), 2)
    g = apply_mask(f, PruneMask("coef", 2, 2, [0, 3]))
    assert not np.any(g.data[:, :, 1:3]) and np.array_equal(g.data[:, :, 0], f.data[:, :, 0])


def test_mask_matrix_checks_shape():
    with pytest.raises(ValueError):
        mask_matrix(PruneMask.band([1, 1], 2), 3, 2)
    with pytest.raises(ValueError):
        mask_matrix(np.ones((2, 3)), 2, 2)


def test_maskset_json_roundtrip(tmp_path):
    ms = MaskSet()
    ms.set("a", "input", PruneMask.band([1, 4, 0], 2))
    ms.set("a", "output", PruneMask("chan-coef", 2, 2, np.eye(2, 4, dtype=bool)))
    ms.set("b", "input", PruneMask("channel", 3, 2, [1]))
    ms.save(tmp_path / "m.json")
    back = MaskSet.load(tmp_path / "m.json")
    for name in ("a", "b"):
        for side in ("input", "output"):
            x, y = getattr(ms.get(name), side), getattr(back.get(name), side)
            assert (x is None and y is None) or np.array_equal(x.matrix(), y.matrix())
    d = json.loads((tmp_path / "m.json").read_text())
    assert d["masks"][0]["permutation"] == [1, 0, 2]
    with pytest.raises(ValueError):
        MaskSet.set(ms, "a", "middle", PruneMask.band([1], 2))
    with pytest.raises(ValueError):
        MaskSet.from_json({"format": "other"})


def test_profile_is_block_average_of_abs_coefficients(rng):
    x = rng.standard_normal((3, 2, 4, 6))
    f = dct_forward(x, 2)
    acc = ProfileAccumulator()
    acc.add("l", f)
    prof = acc.result()
    want = np.zeros((2, 4))
    for c in range(2):
        for q in range(4):
            want[c, q] = np.mean(np.abs(f.data[:, c, q]))
    assert np.allclose(prof.layers["l"].importance, want, rtol=1e-13)
    assert prof.layers["l"].samples == 3


@given(st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_profile_shards_merge_to_single_pass(split, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((6, 2, 4, 4))
    whole = ProfileAccumulator()
    whole.add("l", dct_forward(x, 2))
    a, b = ProfileAccumulator(), ProfileAccumulator()
    a.add("l", dct_forward(x[:split], 2))
    b.add("l", dct_forward(x[split:], 2))
    a.merge(b)
    assert np.allclose(a.result().layers["l"].importance, whole.result().layers["l"].importance, rtol=1e-12)


def test_profile_json_roundtrip(tmp_path, rng):
    acc = ProfileAccumulator()
    acc.add("l", dct_forward(rng.standard_normal((1, 2, 4, 4)), 2))
    p = acc.result()
    p.save(tmp_path / "p.json")
    q = Profile.load(tmp_path / "p.json")
    assert np.array_equal(q.layers["l"].importance, p.layers["l"].importance)
    with pytest.raises(ValueError):
        Profile.from_json({"format": "x"})


def test_layer_mask_defaults():
    assert LayerMask().input is None and LayerMask().output is None
