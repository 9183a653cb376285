import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from freqprune.dct import (FreqTensor, block_basis, dct_basis, dct_forward, dct_inverse, dct_truncated, load_freq,
                           perturbed_basis, save_freq, transform_mac_count, zigzag_indices, zigzag_order)
from freqprune.tensor import DivisibilityError

JPEG_ZIGZAG_8 = [0, 1, 8, 16, 9, 2, 3, 10, 17, 24, 32, 25, 18, 11, 4, 5, 12, 19, 26, 33, 40, 48, 41, 34, 27, 20, 13,
                 6, 7, 14, 21, 28, 35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23, 30, 37, 44, 51, 58, 59, 52, 45,
                 38, 31, 39, 46, 53, 60, 61, 54, 47, 55, 62, 63]


def dct2_oracle(block):
    """Direct cosine-sum orthonormal 2-D DCT-II of one k x k block."""
    k = block.shape[0]
    out = np.zeros((k, k))
    for u in range(k):
        for v in range(k):
            au = math.sqrt((1 if u == 0 else 2) / k)
            av = math.sqrt((1 if v == 0 else 2) / k)
            s = 0.0
            for x in range(k):
                for y in range(k):
                    s += block[x, y] * math.cos((2 * x + 1) * u * math.pi / (2 * k)) * \
                        math.cos((2 * y + 1) * v * math.pi / (2 * k))
            out[u, v] = au * av * s
    return out


def test_zigzag_matches_jpeg_table():
    assert zigzag_indices(8).tolist() == JPEG_ZIGZAG_8


def test_zigzag_small_cases():
    assert zigzag_order(1) == ((0, 0),)
    assert zigzag_order(2) == ((0, 0), (0, 1), (1, 0), (1, 1))
    assert zigzag_order(3) == ((0, 0), (0, 1), (1, 0), (2, 0), (1, 1), (0, 2), (1, 2), (2, 1), (2, 2))


@pytest.mark.parametrize("k", range(1, 9))
def test_zigzag_is_a_permutation_sorted_by_diagonal(k):
    order = zigzag_order(k)
    assert sorted(order) == [(i, j) for i in range(k) for j in range(k)]
    diag = [i + j for i, j in order]
    assert diag == sorted(diag)


@pytest.mark.parametrize("k", range(1, 9))
def test_basis_orthonormal(k):
    b = block_basis(k)
    assert np.max(np.abs(b @ b.T - np.eye(k * k))) < 1e-12
    assert np.max(np.abs(dct_basis(k) @ dct_basis(k).T - np.eye(k))) < 1e-12


def test_basis_rejects_bad_k():
    with pytest.raises(ValueError):
        dct_basis(0)
    with pytest.raises(ValueError):
        dct_basis(9)


@pytest.mark.parametrize("k", [1, 2, 3, 4, 7, 8])
def test_forward_matches_cosine_oracle(k):
    rng = np.random.default_rng(k)
    x = rng.standard_normal((1, 2, 2 * k, k))
    f = dct_forward(x, k)
    assert f.data.shape == (1, 2, k * k, 2, 1)
    zz = zigzag_order(k)
    for c in range(2):
        for bi in range(2):
            ref = dct2_oracle(x[0, c, bi * k:(bi + 1) * k, :])
            got = f.data[0, c, :, bi, 0]
            want = np.array([ref[i, j] for i, j in zz])
            assert np.max(np.abs(got - want)) < 1e-12


def test_constant_block_lands_on_dc():
    k = 4
    f = dct_forward(np.full((1, 1, k, k), 2.5), k)
    assert f.data[0, 0, 0, 0, 0] == pytest.approx(2.5 * k)
    assert np.max(np.abs(f.data[0, 0, 1:])) < 1e-12


shapes = st.tuples(st.integers(1, 8), st.integers(1, 2), st.integers(1, 4), st.integers(1, 3), st.integers(1, 3))


@given(shapes, st.integers(0, 2**32 - 1))
def test_roundtrip_and_parseval(shape, seed):
    k, n, c, bh, bw = shape
    x = np.random.default_rng(seed).standard_normal((n, c, bh * k, bw * k))
    f = dct_forward(x, k)
    assert np.max(np.abs(dct_inverse(f) - x)) < 1e-12
    assert np.sum(f.data ** 2) == pytest.approx(np.sum(x ** 2), rel=1e-12)


@given(shapes, st.integers(0, 2**32 - 1))
def test_truncated_is_exact_prefix_of_full(shape, seed):
    k, n, c, bh, bw = shape
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, c, bh * k, bw * k))
    m = rng.integers(0, k * k + 1, size=c)
    full, part = dct_forward(x, k).data, dct_truncated(x, k, m).data
    for ch in range(c):
        assert np.array_equal(part[:, ch, :m[ch]], full[:, ch, :m[ch]])
        assert not np.any(part[:, ch, m[ch]:])
    assert transform_mac_count(c, bh * k, bw * k, k, m) == bh * bw * k * k * int(m.sum())


def test_truncated_validation():
    x = np.zeros((1, 2, 4, 4))
    with pytest.raises(ValueError):
        dct_truncated(x, 2, [1])
    with pytest.raises(ValueError):
        dct_truncated(x, 2, [1, 5])
    with pytest.raises(DivisibilityError):
        dct_forward(np.zeros((1, 1, 5, 4)), 2)


def test_transform_mac_count_full():
    assert transform_mac_count(64, 32, 32, 4) == 64 * 32 * 32 * 16


def test_float32_stays_float32():
    x = np.random.default_rng(0).standard_normal((1, 2, 6, 6)).astype(np.float32)
    f = dct_forward(x, 3)
    assert f.data.dtype == np.float32
    assert dct_inverse(f).dtype == np.float32
    assert np.max(np.abs(dct_inverse(f) - x)) < 1e-5


def test_perturbed_basis_hook_is_scoped():
    with perturbed_basis(1e-3):
        b = block_basis(4)
        assert np.max(np.abs(b @ b.T - np.eye(16))) > 1e-4
    b = block_basis(4)
    assert np.max(np.abs(b @ b.T - np.eye(16))) < 1e-12


def test_save_load_freq(tmp_path):
    f = dct_forward(np.random.default_rng(0).standard_normal((2, 3, 6, 9)), 3)
    save_freq(tmp_path / "f.fbt", f)
    g = load_freq(tmp_path / "f.fbt")
    assert isinstance(g, FreqTensor) and g.k == 3 and np.array_equal(g.data, f.data)
