import numpy as np
import pytest

from freqprune.costmodel import ArchConfig, network_macs, shipped_config
from freqprune.masks import MaskSet, PruneMask, contiguity_fraction, make_mask, profile_activations
from freqprune.nn.data import synthetic_blobs
from freqprune.nn.model import Model, model_from_arch, toy_separable


def test_toy_shapes_and_arch():
    m = toy_separable(24, 3)
    assert m.shapes[-1] == (3,)
    assert [l.name for l in m.freq_layers()][:2] == ["b0.expand", "b0.project"]
    arch = m.to_arch("toy")
    assert arch.wrapped_layers() and all(l.k == 3 for l in arch.wrapped_layers())
    assert network_macs(arch).baseline_total == 3_915_744


def test_shipped_toy_builds_same_model():
    arch = ArchConfig.load(shipped_config("toy_separable_24"))
    m = model_from_arch(arch, seed=0)
    assert m.spec() == toy_separable(24, 3).spec()
    with pytest.raises(ValueError):
        model_from_arch(ArchConfig.load(shipped_config("resnext29_32x4d_cifar")))


def test_forward_checks_input_shape():
    with pytest.raises(ValueError):
        toy_separable(24, 3).forward(np.zeros((1, 3, 16, 16)))
    with pytest.raises(ValueError):
        Model.from_spec({"input": [3, 8, 8], "layers": [{"type": "relu", "name": "a"}, {"type": "relu", "name": "a"}]})


def test_load_masks_band_and_general():
    m = toy_separable(24, 3)
    ms = MaskSet()
    ms.set("b0.expand", "input", PruneMask.band(np.arange(16) % 10, 3))
    cc = np.zeros((64, 9), dtype=bool)
    cc[:, [0, 2]] = True
    ms.set("b0.expand", "output", PruneMask("chan-coef", 64, 3, cc))
    m.load_masks(ms)
    layer = m.layer("b0.expand")
    assert layer.mode == "band" and layer.band_in.tolist() == (np.arange(16) % 10).tolist()
    m_in, m_out = layer.masks()
    assert np.array_equal(m_out.astype(bool), cc)
    eff = m.band_masks().get("b0.expand")
    assert eff.output.strategy == "chan-coef"
    bad = MaskSet()
    bad.set("b0.expand", "input", PruneMask.band([1] * 8, 3))
    with pytest.raises(ValueError):
        m.load_masks(bad)


def test_wrapped_reduction_full_masks_is_overhead_only():
    m = toy_separable(24, 3)
    arch = m.to_arch()
    rep = network_macs(arch)
    names = {l.name for l in m.freq_layers()}
    assert m.wrapped_reduction() == pytest.approx(rep.wrapped_reduction(names))
    assert m.wrapped_reduction() < 1


def test_profile_covers_both_sides_and_band_projection():
    m = toy_separable(24, 3)
    data, _ = synthetic_blobs(n_train=8, n_test=0)
    prof = profile_activations(m, data)
    for l in m.freq_layers():
        assert prof.layers[l.name].importance.shape == (l.c_in, 9)
        assert prof.layers[f"{l.name}:out"].importance.shape == (l.c_out, 9)
    cc = make_mask(prof.layers["b1.expand"].importance, "chan-coef", 0.5)
    band = make_mask(prof.layers["b1.expand"].importance, "band", 0.5)
    assert 0.0 <= contiguity_fraction(cc) <= 1.0
    assert band.retained <= cc.retained
