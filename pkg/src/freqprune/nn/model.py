"""Sequential models, the toy separable network and their cost-model view."""

from __future__ import annotations

import numpy as np

from ..costmodel import ArchConfig, LayerConfig
from ..dct import FreqTensor
from ..masks import MaskSet
from .layers import BatchNorm, Conv2d, Dense, FreqPointwise, Layer, PointwiseSpatial, build_layer


class Model:
    def __init__(self, layers: list[Layer], input_shape: tuple[int, int, int], dtype=np.float64):
        self.layers = list(layers)
        self.input_shape = tuple(int(v) for v in input_shape)
        self.dtype = np.dtype(dtype)
        names = [l.name for l in self.layers]
        if len(set(names)) != len(names):
            raise ValueError("layer names must be unique")
        self.shapes = self._propagate()

    def _propagate(self) -> list[tuple]:
        shape = self.input_shape
        shapes = []
        for layer in self.layers:
            shapes.append(shape)
            shape = layer.out_shape(shape)
        shapes.append(shape)
        return shapes

    @property
    def classes(self) -> int:
        return self.shapes[-1][0]

    def layer(self, name: str) -> Layer:
        for l in self.layers:
            if l.name == name:
                return l
        raise KeyError(name)

    def freq_layers(self) -> list[FreqPointwise]:
        return [l for l in self.layers if isinstance(l, FreqPointwise)]

    def batchnorms(self) -> list[BatchNorm]:
        return [l for l in self.layers if isinstance(l, BatchNorm)]

    # -------------------------------------------------------------- passes

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[1:] != self.input_shape:
            raise ValueError(f"model expects inputs of shape (n, {', '.join(map(str, self.input_shape))}), got {x.shape}")
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, dlogits: np.ndarray) -> None:
        d = dlogits
        for layer in reversed(self.layers):
            d = layer.backward(d)

    def parameters(self, group: str | None = None):
        """Yield ``(layer, param name)`` pairs, optionally restricted to one update group."""
        for layer in self.layers:
            for pname in layer.params:
                if group is None or layer.update_groups[pname] == group:
                    yield layer, pname

    def fcmask_vectors(self) -> list[np.ndarray]:
        return [v for l in self.freq_layers() for v in (l.params["fc_in"], l.params["fc_out"])]

    def set_mask_mode(self, mode: str) -> None:
        for l in self.freq_layers():
            l.set_mode(mode)

    def freeze_batchnorm(self, frozen: bool) -> None:
        for bn in self.batchnorms():
            bn.frozen = frozen

    def fix_bands(self) -> MaskSet:
        ms = MaskSet()
        for l in self.freq_layers():
            mi, mo = l.fix_bands()
            ms.set(l.name, "input", mi)
            ms.set(l.name, "output", mo)
        return ms

    def band_masks(self) -> MaskSet:
        ms = MaskSet()
        for l in self.freq_layers():
            mi, mo = l.band_masks()
            ms.set(l.name, "input", mi)
            ms.set(l.name, "output", mo)
        return ms

    def load_masks(self, masks: MaskSet) -> None:
        """Install hard masks from a mask file and switch those layers to band mode.

        Band masks set the prefix lengths; other strategies are applied as
        exact coefficient matrices, with the band set to the enclosing prefix.
        """
        from ..masks import band_lengths

        for l in self.freq_layers():
            lm = masks.get(l.name)
            if lm is None:
                continue
            for side, c in (("input", l.c_in), ("output", l.c_out)):
                m = getattr(lm, side)
                hard = None
                if m is None:
                    band = np.full(c, l.q, dtype=np.int64)
                else:
                    if (m.c, m.k) != (c, l.k):
                        raise ValueError(f"mask for {l.name}:{side} is c={m.c}, k={m.k}; layer has c={c}, k={l.k}")
                    band = band_lengths(m, c, l.k).copy()
                    if m.strategy != "band":
                        hard = m.matrix()
                setattr(l, "band_in" if side == "input" else "band_out", band)
                setattr(l, "hard_in" if side == "input" else "hard_out", hard)
            l.mode = "band"

    def frequency_inputs(self, batch: np.ndarray, layers=None):
        """Yield ``(name, FreqTensor)`` for the input of every wrapped layer and
        ``(name + ":out", FreqTensor)`` for its masked output coefficients."""
        x = np.asarray(batch, dtype=self.dtype)
        wanted = None if layers is None else set(layers)
        for layer in self.layers:
            if isinstance(layer, FreqPointwise) and (wanted is None or layer.name in wanted):
                f_in, f_out = layer.coefficients(x)
                yield layer.name, FreqTensor(f_in, layer.k)
                yield f"{layer.name}:out", FreqTensor(f_out, layer.k)
            x = layer.forward(x, False)

    # ------------------------------------------------------------ description

    def spec(self) -> dict:
        return {"input": list(self.input_shape), "layers": [l.spec() for l in self.layers]}

    @classmethod
    def from_spec(cls, spec: dict, seed: int = 0, dtype=np.float64) -> "Model":
        rng = np.random.default_rng(seed)
        return cls([build_layer(s, rng, dtype) for s in spec["layers"]], tuple(spec["input"]), dtype)

    def to_arch(self, name: str = "model") -> ArchConfig:
        """Cost-model description of the MAC-bearing layers, with the model spec attached."""
        out = []
        for layer, shape in zip(self.layers, self.shapes):
            if isinstance(layer, Conv2d):
                dw = layer.groups == layer.c_in == layer.c_out
                out.append(LayerConfig(layer.name, "depthwise" if dw else "conv2d", layer.c_in, layer.c_out,
                                       shape[1], shape[2], layer.kernel, layer.stride, layer.groups))
            elif isinstance(layer, FreqPointwise):
                out.append(LayerConfig(layer.name, "pointwise", layer.c_in, layer.c_out, shape[1], shape[2],
                                       k=layer.k))
            elif isinstance(layer, PointwiseSpatial):
                out.append(LayerConfig(layer.name, "pointwise", layer.c_in, layer.c_out, shape[1], shape[2]))
            elif isinstance(layer, Dense):
                out.append(LayerConfig(layer.name, "dense", layer.c_in, layer.c_out))
        return ArchConfig(name, self.input_shape, out, "sequential trainable model", model=self.spec())

    def wrapped_reduction(self, masks: MaskSet | None = None) -> float:
        """MAC reduction over the wrapped layers, transforms included, for hard band masks."""
        from ..costmodel import network_macs

        arch = self.to_arch()
        rep = network_macs(arch, masks if masks is not None else self.band_masks())
        return rep.wrapped_reduction({l.name for l in self.freq_layers()})

    def projected_masks(self) -> MaskSet:
        """Band masks the current FCMasks would round to."""
        from ..fcmask import round_and_fix_mask

        ms = MaskSet()
        for l in self.freq_layers():
            ms.set(l.name, "input", round_and_fix_mask(l.params["fc_in"], l.k))
            ms.set(l.name, "output", round_and_fix_mask(l.params["fc_out"], l.k))
        return ms


DEFAULT_BLOCKS = ((4, 16, 1), (4, 24, 2), (4, 24, 1), (4, 32, 2))


def toy_separable(size: int = 24, k: int = 3, classes: int = 3, stem: int = 16, blocks=DEFAULT_BLOCKS,
                  seed: int = 0, dtype=np.float64) -> Model:
    """Stem conv plus inverted-residual-style blocks without skips.

    Each block is pointwise expand -> depthwise 3x3 (carrying the stride) ->
    pointwise project; both pointwise convs are frequency-wrapped.
    """
    specs = [
        {"type": "conv2d", "name": "stem", "c_in": 3, "c_out": stem, "kernel": 3, "stride": 1, "groups": 1},
        {"type": "batchnorm", "name": "stem.bn", "c": stem},
        {"type": "relu6", "name": "stem.act"},
    ]
    c = stem
    for i, (t, c_out, stride) in enumerate(blocks):
        p, e = f"b{i}", c * t
        specs += [
            {"type": "freq_pointwise", "name": f"{p}.expand", "c_in": c, "c_out": e, "k": k},
            {"type": "batchnorm", "name": f"{p}.expand.bn", "c": e},
            {"type": "relu6", "name": f"{p}.expand.act"},
            {"type": "conv2d", "name": f"{p}.dw", "c_in": e, "c_out": e, "kernel": 3, "stride": stride, "groups": e},
            {"type": "batchnorm", "name": f"{p}.dw.bn", "c": e},
            {"type": "relu6", "name": f"{p}.dw.act"},
            {"type": "freq_pointwise", "name": f"{p}.project", "c_in": e, "c_out": c_out, "k": k},
            {"type": "batchnorm", "name": f"{p}.project.bn", "c": c_out},
        ]
        c = c_out
    specs += [{"type": "gap", "name": "pool"}, {"type": "dense", "name": "fc", "c_in": c, "c_out": classes}]
    return Model.from_spec({"input": [3, size, size], "layers": specs}, seed=seed, dtype=dtype)


def model_from_arch(arch: ArchConfig, seed: int = 0, dtype=np.float64) -> Model:
    if not arch.model:
        raise ValueError(f"architecture {arch.name!r} has no trainable model description")
    return Model.from_spec(arch.model, seed=seed, dtype=dtype)

