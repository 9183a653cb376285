"""Regenerate the architecture configs shipped in src/freqprune/configs."""

from pathlib import Path

from freqprune.costmodel import ArchConfig, LayerConfig
from freqprune.nn.model import toy_separable  # noqa: E402

OUT = Path(__file__).resolve().parent.parent / "src" / "freqprune" / "configs"


def _conv(name, cin, cout, h, kernel=1, stride=1, groups=1, k=None, source=None, type=None):
    if type is None:
        type = "pointwise" if kernel == 1 else ("depthwise" if groups == cin == cout else "conv2d")
    return LayerConfig(name, type, cin, cout, h, h, kernel, stride, groups, k, source)


def resnext29_32x4d(k=4):
    layers = [_conv("stem", 3, 64, 32)]
    cin, h, width, card = 64, 32, 4, 32
    block_in = "stem"
    for stage, stride in enumerate((1, 2, 2), start=1):
        for i in range(3):
            s = stride if i == 0 else 1
            gw = card * width
            p = f"s{stage}b{i}"
            layers.append(_conv(f"{p}.reduce", cin, gw, h, k=k, source=block_in))
            layers.append(_conv(f"{p}.grouped", gw, gw, h, kernel=3, stride=s, groups=card))
            ho = h // s
            layers.append(_conv(f"{p}.expand", gw, 2 * gw, ho, k=k))
            last = f"{p}.expand"
            if s != 1 or cin != 2 * gw:
                layers.append(_conv(f"{p}.shortcut", cin, 2 * gw, h, stride=s, source=block_in))
                last = f"{p}.shortcut"
            cin, h, block_in = 2 * gw, ho, last
        width *= 2
    layers.append(LayerConfig("fc", "dense", cin, 10, source=block_in))
    return ArchConfig("resnext29_32x4d_cifar", (3, 32, 32), layers,
                      "ResNeXt-29 (cardinality 32, bottleneck width 4) for 32x32 inputs. 1x1 stem, "
                      "three stages of three blocks with strides 1/2/2, block output = 2x grouped width. "
                      "The two stride-1 pointwise convs of every block are wrapped with 4x4 transforms; "
                      "projection shortcuts and the stem stay spatial. Global pooling feeds the classifier.")


def mobilenetv2_cifar(k=4):
    cfg = [(1, 16, 1, 1), (6, 24, 2, 1), (6, 32, 3, 2), (6, 64, 4, 2), (6, 96, 3, 1), (6, 160, 3, 2), (6, 320, 1, 1)]
    layers = [_conv("stem", 3, 32, 32, kernel=3, type="conv2d")]
    cin, h, block_in, b = 32, 32, "stem", 0
    for t, c, n, stride in cfg:
        for i in range(n):
            s = stride if i == 0 else 1
            p, pref = t * cin, f"b{b}"
            layers.append(_conv(f"{pref}.expand", cin, p, h, k=k, source=block_in))
            layers.append(_conv(f"{pref}.depthwise", p, p, h, kernel=3, stride=s, groups=p))
            ho = h // s
            layers.append(_conv(f"{pref}.project", p, c, ho))
            last = f"{pref}.project"
            if s == 1 and cin != c:
                layers.append(_conv(f"{pref}.shortcut", cin, c, h, k=k, source=block_in))
                last = f"{pref}.shortcut"
            cin, h, block_in, b = c, ho, last, b + 1
    layers.append(_conv("head", 320, 1280, h, source=block_in))
    layers.append(LayerConfig("fc", "dense", 1280, 10))
    return ArchConfig("mobilenetv2_cifar", (3, 32, 32), layers,
                      "MobileNetV2 (width 1.0) for 32x32 inputs: 3x3 stride-1 stem, the standard "
                      "(t, c, n, s) table with the second stage at stride 1, expansion conv kept in the "
                      "t=1 block, 1x1 conv shortcuts where stride is 1 and channels change, 320->1280 "
                      "head at 4x4. Every pointwise conv that reads a block input (expand and shortcut) is "
                      "wrapped with 4x4 transforms; project and head convs stay spatial.")


def main():
    OUT.mkdir(exist_ok=True)
    resnext29_32x4d().save(OUT / "resnext29_32x4d_cifar.json")
    mobilenetv2_cifar().save(OUT / "mobilenetv2_cifar.json")
    for size, k in ((24, 3), (32, 4)):
        model = toy_separable(size=size, k=k, seed=0)
        model.to_arch(f"toy_separable_{size}").save(OUT / f"toy_separable_{size}.json")


if __name__ == "__main__":
    main()
