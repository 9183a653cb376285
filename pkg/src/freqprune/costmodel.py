"""Multiply-accumulate accounting for whole networks.

One MAC is one multiply plus one accumulate.  Bias adds, batch norm and
activations are free.  A pointwise layer with a macroblock size ``k`` is
frequency-wrapped: it pays a truncated DCT on its input and a truncated
IDCT on its output, and its channel mixing is charged per coefficient band.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .masks import LayerMask, MaskSet, PruneMask, mask_matrix

LAYER_TYPES = ("conv2d", "depthwise", "pointwise", "dense", "other")
REPORT_COLUMNS = ("layer", "baseline_macs", "pruned_1x1_macs", "dct_macs", "idct_macs", "ratio_1x1", "ratio_overall")


@dataclass
class LayerConfig:
    name: str
    type: str
    c_in: int
    c_out: int
    h: int = 1
    w: int = 1
    kernel: int = 1
    stride: int = 1
    groups: int = 1
    k: int | None = None
    source: str | None = None  # producer layer; defaults to the previous one
    mask: str | None = None  # layer name to look up in a MaskSet

    def __post_init__(self):
        if self.type not in LAYER_TYPES:
            raise ValueError(f"layer {self.name!r}: unknown type {self.type!r}")
        for f in ("c_in", "c_out", "h", "w", "kernel", "stride", "groups"):
            if int(getattr(self, f)) < 1:
                raise ValueError(f"layer {self.name!r}: {f} must be >= 1")
        if self.type == "depthwise" and self.groups != self.c_in:
            raise ValueError(f"layer {self.name!r}: depthwise needs groups == c_in")
        if self.c_in % self.groups or self.c_out % self.groups:
            raise ValueError(f"layer {self.name!r}: groups must divide both channel counts")
        if self.k is not None:
            if self.type != "pointwise":
                raise ValueError(f"layer {self.name!r}: only pointwise layers can be frequency-wrapped")
            if self.stride != 1:
                raise ValueError(f"layer {self.name!r}: frequency-wrapped layers must have stride 1")
            if self.h % self.k or self.w % self.k:
                raise ValueError(f"layer {self.name!r}: k={self.k} does not divide {self.h}x{self.w}")

    @property
    def wrapped(self) -> bool:
        return self.k is not None

    @property
    def out_hw(self) -> tuple[int, int]:
        if self.type == "dense":
            return 1, 1
        return -(-self.h // self.stride), -(-self.w // self.stride)


@dataclass
class ArchConfig:
    name: str
    input: tuple[int, int, int]
    layers: list[LayerConfig] = field(default_factory=list)
    notes: str = ""
    model: dict | None = None  # trainable layer list, when the network can be trained here

    def __post_init__(self):
        self.input = tuple(int(v) for v in self.input)
        self.validate()

    def validate(self) -> None:
        """Each layer's input must match its producer's output (or the network input)."""
        seen: dict[str, LayerConfig] = {}
        c, h, w = self.input
        prev = None
        for layer in self.layers:
            if layer.name in seen:
                raise ValueError(f"duplicate layer name {layer.name!r}")
            src = layer.source or prev
            if src is None or src == "input":
                shape = (c, h, w)
            elif src in seen:
                s = seen[src]
                shape = (s.c_out, *s.out_hw)
            else:
                raise ValueError(f"layer {layer.name!r}: unknown source {src!r}")
            want = (layer.c_in,) if layer.type == "dense" else (layer.c_in, layer.h, layer.w)
            if shape[: len(want)] != want:
                raise ValueError(f"layer {layer.name!r}: input {want} does not match producer output {shape}")
            seen[layer.name] = layer
            prev = layer.name

    def layer(self, name: str) -> LayerConfig:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)

    def wrapped_layers(self) -> list[LayerConfig]:
        return [layer for layer in self.layers if layer.wrapped]

    def with_transforms(self, k: int | None) -> "ArchConfig":
        """Same network with every currently wrapped layer switched to macroblock ``k`` (or unwrapped)."""
        layers = [LayerConfig(**{**asdict(l), "k": (k if l.wrapped else None)}) for l in self.layers]
        return ArchConfig(self.name, self.input, layers, self.notes, self.model)

    def to_json(self) -> dict:
        d = {
            "format": "freqprune-arch",
            "version": 1,
            "name": self.name,
            "notes": self.notes,
            "input": list(self.input),
            "layers": [{k: v for k, v in asdict(l).items() if v is not None} for l in self.layers],
        }
        if self.model is not None:
            d["model"] = self.model
        return d

    @classmethod
    def from_json(cls, d: dict) -> "ArchConfig":
        if d.get("format") != "freqprune-arch":
            raise ValueError("not a freqprune architecture file")
        try:
            layers = [LayerConfig(**e) for e in d["layers"]]
        except TypeError as exc:
            raise ValueError(f"bad layer entry: {exc}") from None
        return cls(d["name"], d["input"], layers, d.get("notes", ""), d.get("model"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))

    @classmethod
    def load(cls, path) -> "ArchConfig":
        return cls.from_json(json.loads(Path(path).read_text()))


def shipped_config(name: str) -> Path:
    """Path of an architecture config bundled with the package."""
    p = Path(__file__).parent / "configs" / f"{name}.json"
    if not p.exists():
        raise FileNotFoundError(f"no shipped config named {name!r}")
    return p


# ------------------------------------------------------------------ per layer


def _active_counts(mask, c: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    """(per-coefficient active channels, per-channel coefficients to compute)."""
    if isinstance(mask, PruneMask) and mask.strategy == "band":
        m = mask.payload
        return (m[None, :] > np.arange(k * k)[:, None]).sum(axis=1), m
    mat = mask_matrix(mask, c, k).astype(bool)
    return mat.sum(axis=0), mat.sum(axis=1)


def base_macs(layer: LayerConfig) -> int:
    """Spatial cost with no transforms: c_in*c_out*h_out*w_out*kernel^2/groups."""
    ho, wo = layer.out_hw
    if layer.type == "dense":
        return layer.c_in * layer.c_out
    return layer.c_in * layer.c_out * ho * wo * layer.kernel * layer.kernel // layer.groups


def layer_macs(layer: LayerConfig, mask: LayerMask | None = None) -> tuple[int, int, int]:
    """(main, DCT, IDCT) MACs.  Only wrapped layers have transform terms or accept masks."""
    if not layer.wrapped:
        if mask is not None and (mask.input is not None or mask.output is not None):
            raise ValueError(f"layer {layer.name!r} is not frequency-wrapped and cannot take a mask")
        return base_macs(layer), 0, 0
    k = layer.k
    p = (layer.h // k) * (layer.w // k)
    per_coef = p * k * k
    in_mask = mask.input if mask is not None else None
    out_mask = mask.output if mask is not None else None
    a_in, m_in = _active_counts(in_mask, layer.c_in, k)
    a_out, m_out = _active_counts(out_mask, layer.c_out, k)
    pointwise = int(np.dot(a_in, a_out)) * p
    return pointwise, int(m_in.sum()) * per_coef, int(m_out.sum()) * per_coef


def overhead_ratio(layer: LayerConfig) -> Fraction:
    """(DCT + IDCT) / pointwise for the unmasked wrapped layer, as an exact fraction."""
    pw, d, i = layer_macs(layer)
    return Fraction(d + i, pw)


# ---------------------------------------------------------------- per network


@dataclass
class LayerRow:
    layer: str
    type: str
    baseline_macs: int
    pruned_1x1_macs: int
    dct_macs: int
    idct_macs: int

    @property
    def total(self) -> int:
        return self.pruned_1x1_macs + self.dct_macs + self.idct_macs

    @property
    def ratio_1x1(self) -> float:
        return _ratio(self.baseline_macs, self.pruned_1x1_macs)

    @property
    def ratio_overall(self) -> float:
        return _ratio(self.baseline_macs, self.total)


def _ratio(a: int, b: int) -> float:
    return float("inf") if b == 0 else a / b


@dataclass
class NetworkReport:
    arch: str
    rows: list[LayerRow]

    @property
    def baseline_total(self) -> int:
        return sum(r.baseline_macs for r in self.rows)

    @property
    def pruned_total(self) -> int:
        return sum(r.total for r in self.rows)

    @property
    def transform_total(self) -> int:
        return sum(r.dct_macs + r.idct_macs for r in self.rows)

    @property
    def reduction(self) -> float:
        return _ratio(self.baseline_total, self.pruned_total)

    def wrapped_reduction(self, wrapped: set[str]) -> float:
        """Baseline / pruned cost restricted to the named layers, transforms included."""
        rows = [r for r in self.rows if r.layer in wrapped]
        return _ratio(sum(r.baseline_macs for r in rows), sum(r.total for r in rows))

    def by_type(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for r in self.rows:
            out[r.type] = out.get(r.type, 0) + r.baseline_macs
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(REPORT_COLUMNS)
        for r in self.rows:
            wr.writerow([r.layer, r.baseline_macs, r.pruned_1x1_macs, r.dct_macs, r.idct_macs,
                         f"{r.ratio_1x1:.6g}", f"{r.ratio_overall:.6g}"])
        wr.writerow(["TOTAL", self.baseline_total, sum(r.pruned_1x1_macs for r in self.rows),
                     sum(r.dct_macs for r in self.rows), sum(r.idct_macs for r in self.rows),
                     f"{_ratio(self.baseline_total, sum(r.pruned_1x1_macs for r in self.rows)):.6g}",
                     f"{self.reduction:.6g}"])
        return buf.getvalue()

    def table(self) -> str:
        head = f"{'layer':<28}{'baseline':>14}{'pruned 1x1':>14}{'dct':>12}{'idct':>12}{'x1x1':>8}{'xall':>8}"
        lines = [head, "-" * len(head)]
        for r in self.rows:
            lines.append(f"{r.layer:<28}{r.baseline_macs:>14,}{r.pruned_1x1_macs:>14,}{r.dct_macs:>12,}"
                         f"{r.idct_macs:>12,}{r.ratio_1x1:>8.3f}{r.ratio_overall:>8.3f}")
        lines.append("-" * len(head))
        lines.append(f"{'total':<28}{self.baseline_total:>14,}{'':>14}{'':>12}{'':>12}{'':>8}{self.reduction:>8.3f}")
        lines.append(f"pruned total incl. transforms: {self.pruned_total:,}")
        for t, v in sorted(self.by_type().items()):
            lines.append(f"  {t:<10} {v:>14,} MACs ({v / max(self.baseline_total, 1):.1%} of baseline)")
        return "\n".join(lines)


def network_macs(arch: ArchConfig, masks: MaskSet | None = None) -> NetworkReport:
    """Per-layer and total MACs; masks are looked up by each layer's ``mask`` key or name."""
    rows = []
    for layer in arch.layers:
        lm = masks.get(layer.mask or layer.name) if masks is not None else None
        main, d, i = layer_macs(layer, lm)
        rows.append(LayerRow(layer.name, layer.type, base_macs(layer), main, d, i))
    return NetworkReport(arch.name, rows)


# -------------------------------------------------------------------- sweeps


def profile_masks(arch: ArchConfig, profile, strategy: str, rho: float) -> MaskSet:
    """Per-layer masks at pruning fraction ``rho`` from a profile.

    Input-side statistics are keyed by layer name, output-side ones by
    ``"<layer>:out"``; a side without statistics stays unmasked.
    """
    from .masks import make_mask

    ms = MaskSet()
    for layer in arch.wrapped_layers():
        key = layer.mask or layer.name
        for side, pkey in (("input", key), ("output", f"{key}:out")):
            lp = profile.layers.get(pkey)
            if lp is not None:
                ms.set(key, side, make_mask(lp.importance, strategy, rho, layer.k))
    return ms


def fcmask_importance(fc: np.ndarray, num_coefs: int) -> np.ndarray:
    """Rank coefficients by the pre-clamp FCMask ramp ``fc - n/num_coefs``.

    Rows are strictly decreasing along the zigzag axis, so any threshold on
    this matrix is already a band mask.
    """
    fc = np.asarray(fc, dtype=np.float64)
    return fc[:, None] - np.arange(num_coefs)[None, :] / num_coefs


def sweep_report(arch: ArchConfig, source, levels, strategy: str = "band", accuracy=None) -> list[dict]:
    """One row per pruning level: level, MAC reduction (transforms included), accuracy.

    ``source`` is a :class:`~freqprune.masks.Profile` or a mapping from mask
    key to ``(input_fc, output_fc)`` learned FCMask vectors.  ``accuracy`` is
    an optional callback ``MaskSet -> float``.
    """
    from .masks import Profile

    levels = list(levels)
    if not levels:
        raise ValueError("at least one pruning level is required")
    baseline = network_macs(arch.with_transforms(None)).baseline_total
    rows = []
    for rho in levels:
        if isinstance(source, Profile):
            ms = profile_masks(arch, source, strategy, rho)
        else:
            ms = _fcmask_masks(arch, source, strategy, rho)
        rep = network_macs(arch, ms)
        rows.append({
            "level": float(rho),
            "mac_reduction": _ratio(baseline, rep.pruned_total),
            "accuracy": None if accuracy is None else float(accuracy(ms)),
        })
    return rows


def _fcmask_masks(arch: ArchConfig, fcs: dict, strategy: str, rho: float) -> MaskSet:
    from .masks import make_mask

    ms = MaskSet()
    for layer in arch.wrapped_layers():
        key = layer.mask or layer.name
        if key not in fcs:
            continue
        for side, fc in zip(("input", "output"), fcs[key]):
            if fc is not None:
                ms.set(key, side, make_mask(fcmask_importance(fc, layer.k ** 2), strategy, rho, layer.k))
    return ms


def write_sweep_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["level", "mac_reduction", "accuracy"])
        for r in rows:
            acc = "" if r["accuracy"] is None else f"{r['accuracy']:.6f}"
            wr.writerow([f"{r['level']:.6g}", f"{r['mac_reduction']:.6f}", acc])
