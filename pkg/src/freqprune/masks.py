"""Channel x coefficient pruning masks, activation profiling and contiguity.

Four strategies are supported.  Each can be viewed as a boolean
``(c, k*k)`` matrix over zigzag-ordered coefficients:

``channel``    whole channels kept or dropped (row-constant matrix)
``coef``       the same coefficients kept in every channel (column-constant)
``chan-coef``  arbitrary matrix
``band``       per-channel zigzag prefix of length ``m_c``

Ordering for every threshold decision is a stable ascending sort on
``(importance, channel, coefficient)``, so ties drop the lower index first.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dct import FreqTensor

STRATEGIES = ("channel", "coef", "chan-coef", "band")


@dataclass(frozen=True)
class PruneMask:
    strategy: str
    c: int
    k: int
    payload: object

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        q = self.k * self.k
        if self.strategy == "band":
            m = np.asarray(self.payload, dtype=np.int64).reshape(-1)
            if m.size != self.c or m.min(initial=0) < 0 or m.max(initial=0) > q:
                raise ValueError(f"band mask needs {self.c} prefix lengths in [0, {q}]")
            object.__setattr__(self, "payload", m)
        elif self.strategy == "chan-coef":
            mat = np.asarray(self.payload, dtype=bool)
            if mat.shape != (self.c, q):
                raise ValueError(f"chan-coef mask must be ({self.c}, {q}), got {mat.shape}")
            object.__setattr__(self, "payload", mat)
        else:
            limit = self.c if self.strategy == "channel" else q
            kept = tuple(sorted(int(i) for i in self.payload))
            if any(not 0 <= i < limit for i in kept) or len(set(kept)) != len(kept):
                raise ValueError(f"{self.strategy} mask indices must be distinct and in [0, {limit})")
            object.__setattr__(self, "payload", kept)

    @classmethod
    def full(cls, c: int, k: int, strategy: str = "band") -> "PruneMask":
        return from_matrix(np.ones((c, k * k), dtype=bool), strategy, k)

    @classmethod
    def band(cls, m, k: int) -> "PruneMask":
        m = np.asarray(m, dtype=np.int64).reshape(-1)
        return cls("band", m.size, k, m)

    def matrix(self) -> np.ndarray:
        q = self.k * self.k
        if self.strategy == "band":
            return np.arange(q)[None, :] < self.payload[:, None]
        if self.strategy == "chan-coef":
            return self.payload.copy()
        mat = np.zeros((self.c, q), dtype=bool)
        if self.strategy == "channel":
            mat[list(self.payload), :] = True
        else:
            mat[:, list(self.payload)] = True
        return mat

    def retained_per_channel(self) -> np.ndarray:
        return self.matrix().sum(axis=1)

    @property
    def retained(self) -> int:
        return int(self.matrix().sum())

    def permutation(self) -> np.ndarray:
        """Channels ordered by descending retained count, stable on index."""
        return np.argsort(-self.retained_per_channel(), kind="stable")

    def to_json(self) -> dict:
        if self.strategy == "band":
            payload = self.payload.tolist()
        elif self.strategy == "chan-coef":
            payload = self.payload.astype(int).tolist()
        else:
            payload = list(self.payload)
        return {
            "strategy": self.strategy,
            "k": self.k,
            "c": self.c,
            "payload": payload,
            "permutation": self.permutation().tolist(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "PruneMask":
        return cls(d["strategy"], int(d["c"]), int(d["k"]), d["payload"])


def from_matrix(mat, strategy: str, k: int) -> PruneMask:
    """Encode a boolean matrix in ``strategy``'s representation.

    Only exact encodings are accepted: a ``channel`` mask must be
    row-constant, a ``coef`` mask column-constant, a ``band`` mask prefix-shaped.
    """
    mat = np.asarray(mat, dtype=bool)
    c = mat.shape[0]
    if strategy == "chan-coef":
        return PruneMask(strategy, c, k, mat)
    if strategy == "band":
        if contiguity_fraction(mat) != 1.0:
            raise ValueError("matrix rows are not zigzag prefixes; use band_from_chan_coef")
        return PruneMask.band(mat.sum(axis=1), k)
    if strategy == "channel":
        if not np.all(mat == mat[:, :1]):
            raise ValueError("channel mask must be row-constant")
        return PruneMask(strategy, c, k, np.flatnonzero(mat[:, 0]))
    if not np.all(mat == mat[:1, :]):
        raise ValueError("coef mask must be column-constant")
    return PruneMask(strategy, c, k, np.flatnonzero(mat[0]))


def mask_matrix(mask, c: int, k: int) -> np.ndarray:
    """Boolean (or soft float) ``(c, k*k)`` matrix for any accepted mask form."""
    if mask is None:
        return np.ones((c, k * k), dtype=bool)
    if isinstance(mask, PruneMask):
        if (mask.c, mask.k) != (c, k):
            raise ValueError(f"mask is for c={mask.c}, k={mask.k}; tensor has c={c}, k={k}")
        return mask.matrix()
    mat = np.asarray(mask)
    if mat.shape != (c, k * k):
        raise ValueError(f"mask matrix must be ({c}, {k * k}), got {mat.shape}")
    return mat


def band_lengths(mask, c: int, k: int) -> np.ndarray:
    """Per-channel DCT truncation length: exact for bands, enclosing prefix otherwise."""
    if isinstance(mask, PruneMask) and mask.strategy == "band":
        return mask.payload
    mat = mask_matrix(mask, c, k).astype(bool)
    q = k * k
    last = np.where(mat.any(axis=1), q - np.argmax(mat[:, ::-1], axis=1), 0)
    return last.astype(np.int64)


def band_from_chan_coef(mask) -> PruneMask:
    """Largest zigzag prefix contained in each row; never adds coefficients."""
    mat = mask.matrix() if isinstance(mask, PruneMask) else np.asarray(mask, dtype=bool)
    q = mat.shape[1]
    k = mask.k if isinstance(mask, PruneMask) else math.isqrt(q)
    m = np.where(mat.all(axis=1), q, np.argmin(mat, axis=1))
    return PruneMask.band(m, k)


def contiguity_fraction(mask) -> float:
    """Fraction of channel rows whose retained set is exactly a zigzag prefix.

    An all-zero row is the empty prefix and counts as contiguous.
    """
    mat = mask.matrix() if isinstance(mask, PruneMask) else np.asarray(mask, dtype=bool)
    if mat.shape[0] == 0:
        return 1.0
    # prefix rows never go from False back to True
    rises = np.any(~mat[:, :-1] & mat[:, 1:], axis=1)
    return float(np.mean(~rises))


def apply_mask(f: FreqTensor, mask) -> FreqTensor:
    mat = mask_matrix(mask, f.c, f.k).astype(bool)
    return f.replace(np.where(mat[None, :, :, None, None], f.data, f.data.dtype.type(0)))


def _drop_count(rho: float, total: int) -> int:
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"pruning fraction must be in [0, 1], got {rho}")
    return int(math.floor(rho * total + 1e-9))


def make_mask(importance, strategy: str, rho: float, k: int | None = None) -> PruneMask:
    """Threshold an importance matrix so that a fraction ``rho`` is pruned."""
    imp = np.asarray(importance, dtype=np.float64)
    c, q = imp.shape
    k = k or math.isqrt(q)
    if k * k != q:
        raise ValueError(f"importance has {q} columns, not a square macroblock")
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    if strategy == "channel":
        drop = np.argsort(imp.sum(axis=1), kind="stable")[: _drop_count(rho, c)]
        return PruneMask("channel", c, k, np.setdiff1d(np.arange(c), drop))
    if strategy == "coef":
        drop = np.argsort(imp.sum(axis=0), kind="stable")[: _drop_count(rho, q)]
        return PruneMask("coef", c, k, np.setdiff1d(np.arange(q), drop))
    flat = imp.reshape(-1)
    keep = np.ones(flat.size, dtype=bool)
    keep[np.argsort(flat, kind="stable")[: _drop_count(rho, flat.size)]] = False
    cc = PruneMask("chan-coef", c, k, keep.reshape(c, q))
    return cc if strategy == "chan-coef" else band_from_chan_coef(cc)


def uniform_band(c: int, k: int, rho: float) -> PruneMask:
    """Band mask dropping ``floor(rho*c*k*k)`` coefficients spread evenly over channels."""
    q = k * k
    drop = _drop_count(rho, c * q)
    base, extra = divmod(drop, c)
    m = np.full(c, q - base, dtype=np.int64)
    m[:extra] -= 1
    return PruneMask.band(m, k)


# ---------------------------------------------------------------- layer masks


@dataclass
class LayerMask:
    """Masks on the two sides of one frequency-wrapped pointwise layer."""

    input: PruneMask | None = None
    output: PruneMask | None = None


@dataclass
class MaskSet:
    layers: dict[str, LayerMask] = field(default_factory=dict)

    def get(self, name: str) -> LayerMask | None:
        return self.layers.get(name)

    def set(self, name: str, side: str, mask: PruneMask) -> None:
        lm = self.layers.setdefault(name, LayerMask())
        if side not in ("input", "output"):
            raise ValueError(f"side must be 'input' or 'output', got {side!r}")
        setattr(lm, side, mask)

    def to_json(self) -> dict:
        entries = []
        for name, lm in self.layers.items():
            for side in ("input", "output"):
                m = getattr(lm, side)
                if m is not None:
                    entries.append({"layer": name, "side": side, **m.to_json()})
        return {"format": "freqprune-masks", "version": 1, "masks": entries}

    @classmethod
    def from_json(cls, d: dict) -> "MaskSet":
        if d.get("format") != "freqprune-masks":
            raise ValueError("not a freqprune mask file")
        ms = cls()
        for e in d["masks"]:
            ms.set(e["layer"], e.get("side", "input"), PruneMask.from_json(e))
        return ms

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))

    @classmethod
    def load(cls, path) -> "MaskSet":
        return cls.from_json(json.loads(Path(path).read_text()))


# ------------------------------------------------------------------ profiling


@dataclass
class LayerProfile:
    importance: np.ndarray  # (c, k*k) mean |coefficient|
    samples: int
    k: int


@dataclass
class Profile:
    layers: dict[str, LayerProfile] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "format": "freqprune-profile",
            "version": 1,
            "layers": {
                name: {"k": lp.k, "samples": lp.samples, "importance": lp.importance.tolist()}
                for name, lp in self.layers.items()
            },
        }

    @classmethod
    def from_json(cls, d: dict) -> "Profile":
        if d.get("format") != "freqprune-profile":
            raise ValueError("not a freqprune profile file")
        return cls({
            name: LayerProfile(np.asarray(e["importance"], dtype=np.float64), int(e["samples"]), int(e["k"]))
            for name, e in d["layers"].items()
        })

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))

    @classmethod
    def load(cls, path) -> "Profile":
        return cls.from_json(json.loads(Path(path).read_text()))


class ProfileAccumulator:
    """Running sums of |coefficient| per layer; shards merge by adding sums."""

    def __init__(self):
        self.sums: dict[str, np.ndarray] = {}
        self.counts: dict[str, int] = {}
        self.samples: dict[str, int] = {}
        self.ks: dict[str, int] = {}

    def add(self, name: str, f: FreqTensor) -> None:
        s = np.abs(f.data).sum(axis=(0, 3, 4), dtype=np.float64)
        if name in self.sums:
            self.sums[name] += s
        else:
            self.sums[name] = s
            self.counts[name] = 0
            self.samples[name] = 0
            self.ks[name] = f.k
        self.counts[name] += f.n * f.blocks
        self.samples[name] += f.n

    def merge(self, other: "ProfileAccumulator") -> None:
        for name in sorted(other.sums):
            if name in self.sums:
                self.sums[name] += other.sums[name]
                self.counts[name] += other.counts[name]
                self.samples[name] += other.samples[name]
            else:
                self.sums[name] = other.sums[name].copy()
                self.counts[name] = other.counts[name]
                self.samples[name] = other.samples[name]
                self.ks[name] = other.ks[name]

    def result(self) -> Profile:
        return Profile({
            name: LayerProfile(self.sums[name] / self.counts[name], self.samples[name], self.ks[name])
            for name in self.sums
        })


def profile_activations(model, dataset, layers=None, batch_size: int = 64) -> Profile:
    """Mean |DCT coefficient| at the input of every frequency-wrapped layer."""
    images = dataset.images if hasattr(dataset, "images") else np.asarray(dataset)
    if len(images) == 0:
        raise ValueError("profiling dataset is empty")
    acc = ProfileAccumulator()
    for start in range(0, len(images), batch_size):
        batch = images[start:start + batch_size]
        for name, f in model.frequency_inputs(batch, layers):
            acc.add(name, f)
    if not acc.sums:
        raise ValueError("model has no frequency-wrapped layers to profile")
    return acc.result()
