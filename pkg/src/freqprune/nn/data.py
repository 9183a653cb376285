"""Datasets: CIFAR-10 binary batches and seeded synthetic Gaussian-blob classes."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..tensor import FormatError

CIFAR_RECORD = 1 + 3 * 32 * 32
CIFAR_MEAN = (0.4914, 0.4822, 0.4465)
CIFAR_STD = (0.2470, 0.2435, 0.2616)


@dataclass
class Dataset:
    images: np.ndarray  # (n, 3, h, w) float
    labels: np.ndarray  # (n,) int64

    def __post_init__(self):
        if self.images.ndim != 4 or len(self.images) != len(self.labels):
            raise ValueError("images must be (n, c, h, w) with one label per image")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self) else 0

    def subset(self, idx) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx])

    def astype(self, dtype) -> "Dataset":
        return Dataset(self.images.astype(dtype), self.labels)


def read_cifar10_batch(path) -> Dataset:
    """One CIFAR-10 binary batch: records of a label byte plus planar 32x32 R, G, B bytes."""
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % CIFAR_RECORD:
        raise FormatError(f"{path}: size {raw.size} is not a whole number of {CIFAR_RECORD}-byte records")
    rec = raw.reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    if labels.max() > 9:
        raise FormatError(f"{path}: label byte out of range")
    images = rec[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0
    return Dataset(images, labels)


def load_cifar10(root) -> tuple[Dataset, Dataset]:
    """(train, test) from a directory holding ``data_batch_*.bin`` and ``test_batch.bin``."""
    root = Path(root)
    train_files = sorted(root.glob("data_batch_*.bin"))
    test_file = root / "test_batch.bin"
    if not train_files or not test_file.exists():
        raise FileNotFoundError(f"{root}: expected data_batch_*.bin and test_batch.bin")
    parts = [read_cifar10_batch(p) for p in train_files]
    train = Dataset(np.concatenate([p.images for p in parts]), np.concatenate([p.labels for p in parts]))
    return train, read_cifar10_batch(test_file)


def normalize(ds: Dataset, mean, std) -> Dataset:
    mean = np.asarray(mean, dtype=np.float64)[None, :, None, None]
    std = np.asarray(std, dtype=np.float64)[None, :, None, None]
    if np.any(std <= 0):
        raise ValueError("normalization std must be positive")
    return Dataset((ds.images - mean) / std, ds.labels)


def load_normalization(path) -> tuple[list[float], list[float]]:
    d = json.loads(Path(path).read_text())
    try:
        mean, std = d["mean"], d["std"]
    except KeyError as exc:
        raise ValueError(f"{path}: normalization file needs 'mean' and 'std'") from exc
    if len(mean) != 3 or len(std) != 3:
        raise ValueError(f"{path}: mean and std need one value per channel")
    return list(mean), list(std)


def center_crop(ds: Dataset, size: int) -> Dataset:
    h, w = ds.images.shape[2:]
    if size > min(h, w):
        raise ValueError(f"cannot crop {h}x{w} images to {size}")
    top, left = (h - size) // 2, (w - size) // 2
    return Dataset(ds.images[:, :, top:top + size, left:left + size].copy(), ds.labels)


def _templates(rng, classes: int, size: int, blobs: int) -> list[list[tuple]]:
    out = []
    for _ in range(classes):
        spec = []
        for _ in range(blobs):
            centre = rng.uniform(0.2 * size, 0.8 * size, 2)
            sigma = rng.uniform(0.12 * size, 0.25 * size)
            colour = rng.uniform(-1.0, 1.0, 3)
            spec.append((centre, sigma, colour))
        out.append(spec)
    return out


def _render(rng, template, size: int, jitter: float, noise: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    img = np.zeros((3, size, size))
    for centre, sigma, colour in template:
        cy, cx = centre + rng.normal(0.0, jitter, 2)
        g = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma * sigma))
        img += colour[:, None, None] * g[None]
    return img + rng.normal(0.0, noise, img.shape)


def synthetic_blobs(n_train: int = 300, n_test: int = 150, classes: int = 3, size: int = 24, seed: int = 0,
                    blobs: int = 2, jitter: float = 1.5, noise: float = 0.6) -> tuple[Dataset, Dataset]:
    """Seeded classes of smooth coloured Gaussian blobs plus white noise.

    Class templates, the training split and the test split each draw from
    their own child stream of ``seed``; labels are balanced and shuffled.
    """
    if n_train < 1 or n_test < 0 or classes < 2:
        raise ValueError("need n_train >= 1, n_test >= 0 and at least two classes")
    t_seq, tr_seq, te_seq = np.random.SeedSequence(seed).spawn(3)
    templates = _templates(np.random.default_rng(t_seq), classes, size, blobs)

    def split(seq, n):
        rng = np.random.default_rng(seq)
        labels = rng.permutation(np.arange(n) % classes)
        images = np.stack([_render(rng, templates[c], size, jitter, noise) for c in labels]) if n else \
            np.zeros((0, 3, size, size))
        return Dataset(images, labels.astype(np.int64))

    return split(tr_seq, n_train), split(te_seq, n_test)


def parse_dataset(spec: str, seed: int = 0, size: int | None = None, norm=None) -> tuple[Dataset, Dataset]:
    """Resolve a ``--dataset`` argument to (train, test).

    ``synthetic[:key=value,...]`` builds blob data (keys: n_train, n_test,
    classes, size, blobs, jitter, noise); anything else is a CIFAR-10
    directory, or a single batch file used for both splits.  ``size`` crops
    CIFAR images to a smaller square.  ``norm`` is a normalization JSON path.
    """
    if spec == "synthetic" or spec.startswith("synthetic:"):
        kw = {"size": size} if size else {}
        if ":" in spec:
            for item in filter(None, spec.split(":", 1)[1].split(",")):
                key, _, val = item.partition("=")
                if key not in ("n_train", "n_test", "classes", "size", "blobs", "jitter", "noise"):
                    raise ValueError(f"unknown synthetic dataset option {key!r}")
                kw[key] = float(val) if key in ("jitter", "noise") else int(val)
        train, test = synthetic_blobs(seed=seed, **kw)
    else:
        p = Path(spec)
        if p.is_dir():
            train, test = load_cifar10(p)
        elif p.is_file():
            train = test = read_cifar10_batch(p)
        else:
            raise FileNotFoundError(f"dataset not found: {spec}")
        mean, std = load_normalization(norm) if norm else (CIFAR_MEAN, CIFAR_STD)
        train, test = normalize(train, mean, std), normalize(test, mean, std)
        if size and size != 32:
            train, test = center_crop(train, size), center_crop(test, size)
        return train, test
    if norm:
        mean, std = load_normalization(norm)
        train, test = normalize(train, mean, std), normalize(test, mean, std)
    return train, test
