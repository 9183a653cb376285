"""SGD training with the baseline, freeze-learn-refine and alternate schedules."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field

import numpy as np

from ..fcmask import fcmask_regularizer, fcmask_regularizer_grad
from ..masks import MaskSet
from .data import Dataset
from .layers import SoftmaxCrossEntropy
from .model import Model

SCHEDULES = ("baseline", "freeze-refine", "alternate")
_ALIASES = {"freeze-learn-refine": "freeze-refine"}


@dataclass
class TrainConfig:
    schedule: str = "freeze-refine"
    lam: float = 5.0
    lr_weights: float = 0.05
    lr_fcmask: float = 0.01
    momentum: float = 0.9
    pretrain_epochs: int = 4
    mask_epochs: int = 5
    refine_epochs: int = 3
    batch_size: int = 32
    seed: int = 0
    reinit: bool = False  # retrain weights from scratch under the fixed bands

    def __post_init__(self):
        self.schedule = _ALIASES.get(self.schedule, self.schedule)
        if self.schedule not in SCHEDULES:
            raise ValueError(f"unknown schedule {self.schedule!r}; expected one of {SCHEDULES}")
        for f in ("lam", "lr_weights", "lr_fcmask", "momentum"):
            if getattr(self, f) < 0:
                raise ValueError(f"{f} must be >= 0")
        for f in ("pretrain_epochs", "mask_epochs", "refine_epochs"):
            if getattr(self, f) < 0:
                raise ValueError(f"{f} must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def to_json(self) -> dict:
        return asdict(self)


class SGD:
    """Momentum SGD over selected update groups; FCMasks are clamped to [0, 1] after each step."""

    def __init__(self, model: Model, groups: tuple[str, ...], lrs: dict[str, float], momentum: float):
        self.model, self.groups, self.lrs, self.momentum = model, groups, lrs, momentum
        self.velocity: dict[tuple[str, str], np.ndarray] = {}

    def step(self) -> None:
        for group in self.groups:
            lr = self.lrs[group]
            for layer, pname in self.model.parameters(group):
                key = (layer.name, pname)
                g = layer.grads[pname]
                v = self.velocity.get(key)
                v = g.copy() if v is None else self.momentum * v + g
                self.velocity[key] = v
                layer.params[pname] -= lr * v
                if group == "fcmask":
                    np.clip(layer.params[pname], 0.0, 1.0, out=layer.params[pname])


def loss_and_grads(model: Model, x: np.ndarray, y: np.ndarray, lam: float, train: bool = True):
    """Forward + backward; FCMask gradients include the regularizer path.

    Returns ``(loss, ce, reg)`` with ``loss == ce + reg``.
    """
    logits = model.forward(x, train)
    ce, dlogits = SoftmaxCrossEntropy()(logits, y)
    vectors = model.fcmask_vectors()
    reg = fcmask_regularizer(vectors, lam)
    model.backward(dlogits)
    for l in model.freq_layers():
        for side in ("fc_in", "fc_out"):
            l.grads[side] = l.grads[side] + fcmask_regularizer_grad(l.params[side], lam)
    return ce + reg, ce, reg


def evaluate(model: Model, data: Dataset, mask_mode: str | None = None, batch_size: int = 256) -> float:
    """Top-1 accuracy; ``mask_mode`` is ``soft`` or ``fixed-band`` (default: leave modes as they are)."""
    if len(data) == 0:
        raise ValueError("evaluation dataset is empty")
    saved = [l.mode for l in model.freq_layers()]
    if mask_mode is not None:
        model.set_mask_mode({"fixed-band": "band"}.get(mask_mode, mask_mode))
    try:
        correct = 0
        for s in range(0, len(data), batch_size):
            logits = model.forward(data.images[s:s + batch_size], False)
            correct += int((logits.argmax(axis=1) == data.labels[s:s + batch_size]).sum())
    finally:
        for l, m in zip(model.freq_layers(), saved):
            l.mode = m
    return correct / len(data)


@dataclass
class TrainResult:
    model: Model
    log: list[dict] = field(default_factory=list)
    masks: MaskSet | None = None

    def log_csv(self) -> str:
        return log_to_csv(self.log)


def log_columns(model: Model) -> list[str]:
    return (["epoch", "phase", "loss", "ce_loss", "reg_loss", "top1"]
            + [f"mean_fcmask_{l.name}" for l in model.freq_layers()] + ["projected_mac_reduction"])


def log_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    if not rows:
        return ""
    wr = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    wr.writeheader()
    for r in rows:
        wr.writerow({k: (f"{v:.17g}" if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


class Trainer:
    def __init__(self, model: Model, train: Dataset, test: Dataset, cfg: TrainConfig, progress=None):
        self.model, self.train_set, self.test_set, self.cfg = model, train, test, cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.log: list[dict] = []
        self.epoch = 0
        self.progress = progress
        self.lrs = {"weights": cfg.lr_weights, "bn": cfg.lr_weights, "fcmask": cfg.lr_fcmask}

    def run_epoch(self, phase: str, opt: SGD) -> dict:
        cfg, data = self.cfg, self.train_set
        order = self.rng.permutation(len(data))
        sums = np.zeros(3)
        batches = 0
        for s in range(0, len(order), cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            sums += loss_and_grads(self.model, data.images[idx], data.labels[idx], cfg.lam)
            opt.step()
            batches += 1
        self.epoch += 1
        loss, ce, reg = (sums / max(batches, 1)).tolist()
        row = {"epoch": self.epoch, "phase": phase, "loss": loss, "ce_loss": ce, "reg_loss": reg,
               "top1": evaluate(self.model, self.test_set) if len(self.test_set) else float("nan")}
        for l in self.model.freq_layers():
            row[f"mean_fcmask_{l.name}"] = float(np.concatenate([l.params["fc_in"], l.params["fc_out"]]).mean())
        masks = self.model.band_masks() if phase == "refine" else self.model.projected_masks()
        row["projected_mac_reduction"] = self.model.wrapped_reduction(masks)
        self.log.append(row)
        if self.progress:
            self.progress(row)
        return row

    def phase(self, name: str, epochs: int, groups: tuple[str, ...], mode: str, bn_frozen: bool) -> None:
        if epochs <= 0:
            return
        self.model.set_mask_mode(mode)
        self.model.freeze_batchnorm(bn_frozen)
        opt = SGD(self.model, groups, self.lrs, self.cfg.momentum)
        for _ in range(epochs):
            self.run_epoch(name, opt)

    def reinitialize_weights(self) -> None:
        fresh = Model.from_spec(self.model.spec(), seed=self.cfg.seed + 1, dtype=self.model.dtype)
        for old, new in zip(self.model.layers, fresh.layers):
            for pname, group in old.update_groups.items():
                if group in ("weights", "bn"):
                    old.params[pname] = new.params[pname].copy()
            if hasattr(old, "running_mean"):
                old.running_mean, old.running_var = new.running_mean.copy(), new.running_var.copy()

    def run(self) -> TrainResult:
        cfg, model = self.cfg, self.model
        weights = ("weights", "bn")
        self.phase("pretrain", cfg.pretrain_epochs, weights, "full", False)
        if cfg.schedule == "baseline":
            return TrainResult(model, self.log, model.band_masks())
        if cfg.schedule == "freeze-refine":
            self.phase("mask", cfg.mask_epochs, ("fcmask",), "soft", True)
        else:
            model.set_mask_mode("soft")
            mask_opt = SGD(model, ("fcmask",), self.lrs, cfg.momentum)
            weight_opt = SGD(model, weights, self.lrs, cfg.momentum)
            for _ in range(cfg.mask_epochs):
                model.freeze_batchnorm(True)
                self.run_epoch("mask", mask_opt)
                model.freeze_batchnorm(False)
                self.run_epoch("weights", weight_opt)
        masks = model.fix_bands()
        if cfg.reinit:
            self.reinitialize_weights()
        self.phase("refine", cfg.refine_epochs, weights, "band", False)
        return TrainResult(model, self.log, masks)


def train(model: Model, train_set: Dataset, test_set: Dataset, cfg: TrainConfig, progress=None) -> TrainResult:
    return Trainer(model, train_set, test_set, cfg, progress).run()
