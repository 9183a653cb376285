"""Model checkpoints: a JSON manifest plus one FBT1 blob per parameter array."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..tensor import read_fbt1, write_fbt1
from .layers import BatchNorm, FreqPointwise
from .model import Model

FORMAT = "freqprune-checkpoint"


def _as4d(a: np.ndarray) -> np.ndarray:
    return a.reshape((1,) * (4 - a.ndim) + a.shape) if a.ndim < 4 else a


def save_checkpoint(model: Model, out_dir, train_config: dict | None = None, lam: float | None = None) -> Path:
    """Write ``checkpoint.json`` and ``params/*.fbt`` under ``out_dir``; returns the manifest path."""
    out = Path(out_dir)
    (out / "params").mkdir(parents=True, exist_ok=True)
    params: dict[str, dict] = {}
    buffers: dict[str, dict] = {}
    fcmask: dict[str, dict] = {}
    for layer in model.layers:
        entries = {}
        for pname, arr in layer.params.items():
            if layer.update_groups[pname] == "fcmask":
                continue
            rel = f"params/{layer.name}.{pname}.fbt"
            write_fbt1(out / rel, _as4d(arr))
            entries[pname] = {"file": rel, "shape": list(arr.shape)}
        if entries:
            params[layer.name] = entries
        if isinstance(layer, BatchNorm):
            buf = {}
            for bname in ("running_mean", "running_var"):
                rel = f"params/{layer.name}.{bname}.fbt"
                arr = getattr(layer, bname)
                write_fbt1(out / rel, _as4d(arr))
                buf[bname] = {"file": rel, "shape": list(arr.shape)}
            buffers[layer.name] = buf
        if isinstance(layer, FreqPointwise):
            fcmask[layer.name] = {
                "fc_in": layer.params["fc_in"].tolist(),
                "fc_out": layer.params["fc_out"].tolist(),
                "num_coefs": layer.q,
                "lambda": lam,
                "mode": layer.mode,
                "band_in": layer.band_in.tolist(),
                "band_out": layer.band_out.tolist(),
            }
    manifest = {
        "format": FORMAT,
        "version": 1,
        "dtype": "f32" if model.dtype == np.float32 else "f64",
        "model": model.spec(),
        "train_config": train_config,
        "params": params,
        "buffers": buffers,
        "fcmask": fcmask,
    }
    path = out / "checkpoint.json"
    path.write_text(json.dumps(manifest, indent=1))
    return path


def load_checkpoint(path) -> tuple[Model, dict]:
    """Load a checkpoint directory (or its ``checkpoint.json``)."""
    path = Path(path)
    if path.is_dir():
        path = path / "checkpoint.json"
    manifest = json.loads(path.read_text())
    if manifest.get("format") != FORMAT:
        raise ValueError(f"{path}: not a freqprune checkpoint")
    root = path.parent
    dtype = np.float32 if manifest["dtype"] == "f32" else np.float64
    model = Model.from_spec(manifest["model"], dtype=dtype)

    def blob(entry):
        return read_fbt1(root / entry["file"]).reshape(entry["shape"])

    for layer in model.layers:
        for pname, entry in manifest["params"].get(layer.name, {}).items():
            arr = blob(entry)
            if arr.shape != layer.params[pname].shape:
                raise ValueError(f"{path}: {layer.name}.{pname} has shape {arr.shape}, "
                                 f"model expects {layer.params[pname].shape}")
            layer.params[pname] = arr.astype(dtype)
        if isinstance(layer, BatchNorm) and layer.name in manifest["buffers"]:
            b = manifest["buffers"][layer.name]
            layer.running_mean = blob(b["running_mean"]).astype(dtype)
            layer.running_var = blob(b["running_var"]).astype(dtype)
        if isinstance(layer, FreqPointwise) and layer.name in manifest["fcmask"]:
            f = manifest["fcmask"][layer.name]
            layer.params["fc_in"] = np.asarray(f["fc_in"], dtype=np.float64)
            layer.params["fc_out"] = np.asarray(f["fc_out"], dtype=np.float64)
            layer.band_in = np.asarray(f["band_in"], dtype=np.int64)
            layer.band_out = np.asarray(f["band_out"], dtype=np.int64)
            layer.set_mode(f["mode"])
    return model, manifest
