"""Acceptance criteria 1-10, one test each; every test prints a PASS/FAIL line."""

import csv
import json
import time
from fractions import Fraction

import numpy as np
import pytest

from freqprune.bandexec import banded_macs, execute_banded, plan_bands
from freqprune.cli import main
from freqprune.costmodel import ArchConfig, LayerConfig, layer_macs, network_macs, overhead_ratio, shipped_config
from freqprune.dct import dct_truncated
from freqprune.fcmask import coefmask
from freqprune.masks import (LayerMask, MaskSet, PruneMask, apply_mask, band_from_chan_coef, contiguity_fraction,
                             make_mask, profile_activations)
from freqprune.nn.checkpoint import load_checkpoint
from freqprune.nn.data import synthetic_blobs
from freqprune.nn.model import Model
from freqprune.pointwise import PointwiseLayer, conv1x1_freq, conv1x1_spatial, freq_wrapped, pointwise_macs
from freqprune.verify import gradient_errors


def test_criterion_01_commutation(criterion):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(200):
        k = int(rng.choice([1, 2, 3, 4, 7]))
        h, w = (k * int(rng.integers(1, 28 // k + 1)) for _ in range(2))
        c_in, c_out = (int(v) for v in rng.integers(1, 17, size=2))
        x = rng.standard_normal((int(rng.integers(1, 3)), c_in, h, w))
        layer = PointwiseLayer(rng.standard_normal((c_out, c_in)), rng.standard_normal(c_out) if i % 2 else None)
        worst = max(worst, float(np.max(np.abs(freq_wrapped(x, layer, None, k) - conv1x1_spatial(x, layer)))))
    dt = time.perf_counter() - t0
    criterion(1, worst < 1e-10 and dt < 30, f"max |freq - spatial| = {worst:.3e} over 200 cases in {dt:.1f} s")


def test_criterion_02_overhead_formulas(criterion):
    rng = np.random.default_rng(102)
    bad = []
    for _ in range(100):
        k = int(rng.integers(1, 9))
        c_in, c_out = (int(v) for v in rng.integers(1, 2049, size=2))
        h, w = (k * int(rng.integers(1, 17)) for _ in range(2))
        cfg = LayerConfig("l", "pointwise", c_in, c_out, h, w, k=k)
        main_macs, dct, idct = layer_macs(cfg)
        ratio = overhead_ratio(cfg)
        if (main_macs, dct, idct) != (c_in * c_out * h * w, c_in * h * w * k * k, c_out * h * w * k * k) or \
                ratio != Fraction((c_in + c_out) * k * k, c_in * c_out) or Fraction(dct + idct, main_macs) != ratio:
            bad.append((c_in, c_out, h, w, k))
    criterion(2, not bad, f"100 shapes, {len(bad)} mismatches (exact integer and rational comparison)")


def test_criterion_03_baseline_macs(criterion):
    t0 = time.perf_counter()
    got = {}
    for name, base, wrapped in (("resnext29_32x4d_cifar", 7.7e8, 8.4e8), ("mobilenetv2_cifar", 8.9e7, 1.1e8)):
        arch = ArchConfig.load(shipped_config(name))
        with_t = network_macs(arch).pruned_total
        without = network_macs(arch.with_transforms(None)).pruned_total
        got[name] = (without, with_t, abs(without / base - 1) <= 0.05 and abs(with_t / wrapped - 1) <= 0.05)
    dt = time.perf_counter() - t0
    ok = all(v[2] for v in got.values()) and dt < 1.0
    detail = "; ".join(f"{n}: {a:,} / {b:,} with transforms" for n, (a, b, _) in got.items())
    criterion(3, ok, f"{detail} ({dt * 1e3:.0f} ms)")


def test_criterion_04_fcmask_mapping(criterion):
    problems = []
    for q in range(1, 65):
        if coefmask(0.0, q).tolist() != [0.0] * q or coefmask(1.0, q).tolist() != [1.0] * q:
            problems.append(f"endpoints q={q}")
    worked = coefmask(0.9, 4)
    # 0.9 has no exact binary form; 0.9*4 - 3 is the correctly rounded value of the fourth entry
    if worked.tolist() != [1.0, 1.0, 1.0, 0.9 * 4 - 3] or abs(worked[3] - 0.6) > np.spacing(0.6):
        problems.append(f"worked case {worked.tolist()}")
    grid = np.linspace(0.0, 1.0, 10_000)
    for q in (1, 2, 4, 9, 16, 25, 49, 64):
        m = coefmask(grid, q)
        if np.any(np.diff(m, axis=0) < 0) or np.any(np.diff(m, axis=1) > 0):
            problems.append(f"monotonicity q={q}")
        if np.any(((m > 0) & (m < 1)).sum(axis=1) > 1):
            problems.append(f"fractional entries q={q}")
    criterion(4, not problems, f"worked case {worked.tolist()}; 10^4-point grid; " + (", ".join(problems) or "ok"))


def _small_model(rng, case):
    k = int(rng.integers(2, 4))
    c = int(rng.integers(2, 5))
    fp = {"type": "freq_pointwise", "name": "fp", "c_in": 3, "c_out": c, "k": k}
    body = [
        [fp, {"type": "batchnorm", "name": "bn", "c": c}],
        [{"type": "conv2d", "name": "conv", "c_in": 3, "c_out": 3, "kernel": 3, "stride": 1, "groups": 1},
         {"type": "relu6", "name": "act"}, fp],
        [fp, {"type": "relu", "name": "act"},
         {"type": "conv2d", "name": "dw", "c_in": c, "c_out": c, "kernel": 3, "stride": 2, "groups": c}],
    ][case % 3]
    model = Model.from_spec({"input": [3, 2 * k, 2 * k], "layers": body + [
        {"type": "gap", "name": "pool"}, {"type": "dense", "name": "fc", "c_in": c, "c_out": 3}]},
        seed=int(rng.integers(2**31)))
    for layer in model.freq_layers():
        layer.set_mode("soft")
        q = layer.k * layer.k
        for side in ("fc_in", "fc_out"):
            v = layer.params[side]
            v[:] = (rng.integers(1, q, v.shape) + rng.uniform(0.2, 0.8, v.shape)) / q
    return model


def test_criterion_05_gradients(criterion):
    rng = np.random.default_rng(105)
    t0 = time.perf_counter()
    worst, where, checked = 0.0, "", set()
    for case in range(9):
        model = _small_model(rng, case)
        x = rng.standard_normal((4, *model.input_shape))
        y = rng.integers(0, 3, size=4)
        for name, err in gradient_errors(model, x, y, lam=float(rng.uniform(0.1, 3.0)), rng=rng).items():
            checked.add(name.split(".", 1)[1])
            if err > worst:
                worst, where = err, name
    dt = time.perf_counter() - t0
    ok = worst < 1e-4 and dt < 120 and {"fc_in", "fc_out", "weight", "gamma", "beta"} <= checked
    criterion(5, ok, f"worst relative error {worst:.2e} ({where}) over 9 models, params {sorted(checked)}, {dt:.1f} s")


def test_criterion_06_band_exec(criterion):
    rng = np.random.default_rng(106)
    worst, mac_bad = 0.0, 0
    for _ in range(200):
        k = int(rng.integers(1, 6))
        n = int(rng.integers(1, 3))
        h, w = (k * int(rng.integers(1, 5)) for _ in range(2))
        c_in, c_out = (int(v) for v in rng.integers(1, 17, size=2))
        mi = PruneMask.band(rng.integers(0, k * k + 1, c_in), k)
        mo = PruneMask.band(rng.integers(0, k * k + 1, c_out), k)
        layer = PointwiseLayer(rng.standard_normal((c_out, c_in)))
        f = apply_mask(dct_truncated(rng.standard_normal((n, c_in, h, w)), k, np.full(c_in, k * k)), mi)
        plan = plan_bands(mi, mo, h=h, w=w, n=n)
        got = execute_banded(f, layer, plan).data
        want = apply_mask(conv1x1_freq(f, layer), mo).data
        worst = max(worst, float(np.max(np.abs(got - want), initial=0.0)))
        pruned, _, _ = layer_macs(LayerConfig("l", "pointwise", c_in, c_out, h, w, k=k), LayerMask(mi, mo))
        macs = banded_macs(plan)
        mac_bad += macs != pruned * n or macs > pointwise_macs(c_in, c_out, h, w, n)
    criterion(6, worst < 1e-10 and mac_bad == 0, f"max error {worst:.3e}, {mac_bad} MAC mismatches over 200 instances")


# ------------------------------------------------------------ desk-scale training

def _train(out, *extra):
    code = main(["train", "--out", str(out), "--quiet", "--no-plot", *extra])
    assert code == 0
    with open(out / "train_log.csv") as fh:
        rows = list(csv.DictReader(fh))
    return rows


@pytest.fixture(scope="module")
def desk_runs(tmp_path_factory):
    t0 = time.perf_counter()
    runs = {name: (tmp_path_factory.mktemp(name), args) for name, args in (
        ("freeze", ["--schedule", "freeze-learn-refine", "--lambda", "5"]),
        ("lam0", ["--schedule", "freeze-learn-refine", "--lambda", "0"]),
        ("alternate", ["--schedule", "alternate", "--lambda", "5"]))}
    logs = {name: (out, _train(out, *args)) for name, (out, args) in runs.items()}
    return logs, time.perf_counter() - t0


def test_criterion_07_learn_prune_refine(criterion, desk_runs):
    logs, seconds = desk_runs
    out, rows = logs["freeze"]
    fc_cols = [c for c in rows[0] if c.startswith("mean_fcmask_")]
    mean_fc = lambda r: float(np.mean([float(r[c]) for c in fc_cols]))  # noqa: E731
    start = [r for r in rows if r["phase"] == "pretrain"][-1]
    phase_a = [start] + [r for r in rows if r["phase"] == "mask"]
    series = [mean_fc(r) for r in phase_a]
    decreasing = all(b < a for a, b in zip(series, series[1:]))
    reduction = float(rows[-1]["projected_mac_reduction"])

    # the same reduction from the saved masks through the cost model
    model, _ = load_checkpoint(out / "checkpoint")
    wrapped = {l.name for l in model.freq_layers()}
    masks = MaskSet.load(out / "masks.json")
    all_band = all(lm.input.strategy == "band" and lm.output.strategy == "band" for lm in masks.layers.values())
    via_cost = network_macs(model.to_arch(), masks).wrapped_reduction(wrapped)

    top1 = float(rows[-1]["top1"])
    top1_base = float(logs["lam0"][1][-1]["top1"])
    alt = float(logs["alternate"][1][-1]["projected_mac_reduction"])
    alt_phases = {r["phase"] for r in logs["alternate"][1]}
    ok = (decreasing and all_band and reduction >= 1.3 and via_cost == pytest.approx(reduction, rel=1e-12)
          and top1 >= top1_base - 0.02 and alt >= reduction and "refine" in alt_phases and seconds < 600)
    criterion(7, ok, f"(a) mean FCMask {' > '.join(f'{v:.4f}' for v in series)}; "
                     f"(b) wrapped reduction {reduction:.3f}x; (c) top1 {top1:.4f} vs lambda=0 {top1_base:.4f}; "
                     f"alternate {alt:.3f}x; three runs {seconds:.0f} s")


def test_criterion_08_contiguity(criterion, desk_runs):
    hand = [
        (np.array([[1, 1, 0, 0], [1, 0, 1, 0], [0, 0, 0, 0], [1, 1, 1, 1], [0, 1, 0, 0]], bool), 3 / 5),
        (np.ones((3, 4), bool), 1.0),
        (np.array([[0, 1, 1, 1]], bool), 0.0),
    ]
    exact = all(contiguity_fraction(PruneMask("chan-coef", len(m), 2, m)) == want for m, want in hand)

    logs, _ = desk_runs
    model, _ = load_checkpoint(logs["freeze"][0] / "checkpoint")
    model.set_mask_mode("full")
    train, _ = synthetic_blobs()
    prof = profile_activations(model, train)
    fractions, never_more = [], True
    for level in (0.3, 0.5, 0.7):
        for lp in prof.layers.values():
            cc = make_mask(lp.importance, "chan-coef", level)
            fractions.append(contiguity_fraction(cc))
            never_more &= band_from_chan_coef(cc).retained <= cc.retained
    criterion(8, exact and never_more,
              f"hand-built matrices exact; profiled chan-coef masks ({len(fractions)}) contiguous fraction "
              f"mean {np.mean(fractions):.3f}, range [{min(fractions):.3f}, {max(fractions):.3f}]; "
              "band projection never adds coefficients")


def _bench(tmp_path, level):
    assert main(["bench", "--out", str(tmp_path), "--level", str(level), "--c-in", "512", "--c-out", "512",
                 "--h", "28", "--w", "28", "--k", "3", "--threads", "1", "--reps", "30", "--no-plot"]) == 0
    return json.loads((tmp_path / "bench.json").read_text())


def test_criterion_09_wall_clock(criterion, tmp_path):
    dense = _bench(tmp_path / "r0", 0.0)
    pruned = _bench(tmp_path / "r5", 0.5)
    # speedup = spatial time / frequency time: below 1 when transform overhead dominates
    ok = dense["speedup"] < 1.0 and pruned["speedup"] > 1.0 and pruned["threads"] == 1 and pruned["reps"] >= 20
    criterion(9, ok, f"spatial/frequency time at level 0: {dense['speedup']:.3f} "
                     f"(MAC model {dense['mac_speedup']:.3f}); at level 0.5: {pruned['speedup']:.3f} "
                     f"(MAC model {pruned['mac_speedup']:.3f}); 1 thread, median of 30")


def test_criterion_10_determinism(criterion, tmp_path):
    args = ["--dataset", "synthetic:n_train=60,n_test=30", "--pretrain-epochs", "1", "--mask-epochs", "2",
            "--refine-epochs", "1", "--schedule", "alternate", "--seed", "7"]
    _train(tmp_path / "a", *args)
    _train(tmp_path / "b", *args)
    a, b = ((tmp_path / d / "train_log.csv").read_bytes() for d in "ab")
    fa, fb = ((tmp_path / d / "masks.json").read_bytes() for d in "ab")
    criterion(10, a == b and fa == fb, f"two seeded runs: log CSVs {'identical' if a == b else 'DIFFER'} "
                                       f"({len(a)} bytes), mask files {'identical' if fa == fb else 'DIFFER'}")
