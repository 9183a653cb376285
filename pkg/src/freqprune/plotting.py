"""PNG figures written next to the CSV outputs of the report commands."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_cost(report, path) -> Path:
    """Stacked per-layer bars: pruned main term plus DCT and IDCT overhead, against the baseline."""
    rows = report.rows
    names = [r.layer for r in rows]
    x = range(len(rows))
    fig, ax = plt.subplots(figsize=(max(6.0, 0.28 * len(rows)), 4.0))
    ax.bar(x, [r.baseline_macs for r in rows], color="0.85", label="baseline")
    main = [r.pruned_1x1_macs for r in rows]
    dct = [r.dct_macs for r in rows]
    ax.bar(x, main, width=0.5, label="pruned")
    ax.bar(x, dct, width=0.5, bottom=main, label="DCT")
    ax.bar(x, [r.idct_macs for r in rows], width=0.5, bottom=[a + b for a, b in zip(main, dct)], label="IDCT")
    ax.set_xticks(list(x), names, rotation=90, fontsize=6)
    ax.set_ylabel("MACs")
    ax.set_title(f"{report.arch}: {report.reduction:.3f}x overall reduction")
    ax.legend(fontsize=7)
    return _save(fig, path)


def plot_sweep(rows: list[dict], path, strategy: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    levels = [r["level"] for r in rows]
    ax.plot(levels, [r["mac_reduction"] for r in rows], marker="o", label="MAC reduction")
    ax.set_xlabel("pruning level")
    ax.set_ylabel("MAC reduction (x)")
    acc = [r.get("accuracy") for r in rows]
    if any(a is not None and a == a for a in acc):
        ax2 = ax.twinx()
        ax2.plot(levels, acc, marker="s", color="tab:red", label="top-1")
        ax2.set_ylabel("top-1 accuracy")
        ax2.set_ylim(0.0, 1.02)
    ax.set_title(f"sweep {strategy}".strip())
    return _save(fig, path)


def plot_train(log: list[dict], path) -> Path:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.0, 3.6))
    ep = [r["epoch"] for r in log]
    ax1.plot(ep, [r["ce_loss"] for r in log], label="cross-entropy")
    ax1.plot(ep, [r["top1"] for r in log], label="top-1")
    ax1.set_xlabel("epoch")
    ax1.legend(fontsize=7)
    for key in log[0]:
        if key.startswith("mean_fcmask_"):
            ax2.plot(ep, [r[key] for r in log], lw=0.8, label=key[len("mean_fcmask_"):])
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("mean FCMask")
    ax2.set_ylim(0.0, 1.02)
    axr = ax2.twinx()
    axr.plot(ep, [r["projected_mac_reduction"] for r in log], "k--", label="MAC reduction")
    axr.set_ylabel("projected MAC reduction (x)")
    ax2.legend(fontsize=6, loc="lower left")
    return _save(fig, path)


def plot_bench(result, path) -> Path:
    fig, ax = plt.subplots(figsize=(4.5, 3.4))
    ax.bar(["spatial", "frequency"], [result.spatial_median_s * 1e3, result.freq_median_s * 1e3],
           color=["0.6", "tab:blue"])
    ax.set_ylabel("median time (ms)")
    ax.set_title(f"level {result.level:g}: {result.speedup:.2f}x measured, {result.mac_speedup:.2f}x by MACs",
                 fontsize=9)
    return _save(fig, path)
