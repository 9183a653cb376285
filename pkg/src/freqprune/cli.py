"""Batch command-line front end.

Every command writes its outputs plus a ``manifest.json`` into ``--out``.
Exit codes: 0 success, 1 validation error, 2 I/O or format error,
3 verification failure.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import sys
from contextlib import nullcontext
from importlib import metadata
from pathlib import Path

import numpy as np

from .tensor import FormatError

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_VERIFY = 0, 1, 2, 3
STRATEGIES = ("channel", "coef", "chan-coef", "band")


class VerificationFailed(Exception):
    pass


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def _dtype(args):
    return np.float32 if args.dtype == "f32" else np.float64


def _levels(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"levels must be comma-separated numbers, got {text!r}") from None


# ------------------------------------------------------------ input loading

def _is_checkpoint(path: Path) -> bool:
    p = path / "checkpoint.json" if path.is_dir() else path
    if not p.is_file() or p.suffix != ".json":
        return False
    try:
        return json.loads(p.read_text()).get("format") == "freqprune-checkpoint"
    except (json.JSONDecodeError, UnicodeDecodeError, AttributeError):
        return False


def load_arch(spec: str):
    """(ArchConfig, Model or None) from a checkpoint, an architecture JSON or a shipped config name."""
    from .costmodel import ArchConfig, shipped_config
    from .nn.checkpoint import load_checkpoint

    p = Path(spec)
    if p.exists():
        if _is_checkpoint(p):
            model, manifest = load_checkpoint(p)
            return model.to_arch(manifest.get("name", p.stem)), model
        if p.is_dir():
            raise FileNotFoundError(f"{p}: directory holds no checkpoint.json")
        return ArchConfig.load(p), None
    return ArchConfig.load(shipped_config(spec)), None


def load_model(spec: str, seed: int, dtype):
    """Trainable model: a checkpoint as saved, or a fresh seeded one from an architecture."""
    from .nn.model import model_from_arch

    arch, model = load_arch(spec)
    if model is None:
        model = model_from_arch(arch, seed=seed, dtype=dtype)
    elif model.dtype != np.dtype(dtype):
        raise ValueError(f"{spec}: checkpoint is {model.dtype}, --dtype asks for {np.dtype(dtype)}")
    return arch, model


def load_data(args, model):
    from .nn.data import parse_dataset

    train, test = parse_dataset(args.dataset, seed=args.seed, size=model.input_shape[1], norm=args.norm)
    if train.images.shape[1:] != model.input_shape:
        raise ValueError(f"dataset images are {train.images.shape[1:]}, model expects {model.input_shape}")
    dt = model.dtype
    return train.astype(dt), test.astype(dt)


def load_source(path: str):
    """Pruning source for prune/sweep: a profile JSON or a checkpoint's learned FCMasks."""
    from .masks import Profile

    p = Path(path)
    if _is_checkpoint(p):
        from .nn.checkpoint import load_checkpoint

        model, _ = load_checkpoint(p)
        return {l.name: (l.params["fc_in"], l.params["fc_out"]) for l in model.freq_layers()}
    return Profile.load(p)


# ---------------------------------------------------------------- commands

def cmd_verify(args, out: Path, outputs: list) -> int:
    from .dct import perturbed_basis
    from .verify import format_table, run_suites

    ctx = perturbed_basis(args.perturb_basis) if args.perturb_basis else nullcontext()
    with ctx:
        results = run_suites(args.dtype, args.seed, args.suite or None)
    print(format_table(results))
    path = out / "verify.json"
    path.write_text(json.dumps({"dtype": args.dtype, "suites": [r.to_json() for r in results]}, indent=1))
    outputs.append(path)
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise VerificationFailed("failing suites: " + ", ".join(failed))
    return EXIT_OK


def cmd_profile(args, out: Path, outputs: list) -> int:
    from .masks import profile_activations

    _, model = load_model(args.arch, args.seed, _dtype(args))
    train, _ = load_data(args, model)
    if args.limit:
        train = train.subset(slice(0, args.limit))
    prof = profile_activations(model, train)
    path = out / "profile.json"
    prof.save(path)
    outputs.append(path)
    for name, lp in prof.layers.items():
        print(f"{name:<24} k={lp.k} samples={lp.samples} mean |coef| DC={lp.importance[:, 0].mean():.4g}")
    return EXIT_OK


def _print_reduction(arch, masks) -> None:
    from .costmodel import network_macs

    rep = network_macs(arch, masks)
    wrapped = {l.mask or l.name for l in arch.wrapped_layers()}
    print(f"baseline {rep.baseline_total:,} MACs -> {rep.pruned_total:,} MACs incl. transforms")
    print(f"projected MAC reduction: {rep.reduction:.4f}x network, "
          f"{rep.wrapped_reduction(wrapped):.4f}x wrapped layers")


def cmd_prune(args, out: Path, outputs: list) -> int:
    from .costmodel import _fcmask_masks, profile_masks
    from .masks import Profile

    if not 0.0 <= args.level <= 1.0:
        raise ValueError(f"--level must be in [0, 1], got {args.level}")
    arch, _ = load_arch(args.arch)
    source = load_source(args.profile)
    if isinstance(source, Profile):
        masks = profile_masks(arch, source, args.strategy, args.level)
    else:
        masks = _fcmask_masks(arch, source, args.strategy, args.level)
    if not masks.layers:
        raise ValueError("the pruning source has no entries for this architecture's wrapped layers")
    path = out / "masks.json"
    masks.save(path)
    outputs.append(path)
    _print_reduction(arch, masks)
    return EXIT_OK


def cmd_train(args, out: Path, outputs: list) -> int:
    from .nn.checkpoint import save_checkpoint
    from .nn.train import TrainConfig, log_columns, train

    base = json.loads(Path(args.config).read_text()) if args.config else {}
    overrides = {"schedule": args.schedule, "lam": args.lam, "lr_weights": args.lr_weights,
                 "lr_fcmask": args.lr_fcmask, "pretrain_epochs": args.pretrain_epochs,
                 "mask_epochs": args.mask_epochs, "refine_epochs": args.refine_epochs,
                 "batch_size": args.batch_size, "reinit": args.reinit or None}
    fields = {**base, **{k: v for k, v in overrides.items() if v is not None}, "seed": args.seed}
    try:
        cfg = TrainConfig(**fields)
    except TypeError as exc:
        raise ValueError(f"bad train config: {exc}") from None
    _, model = load_model(args.arch, args.seed, _dtype(args))
    train_set, test_set = load_data(args, model)

    def progress(row):
        if not args.quiet:
            print(f"epoch {row['epoch']:>3} {row['phase']:<8} loss {row['loss']:.4f} top1 {row['top1']:.4f} "
                  f"reduction {row['projected_mac_reduction']:.3f}x", flush=True)

    result = train(model, train_set, test_set, cfg, progress)
    ck = save_checkpoint(model, out / "checkpoint", cfg.to_json(), cfg.lam)
    log_path = out / "train_log.csv"
    log_path.write_text(result.log_csv() if result.log else ",".join(log_columns(model)) + "\n")
    mask_path = out / "masks.json"
    result.masks.save(mask_path)
    outputs += [ck, log_path, mask_path]
    if result.log and not args.no_plot:
        from .plotting import plot_train

        outputs.append(plot_train(result.log, out / "train.png"))
    print(f"final top1 {result.log[-1]['top1']:.4f}" if result.log else "no epochs run")
    _print_reduction(model.to_arch(), result.masks)
    return EXIT_OK


def cmd_eval(args, out: Path, outputs: list) -> int:
    from .masks import MaskSet
    from .nn.train import evaluate

    _, model = load_model(args.arch, args.seed, _dtype(args))
    if args.masks:
        model.load_masks(MaskSet.load(args.masks))
    _, test = load_data(args, model)
    acc = evaluate(model, test, args.mask_mode)
    reduction = model.wrapped_reduction() if args.mask_mode == "fixed-band" else None
    print(f"top1 {acc:.6f} on {len(test)} images (mask mode {args.mask_mode})")
    path = out / "eval.json"
    path.write_text(json.dumps({"top1": acc, "images": len(test), "mask_mode": args.mask_mode,
                                "wrapped_mac_reduction": reduction}, indent=1))
    outputs.append(path)
    return EXIT_OK


def cmd_cost(args, out: Path, outputs: list) -> int:
    from .costmodel import network_macs
    from .masks import MaskSet

    arch, _ = load_arch(args.arch)
    if args.no_transforms:
        arch = arch.with_transforms(None)
    elif args.k is not None:
        arch = arch.with_transforms(args.k)
    masks = MaskSet.load(args.masks) if args.masks else None
    rep = network_macs(arch, masks)
    print(rep.table())
    path = out / "cost.csv"
    path.write_text(rep.to_csv())
    outputs.append(path)
    if not args.no_plot:
        from .plotting import plot_cost

        outputs.append(plot_cost(rep, out / "cost.png"))
    return EXIT_OK


def cmd_sweep(args, out: Path, outputs: list) -> int:
    from .costmodel import sweep_report, write_sweep_csv
    from .nn.train import evaluate

    if any(not 0.0 <= v <= 1.0 for v in args.levels):
        raise ValueError("every level must be in [0, 1]")
    arch, model = load_arch(args.arch)
    source = load_source(args.profile)
    accuracy = None
    if args.dataset:
        if model is None:
            raise ValueError("accuracy needs a trained checkpoint as --arch")
        _, test = load_data(args, model)

        def accuracy(masks):
            model.load_masks(masks)
            return evaluate(model, test, "fixed-band")

    rows = sweep_report(arch, source, args.levels, args.strategy, accuracy)
    path = out / "sweep.csv"
    write_sweep_csv(rows, path)
    outputs.append(path)
    for r in rows:
        acc = "" if r["accuracy"] is None else f"  top1 {r['accuracy']:.4f}"
        print(f"level {r['level']:<6g} reduction {r['mac_reduction']:.4f}x{acc}")
    if not args.no_plot:
        from .plotting import plot_sweep

        outputs.append(plot_sweep(rows, out / "sweep.png", args.strategy))
    return EXIT_OK


def cmd_bench(args, out: Path, outputs: list) -> int:
    from .bench import run_bench

    res = run_bench(args.c_in, args.c_out, args.h, args.w, args.k, args.level, reps=args.reps,
                    warmup=args.warmup, threads=args.threads or 1, seed=args.seed, dtype=_dtype(args), n=args.batch)
    print(res.summary())
    path = out / "bench.json"
    path.write_text(json.dumps(res.to_json(), indent=1))
    outputs.append(path)
    if not args.no_plot:
        from .plotting import plot_bench

        outputs.append(plot_bench(res, out / "bench.png"))
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default="out", help="output directory (created if missing)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--dtype", choices=("f32", "f64"), default="f64")
    common.add_argument("--threads", type=int, default=None,
                        help="BLAS thread cap (bench defaults to 1, other commands to no cap)")
    common.add_argument("--no-plot", action="store_true", help="skip PNG figures")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--dataset", default="synthetic",
                      help="CIFAR-10 directory or batch file, or synthetic[:key=value,...]")
    data.add_argument("--norm", default=None, help="JSON file with per-channel mean and std")

    ap = argparse.ArgumentParser(prog="freqprune", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=_version())
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", parents=[common], help="run the property suites")
    p.add_argument("--suite", action="append", help="run only this suite (repeatable)")
    p.add_argument("--perturb-basis", type=float, default=0.0, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("profile", parents=[common, data], help="mean |coefficient| per wrapped layer")
    p.add_argument("--arch", required=True, help="checkpoint, architecture JSON or shipped config name")
    p.add_argument("--limit", type=int, default=None, help="profile only the first N training images")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("prune", parents=[common], help="masks from a profile or learned FCMasks")
    p.add_argument("--arch", required=True)
    p.add_argument("--profile", required=True, help="profile JSON or checkpoint")
    p.add_argument("--strategy", choices=STRATEGIES, default="band")
    p.add_argument("--level", type=float, required=True, help="fraction of coefficients to prune")
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("train", parents=[common, data], help="learn FCMasks and refine")
    p.add_argument("--arch", default="toy_separable_24")
    p.add_argument("--config", default=None, help="train config JSON; flags override its fields")
    p.add_argument("--schedule", choices=("baseline", "freeze-refine", "freeze-learn-refine", "alternate"))
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--lr-weights", type=float, default=None)
    p.add_argument("--lr-fcmask", type=float, default=None)
    p.add_argument("--pretrain-epochs", type=int, default=None)
    p.add_argument("--mask-epochs", type=int, default=None)
    p.add_argument("--refine-epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--reinit", action="store_true", help="re-initialize weights before refinement")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common, data], help="top-1 accuracy of a checkpoint")
    p.add_argument("--arch", required=True, help="checkpoint")
    p.add_argument("--mask-mode", choices=("soft", "fixed-band"), default="fixed-band")
    p.add_argument("--masks", default=None, help="mask JSON to apply before evaluating")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cost", parents=[common], help="per-layer MAC report")
    p.add_argument("--arch", required=True)
    p.add_argument("--masks", default=None)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--no-transforms", action="store_true", help="report the unwrapped network")
    g.add_argument("--k", type=int, default=None, help="re-wrap every wrapped layer with this macroblock")
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("sweep", parents=[common], help="MAC reduction (and accuracy) over pruning levels")
    p.add_argument("--arch", required=True)
    p.add_argument("--profile", required=True, help="profile JSON or checkpoint")
    p.add_argument("--strategy", choices=STRATEGIES, default="band")
    p.add_argument("--levels", type=_levels, default=_levels("0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8"))
    p.add_argument("--dataset", default=None, help="evaluate accuracy at each level on this dataset")
    p.add_argument("--norm", default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bench", parents=[common], help="wall-clock spatial vs banded frequency 1x1")
    p.add_argument("--c-in", type=int, default=512)
    p.add_argument("--c-out", type=int, default=512)
    p.add_argument("--h", type=int, default=28)
    p.add_argument("--w", type=int, default=28)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--level", type=float, default=0.5)
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--batch", type=int, default=1)
    p.set_defaults(func=cmd_bench)
    return ap


def _jsonable(v):
    return v if isinstance(v, (str, int, float, bool, type(None), list)) else str(v)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    outputs: list[Path] = []
    code = EXIT_OK
    error = None
    try:
        out.mkdir(parents=True, exist_ok=True)
        if args.threads is not None and args.threads < 1:
            raise ValueError("--threads must be >= 1")
        if args.threads is not None:
            from threadpoolctl import threadpool_limits

            limits = threadpool_limits(limits=args.threads)
        else:
            limits = nullcontext()
        with limits:
            code = args.func(args, out, outputs)
    except VerificationFailed as exc:
        code, error = EXIT_VERIFY, str(exc)
    except (FormatError, json.JSONDecodeError, OSError, UnicodeDecodeError) as exc:
        code, error = EXIT_IO, str(exc)
    except (ValueError, KeyError) as exc:
        code, error = EXIT_VALIDATION, str(exc)
    if error:
        print(f"freqprune {args.command}: error: {error}", file=sys.stderr)
    if out.is_dir():
        manifest = {
            "command": args.command,
            "argv": argv,
            "args": {k: _jsonable(v) for k, v in vars(args).items() if k != "func"},
            "seed": args.seed,
            "out": str(out),
            "version": _version(),
            "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
            "exit_code": code,
            "error": error,
            "outputs": [str(p.relative_to(out)) if p.is_relative_to(out) else str(p) for p in outputs],
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return code


if __name__ == "__main__":
    sys.exit(main())
