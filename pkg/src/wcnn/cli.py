"""Command-line front end: decompose, train, params, eval.

Exit codes are a stable scripting contract: 0 success, 2 usage or
configuration errors, 3 I/O and codec errors, 4 numerical failures.
All outputs of a run land under its --out directory, together with the
exact resolved configuration that produced them.
"""

from __future__ import annotations

import argparse
import statistics
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, config_to_text, load_config
from .data import (
    gen_synthetic,
    holdout_split,
    ingest_directory,
    kth_style_splits,
    split_from_lists,
    synthetic_preset,
)
from .errors import (
    ArgumentError,
    CheckpointError,
    CodecError,
    ConfigError,
    IngestError,
    NumericalError,
    ProtocolError,
    WcnnError,
)
from .netpbm import load_image, save_pgm
from .network import NetworkSpec, build, count_params, load, save
from .training import TrainConfig, evaluate, he_init, metrics_csv, train
from .wavelet import decompose, haar, reconstruct

EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


def _write_confusion(result, classes, path):
    lines = ["true\\pred," + ",".join(classes)]
    for label, row in zip(classes, result.confusion):
        lines.append(label + "," + ",".join(str(int(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# --- decompose ---------------------------------------------------------------


def cmd_decompose(args):
    image = load_image(args.input)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pair = haar()
    pyramid = decompose(image, pair, args.levels)
    for level_no, level in enumerate(pyramid.levels, start=1):
        for band_name, band in level.bands():
            path = out / f"subband_l{level_no}_{band_name.lower()}.pgm"
            if band_name == "LL":
                save_pgm(band, path)
            else:
                # detail bands are signed; map 0 to mid-gray
                mag = max(float(np.abs(band.data).max()), 1e-12)
                save_pgm(band, path, lo=-mag, hi=mag)
    error = float(np.abs(reconstruct(pyramid, pair).data - image.data).max())
    print(f"wrote {4 * args.levels} subband images to {out}")
    print(f"reconstruction_error={error:.3e}")
    return 0


# --- train -------------------------------------------------------------------


def _resolve_run_config(args, require_out=True):
    overrides = {
        key: getattr(args, key)
        for key in (
            "data",
            "synthetic",
            "out",
            "levels",
            "base_channels",
            "subband_mode",
            "image_size",
            "input_size",
            "per_class_train",
            "per_class_test",
            "learning_rate",
            "batch_size",
            "epochs",
            "seed",
            "log_timing",
        )
        if hasattr(args, key)
    }
    config = load_config(getattr(args, "config", None), overrides)
    if require_out and not config.out:
        raise ConfigError("an output directory is required (--out or 'out' in the config)")
    return config


def _load_training_data(config):
    if bool(config.data) == bool(config.synthetic):
        raise ConfigError("exactly one of --data and --synthetic must be given")
    if config.data:
        dataset = ingest_directory(config.data, config.image_size)
        plans = kth_style_splits(dataset)
    else:
        spec = synthetic_preset(
            config.synthetic,
            per_class_train=config.per_class_train,
            per_class_test=config.per_class_test,
            size=config.image_size,
            seed=config.seed,
        )
        dataset = gen_synthetic(spec)
        plans = [holdout_split(dataset)]
    return dataset, plans


def cmd_train(args):
    config = _resolve_run_config(args)
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved").write_text(config_to_text(config), encoding="utf-8")

    dataset, plans = _load_training_data(config)
    channels = dataset.items[0].image.shape[0]
    net_spec = NetworkSpec(
        input_shape=(channels, config.input_size, config.input_size),
        num_classes=len(dataset.classes),
        levels=config.levels,
        base_channels=config.base_channels,
        subband_mode=config.subband_mode,
    )
    train_config = TrainConfig(
        learning_rate=config.learning_rate,
        adam_beta1=config.adam_beta1,
        adam_beta2=config.adam_beta2,
        adam_eps=config.adam_eps,
        batch_size=config.batch_size,
        epochs=config.epochs,
        seed=config.seed,
        crop_source_size=config.image_size,
        crop_target_size=config.input_size,
        flip_enabled=config.flip,
        log_timing=config.log_timing,
    )

    accuracies = []
    total_params = None
    for plan in plans:
        run_dir = out if len(plans) == 1 else out / f"split{plan.index}"
        run_dir.mkdir(parents=True, exist_ok=True)
        net = he_init(build(net_spec), train_config.seed)
        total_params = count_params(net).total
        result = train(net, dataset, plan, train_config)
        (run_dir / "metrics.csv").write_text(metrics_csv(result.metrics), encoding="utf-8")
        save(result.network, run_dir / "checkpoint.wcnn")
        final_eval = evaluate(result.network, dataset, plan, config=None)
        _write_confusion(final_eval, dataset.classes, run_dir / "confusion.csv")
        accuracies.append(result.best_test_acc)
        if len(plans) > 1:
            print(f"split{plan.index}_test_acc={result.best_test_acc:.4f}")

    mean_acc = statistics.fmean(accuracies)
    if len(accuracies) > 1:
        std = statistics.pstdev(accuracies)
        print(f"splits_mean={mean_acc:.4f} splits_std={std:.4f}")
    print(f"final_test_acc={mean_acc:.4f} params={total_params}")
    return 0


# --- params ------------------------------------------------------------------


def cmd_params(args):
    spec = NetworkSpec(
        input_shape=(args.input_channels, args.input_size, args.input_size),
        num_classes=args.classes,
        levels=args.levels,
        base_channels=args.base_channels,
        subband_mode=args.subband_mode,
    )
    table = count_params(build(spec))
    print(table)
    return 0


# --- eval --------------------------------------------------------------------


def _pick_split(dataset, spec):
    kind, _, rest = spec.partition(":")
    if kind == "group":
        plans = kth_style_splits(dataset)
        try:
            index = int(rest)
        except ValueError:
            raise ArgumentError(f"bad split index {rest!r}") from None
        if not 0 <= index < len(plans):
            raise ArgumentError(f"split index {index} out of range (have {len(plans)})")
        return plans[index]
    if kind == "lists":
        train_list, _, test_list = rest.partition(",")
        if not train_list or not test_list:
            raise ArgumentError("lists split needs 'lists:train.txt,test.txt'")
        return split_from_lists(dataset, train_list, test_list)
    if kind == "holdout":
        return holdout_split(dataset, rest or "train")
    raise ArgumentError(f"unknown split spec {spec!r} (use group:N, lists:a,b, or holdout:g)")


def cmd_eval(args):
    net = load(args.checkpoint)
    size = args.image_size if args.image_size else net.spec.input_shape[1]
    dataset = ingest_directory(args.data, size)
    if len(dataset.classes) != net.spec.num_classes:
        raise ArgumentError(
            f"checkpoint classifies {net.spec.num_classes} classes but dataset has "
            f"{len(dataset.classes)}"
        )
    plan = _pick_split(dataset, args.split)
    result = evaluate(net, dataset, plan)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_confusion(result, dataset.classes, out / "confusion.csv")
    print(f"accuracy={result.accuracy:.4f}")
    return 0


# --- parser ------------------------------------------------------------------


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="wcnn",
        description="Wavelet CNN experiments: multiresolution decomposition, "
        "training, parameter counting, and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose", help="write per-level wavelet subbands as PGM images")
    p.add_argument("input", help="input image (binary PPM or PGM)")
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(cmd=cmd_decompose)

    p = sub.add_parser("train", help="train a model and write checkpoint + metrics")
    p.add_argument("--data", help="dataset root (class/group/image.ppm layout)")
    p.add_argument("--synthetic", help="synthetic preset name (orient4, coarse4)")
    p.add_argument("--config", help="key = value config file; flags override it")
    p.add_argument("--out", help="output directory")
    p.add_argument("--levels", type=int)
    p.add_argument("--base-channels", dest="base_channels", type=int)
    p.add_argument("--subband-mode", dest="subband_mode", choices=("all", "detail-only"))
    p.add_argument("--image-size", dest="image_size", type=int)
    p.add_argument("--input-size", dest="input_size", type=int)
    p.add_argument("--per-class-train", dest="per_class_train", type=int)
    p.add_argument("--per-class-test", dest="per_class_test", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument(
        "--log-timing",
        dest="log_timing",
        action="store_const",
        const=True,
        help="record wall-clock seconds in metrics.csv (breaks byte-identical reruns)",
    )
    p.set_defaults(cmd=cmd_train)

    p = sub.add_parser("params", help="print per-layer trainable parameter counts")
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--base-channels", dest="base_channels", type=int, default=32)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--input-size", dest="input_size", type=int, default=64)
    p.add_argument("--input-channels", dest="input_channels", type=int, default=3)
    p.add_argument("--subband-mode", dest="subband_mode", default="all",
                   choices=("all", "detail-only"))
    p.set_defaults(cmd=cmd_params)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="group:0",
                   help="group:N, lists:train.txt,test.txt, or holdout:groupname")
    p.add_argument("--image-size", dest="image_size", type=int,
                   help="ingestion size (default: the checkpoint's input size)")
    p.add_argument("--out", default=".", help="where to write confusion.csv")
    p.set_defaults(cmd=cmd_eval)

    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        return args.cmd(args)
    except (ArgumentError, ConfigError, ProtocolError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CodecError, CheckpointError, IngestError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except WcnnError as exc:  # anything else from this package is a usage problem
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
