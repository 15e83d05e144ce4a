"""Command-line entry point.

Subcommands cover the full experiment loop: synthetic data generation,
training, cross-validation, saliency-map export, the attention scaling
benchmark, and the gradient verification suite.  Every command that writes
an artifact also writes an atomic JSON manifest next to it with the fully
materialized configuration, so any output can be regenerated from its
manifest alone.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from .attention import bench_attention
from .backbone import (
    config_from_named,
    default_model_config,
    init_model_params,
)
from .data import generate_synthetic, load_directory, save_dataset
from .evaluate import (
    cross_validate,
    report_to_json,
    THREADS_ENV,
)
from .explain import export_heatmap, gradcam, peak_coordinates
from .gradsuite import TOLERANCE, format_suite, run_gradient_suite
from .model_io import assign_named, load_model, save_model
from .tensor import Tensor
from .train import TrainConfig, predict, train

PROG = "mixfire"


def _write_atomic(path: str, payload: str | bytes) -> None:
    mode = "wb" if isinstance(payload, bytes) else "w"
    tmp = path + ".tmp"
    with open(tmp, mode) as fh:
        fh.write(payload)
    os.replace(tmp, path)


def _write_manifest(path: str, command: str, config: dict,
                    artifacts: list[str], started: float) -> None:
    manifest = {
        "command": command,
        "config": config,
        "artifacts": sorted(artifacts),
        "duration_s": round(time.perf_counter() - started, 3),
    }
    _write_atomic(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# argparse plumbing


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _size_int(text: str) -> int:
    value = int(text)
    if value < 16:
        raise argparse.ArgumentTypeError(f"image size must be >= 16, "
                                         f"got {value}")
    return value


def _fold_count(text: str) -> int:
    value = int(text)
    if value < 2:
        raise argparse.ArgumentTypeError(f"need at least 2 folds, "
                                         f"got {value}")
    return value


def _length_list(text: str) -> list[int]:
    try:
        lengths = [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad length list {text!r}") from exc
    if len(lengths) < 4:
        raise argparse.ArgumentTypeError(
            f"need at least 4 lengths for a slope fit, got {len(lengths)}")
    if any(b <= a for a, b in zip(lengths, lengths[1:])):
        raise argparse.ArgumentTypeError("lengths must be strictly "
                                         "increasing")
    if lengths[0] < 1:
        raise argparse.ArgumentTypeError("lengths must be >= 1")
    return lengths


def _add_model_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--token-hidden", type=_positive_int, default=128,
                    help="token-mixing MLP hidden width (presets: "
                         "64, 128, 256)")
    sp.add_argument("--channel-hidden", type=_positive_int, default=512,
                    help="channel-mixing MLP hidden width (presets: "
                         "256, 512, 1024)")
    sp.add_argument("--d-model", type=_positive_int, default=64,
                    help="token embedding width")
    sp.add_argument("--image-size", type=_size_int, default=64,
                    help="square input resolution")
    sp.add_argument("--mixer-depth", type=_positive_int, default=1,
                    help="number of stacked mixer blocks")


def _add_train_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--epochs", type=_positive_int, default=12)
    sp.add_argument("--batch-size", type=_positive_int, default=16)
    sp.add_argument("--lr", type=float, default=1e-3,
                    help="Adam learning rate")
    sp.add_argument("--seed", type=int, default=0)


def _model_config(args: argparse.Namespace, num_classes: int):
    return default_model_config(
        input_size=args.image_size, d_model=args.d_model,
        token_hidden=args.token_hidden, channel_hidden=args.channel_hidden,
        num_classes=num_classes, mixer_depth=args.mixer_depth)


def _train_config(args: argparse.Namespace) -> TrainConfig:
    return TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                       learning_rate=args.lr, seed=args.seed)


def _config_dict(args: argparse.Namespace) -> dict:
    skip = {"func", "command"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    dataset = generate_synthetic(args.per_class, args.size, args.seed)
    paths = save_dataset(dataset, args.out)
    manifest = os.path.join(args.out, "manifest.json")
    _write_manifest(manifest, "gen-data", _config_dict(args),
                    [os.path.join(args.out, p) for p in paths], started)
    print(f"wrote {len(paths)} images across "
          f"{len(dataset.class_names)} classes to {args.out}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    dataset = load_directory(args.data, args.image_size)
    model_config = _model_config(args, len(dataset.class_names))
    params, history = train(dataset, model_config, _train_config(args))
    predictions = predict(params, dataset.images, model_config)
    accuracy = float(np.mean(np.asarray(predictions) ==
                             np.asarray(dataset.labels)))
    save_model(params, args.out)
    _write_manifest(args.out + ".manifest.json", "train",
                    _config_dict(args), [args.out], started)
    print(f"trained {args.epochs} epochs on {len(dataset)} images; "
          f"final loss {history[-1]:.4f}, train accuracy {accuracy:.4f}")
    print(f"model written to {args.out}")
    return 0


def cmd_cv(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    dataset = load_directory(args.data, args.image_size)
    model_config = _model_config(args, len(dataset.class_names))
    report = cross_validate(dataset, model_config, _train_config(args),
                            k=args.folds, seed=args.seed,
                            threads=args.threads)
    _write_atomic(args.report, report_to_json(report))
    _write_manifest(args.report + ".manifest.json", "cv",
                    _config_dict(args), [args.report], started)
    for i, fold in enumerate(report.folds):
        print(f"fold {i + 1}/{args.folds}: accuracy={fold.accuracy:.4f} "
              f"f1={fold.f1:.4f}")
    for key in ("accuracy", "precision", "recall", "f1"):
        print(f"mean {key}={report.mean[key]:.4f} std={report.std[key]:.4f}")
    print(f"report written to {args.report}")
    return 0


def _load_gray_image(path: str, size: int) -> np.ndarray:
    from .data import _load_image, _resize_bilinear

    pixels = _load_image(path)
    if pixels.shape != (size, size):
        pixels = _resize_bilinear(pixels, size)
    return pixels.astype(float)[None] / 255.0


def cmd_explain(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    named = load_model(args.model)
    config = config_from_named(named)
    params = init_model_params(config, np.random.default_rng(0))
    assign_named(params, named)
    size = config.backbone.input_size
    image = _load_gray_image(args.image, size)
    cam = gradcam(params, Tensor(image), config, args.target_class)
    export_heatmap(cam, args.out, upsample_to=(size, size))
    _write_manifest(args.out + ".manifest.json", "explain",
                    _config_dict(args), [args.out, args.out + ".txt"],
                    started)
    peak = peak_coordinates(cam.values)
    print(f"class {args.target_class} saliency peak at feature cell "
          f"{peak}; heatmap written to {args.out}")
    return 0


def cmd_bench_attn(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    result = bench_attention(args.lengths, args.d, repeats=args.repeats,
                             seed=args.seed)
    _write_atomic(args.out, result.to_csv())
    _write_manifest(args.out + ".manifest.json", "bench-attn",
                    _config_dict(args), [args.out], started)
    print(f"linear slope {result.linear_slope:.3f}, "
          f"quadratic slope {result.quadratic_slope:.3f}; "
          f"CSV written to {args.out}")
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    results = run_gradient_suite(seed=args.seed)
    print(format_suite(results))
    return 0 if all(err < TOLERANCE for _, err in results) else 1


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=PROG,
        description="Attention-augmented mixer classifier: data, training, "
                    "cross-validation, saliency, and verification tools.")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("gen-data", help="write a synthetic shape dataset")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--per-class", type=_positive_int, default=200)
    sp.add_argument("--size", type=_size_int, default=64)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("train", help="train one model on a dataset dir")
    sp.add_argument("--data", required=True, help="dataset directory")
    sp.add_argument("--out", required=True, help="model file to write")
    _add_model_flags(sp)
    _add_train_flags(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("cv", help="k-fold cross-validation")
    sp.add_argument("--data", required=True, help="dataset directory")
    sp.add_argument("--report", default="cv_report.json",
                    help="metrics JSON to write")
    sp.add_argument("--folds", type=_fold_count, default=5)
    sp.add_argument("--threads", type=_positive_int, default=None,
                    help=f"concurrent folds (default: ${THREADS_ENV} or 1)")
    _add_model_flags(sp)
    _add_train_flags(sp)
    sp.set_defaults(func=cmd_cv)

    sp = sub.add_parser("explain", help="write a Grad-CAM heatmap PGM")
    sp.add_argument("--model", required=True, help="trained model file")
    sp.add_argument("--image", required=True, help="PGM or PNG image")
    sp.add_argument("--class", dest="target_class", type=int, required=True,
                    help="class index to explain")
    sp.add_argument("--out", required=True, help="heatmap PGM to write")
    sp.set_defaults(func=cmd_explain)

    sp = sub.add_parser("bench-attn",
                        help="time linear vs quadratic attention")
    sp.add_argument("--lengths", type=_length_list,
                    default=[256, 512, 1024, 2048, 4096],
                    help="comma-separated, strictly increasing, >= 4 values")
    sp.add_argument("--d", type=_positive_int, default=32,
                    help="feature width")
    sp.add_argument("--repeats", type=_positive_int, default=3)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default="bench_attn.csv")
    sp.set_defaults(func=cmd_bench_attn)

    sp = sub.add_parser("gradcheck",
                        help="finite-difference gradient verification")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - boundary turns faults into exit 1
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
