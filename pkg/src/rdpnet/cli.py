"""Operator-facing command line.

Subcommands: gen-data, tile, train, score, split, eval, predict, edge-map,
error-map, param-count, config dump. Exit codes: 0 success, 1 usage error,
2 data/validation error, 3 numerical failure (non-finite loss).

A run is driven by a flat key=value config file (see rdpnet.config); flags
override file values, and all randomness flows from the single seed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint
from .config import RunConfig, load_config
from .curriculum import read_difficulty_csv, split, write_difficulty_csv, write_split_file
from .data import (
    DatasetManifest,
    SamplePair,
    SyntheticGenConfig,
    generate_synthetic,
    load_mask_raw,
    read_manifest,
    save_rgb,
    tile,
    write_manifest,
)
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    DomainError,
    NonFiniteError,
    RdpNetError,
    ShapeError,
    UsageError,
)
from .inference import predict_to_dir
from .losses import edge_weight_map
from .metrics import format_metrics_table, metrics_report, render_error_map
from .model import RdpNet, param_count_formula
from .tensor import Rng
from .trainer import evaluate, load_train_checkpoint, train


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors must exit 1, not argparse's 2
        raise UsageError(message)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="key=value run configuration file")
    p.add_argument("--seed", type=int, help="root random seed (overrides config)")
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads; only 1 (bit-exact single-threaded mode) is implemented")
    p.add_argument("--out", type=Path, help="output directory/file (overrides config out_dir)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one configuration key (repeatable; flags win over file)")


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, raw = item.partition("=")
        cfg.set(key.strip(), raw)
    if args.seed is not None:
        cfg.set("seed", args.seed)
    if getattr(args, "out", None) is not None:
        cfg.set("out_dir", str(args.out))
    if getattr(args, "strategy", None):
        cfg.set("strategy", args.strategy)
    if args.threads < 1:
        raise UsageError(f"--threads must be >= 1, got {args.threads}")
    return cfg


def _load_manifest_arg(path, what: str) -> DatasetManifest:
    if not path:
        raise UsageError(f"missing {what} manifest path")
    p = Path(path)
    if not p.exists():
        raise DataError(f"{what} manifest {p} does not exist")
    return read_manifest(p)


def build_parser() -> _Parser:
    parser = _Parser(prog="rdpnet", description=__doc__)
    parser.add_argument("--version", action="version", version=f"rdpnet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic bi-temporal dataset")
    _add_common(p)
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--shapes-min", type=int, default=1)
    p.add_argument("--shapes-max", type=int, default=3)
    p.add_argument("--jitter", type=int, default=12)
    p.add_argument("--noise", type=float, default=3.0)

    p = sub.add_parser("tile", help="cut one large pair into non-overlapping tiles")
    _add_common(p)
    p.add_argument("--image-a", required=True, type=Path)
    p.add_argument("--image-b", required=True, type=Path)
    p.add_argument("--mask", required=True, type=Path)
    p.add_argument("--id", dest="pair_id", default="pair")
    p.add_argument("--tile-size", type=int, default=256)

    p = sub.add_parser("train", help="run the training loop")
    _add_common(p)
    p.add_argument("--train-manifest", type=Path)
    p.add_argument("--val-manifest", type=Path)
    p.add_argument("--strategy", choices=["efficient", "random", "plain"])
    p.add_argument("--resume", type=Path, help="trainer-state checkpoint to continue from")

    p = sub.add_parser("score", help="write per-sample difficulty losses as CSV")
    _add_common(p)
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--manifest", required=True, type=Path)

    p = sub.add_parser("split", help="partition a difficulty CSV into easy/medium/hard")
    _add_common(p)
    p.add_argument("--scores", required=True, type=Path)
    p.add_argument("--ratio", default="4:2:3")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    _add_common(p)
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--manifest", required=True, type=Path)

    p = sub.add_parser("predict", help="write predicted change masks")
    _add_common(p)
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--manifest", required=True, type=Path)

    p = sub.add_parser("edge-map", help="render the boundary-weight field of a mask")
    _add_common(p)
    p.add_argument("--mask", required=True, type=Path)

    p = sub.add_parser("error-map", help="render a red/green FP/FN comparison raster")
    _add_common(p)
    p.add_argument("--pred", required=True, type=Path)
    p.add_argument("--gt", required=True, type=Path)

    p = sub.add_parser("param-count", help="report parameter counts for a configuration")
    _add_common(p)

    p = sub.add_parser("config", help="configuration utilities")
    _add_common(p)
    p.add_argument("action", choices=["dump"])

    return parser


# ---------------------------------------------------------------------------
# command bodies


def _cmd_gen_data(args) -> int:
    cfg = _run_config(args)
    out_dir = Path(cfg["out_dir"])
    gen = SyntheticGenConfig(
        count=args.count,
        size=(args.height, args.width),
        shapes_min=args.shapes_min,
        shapes_max=args.shapes_max,
        color_jitter=args.jitter,
        noise_sigma=args.noise,
        seed=cfg["seed"],
    )
    manifest = generate_synthetic(gen, out_dir)
    print(f"wrote {len(manifest)} sample pairs to {out_dir} (manifest.jsonl)")
    return 0


def _cmd_tile(args) -> int:
    cfg = _run_config(args)
    out_dir = Path(cfg["out_dir"])
    pair = SamplePair(
        id=args.pair_id,
        image_a=str(args.image_a),
        image_b=str(args.image_b),
        mask=str(args.mask),
    )
    tiles = tile(pair, out_dir, tile_size=args.tile_size)
    write_manifest(DatasetManifest(entries=tiles, base_dir=out_dir),
                   out_dir / "manifest.jsonl")
    print(f"wrote {len(tiles)} tiles to {out_dir} (manifest.jsonl)")
    return 0


def _cmd_train(args) -> int:
    cfg = _run_config(args)
    if args.strategy == "random":
        cfg.set("strategy", "random_sampling")
    train_path = args.train_manifest or cfg["train_manifest"]
    val_path = args.val_manifest or cfg["val_manifest"]
    train_manifest = _load_manifest_arg(train_path, "training")
    val_manifest = _load_manifest_arg(val_path, "validation")
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run_config.txt").write_text(cfg.dump(), encoding="utf-8")

    if args.resume:
        model, state = load_train_checkpoint(args.resume)
    else:
        model = RdpNet.build(cfg.model_config(), Rng(cfg["seed"]).derive("init"))
        state = None
    result = train(
        model,
        train_manifest,
        val_manifest,
        cfg.train_config(),
        cfg.schedule(),
        cfg.loss_config(),
        out_dir,
        resume_state=state,
    )
    n = len(train_manifest)
    fraction = result.state.samples_processed / (cfg["epochs"] * n)
    last = result.history[-1] if result.history else {}
    print(f"final checkpoint: {result.final_checkpoint}")
    print(f"samples-processed fraction: {fraction:.4f}")
    if last:
        print(
            f"final val precision/recall/f1: "
            f"{last['val_precision']:.4f}/{last['val_recall']:.4f}/{last['val_f1']:.4f}"
        )
    return 0


def _model_from_checkpoint(path: Path) -> RdpNet:
    if not path.exists():
        raise DataError(f"checkpoint {path} does not exist")
    blob = path.read_bytes()
    if blob[:4] == b"RDPT":
        model, _ = load_train_checkpoint(path)
        return model
    return load_checkpoint(path)


def _cmd_score(args) -> int:
    cfg = _run_config(args)
    from .curriculum import score_samples

    model = _model_from_checkpoint(args.checkpoint)
    manifest = _load_manifest_arg(args.manifest, "scoring")
    scores = score_samples(model, manifest, cfg.loss_config(), batch_size=cfg["batch_size"])
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    path = out / "difficulty.csv"
    write_difficulty_csv(scores, path)
    print(f"wrote {len(scores)} scores to {path}")
    return 0


def _cmd_split(args) -> int:
    cfg = _run_config(args)
    try:
        ratio = tuple(int(x) for x in args.ratio.split(":"))
    except ValueError:
        raise UsageError(f"--ratio expects A:B:C, got {args.ratio!r}") from None
    if len(ratio) != 3:
        raise UsageError(f"--ratio expects three parts, got {args.ratio!r}")
    scores = read_difficulty_csv(args.scores)
    result = split(scores, ratio)
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    path = out / "split.txt"
    write_split_file(result, path)
    print(
        f"split {len(scores)} samples into {len(result.easy)}/{len(result.medium)}/"
        f"{len(result.hard)} (easy/medium/hard) at {path}"
    )
    return 0


def _cmd_eval(args) -> int:
    cfg = _run_config(args)
    model = _model_from_checkpoint(args.checkpoint)
    manifest = _load_manifest_arg(args.manifest, "evaluation")
    result = evaluate(model, manifest, cfg.loss_config(), batch_size=cfg["batch_size"])
    report = metrics_report(result.confusion)
    print(json.dumps(report, sort_keys=True))
    print(format_metrics_table(report))
    return 0


def _cmd_predict(args) -> int:
    cfg = _run_config(args)
    model = _model_from_checkpoint(args.checkpoint)
    manifest = _load_manifest_arg(args.manifest, "prediction")
    out = Path(cfg["out_dir"])
    written = predict_to_dir(model, manifest, out, batch_size=cfg["batch_size"])
    print(f"wrote {len(written)} masks to {out}")
    return 0


def _cmd_edge_map(args) -> int:
    cfg = _run_config(args)
    raw = load_mask_raw(args.mask)
    bad = (raw != 0) & (raw != 255)
    if np.any(bad):
        y, x = np.argwhere(bad)[0]
        raise DataError(f"mask value {int(raw[y, x])} at ({y}, {x}) is neither 0 nor 255")
    wm = edge_weight_map((raw == 255).astype(np.int64), cfg["alpha"], cfg["neighborhood"])
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    path = out / (Path(args.mask).stem + "_edge.png")
    # grayscale scaled by 1/alpha: weights/alpha lies in [0, 1]
    gray = np.rint(255.0 * wm.weights / wm.alpha).astype(np.uint8)
    from PIL import Image

    Image.fromarray(gray, mode="L").save(path, format="PNG")
    print(f"wrote edge-weight raster to {path}")
    return 0


def _cmd_error_map(args) -> int:
    cfg = _run_config(args)
    pred = (load_mask_raw(args.pred) == 255).astype(np.uint8)
    gt = (load_mask_raw(args.gt) == 255).astype(np.uint8)
    rgb = render_error_map(pred, gt)
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    path = out / (Path(args.pred).stem + "_errors.png")
    save_rgb(path, rgb)
    print(f"wrote error map to {path}")
    return 0


def _cmd_param_count(args) -> int:
    cfg = _run_config(args)
    model_cfg = cfg.model_config()
    net = RdpNet.build(model_cfg, rng=None)
    formula = param_count_formula(model_cfg)
    registry = net.param_count
    print(f"config: {model_cfg}")
    print(f"closed-form parameter count: {formula}")
    print(f"registry parameter count:    {registry}")
    print(f"depth-attention length:      {model_cfg.out_ch * model_cfg.depth}")
    print(
        "note: the originally published network totals 1.70M parameters, but its "
        "patch size and embedding width are not public; no configuration here "
        "claims to reproduce that figure exactly."
    )
    return 0


def _cmd_config(args) -> int:
    cfg = _run_config(args)
    if args.action == "dump":
        sys.stdout.write(cfg.dump())
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "tile": _cmd_tile,
    "train": _cmd_train,
    "score": _cmd_score,
    "split": _cmd_split,
    "eval": _cmd_eval,
    "predict": _cmd_predict,
    "edge-map": _cmd_edge_map,
    "error-map": _cmd_error_map,
    "param-count": _cmd_param_count,
    "config": _cmd_config,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except NonFiniteError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (DataError, ConfigError, CheckpointError, ShapeError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RdpNetError as exc:  # any remaining package error is a validation failure
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
