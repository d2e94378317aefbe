"""Desk-scale strategy comparison on synthetic data.

Generates a seeded dataset, trains the same model under the plain,
efficient, and random-sampling strategies, and prints per-strategy
validation metrics plus the fraction of samples each strategy processed.

Usage:
    python scripts/desk_scale_experiment.py [OUT_DIR] [--epochs N] [--count N]
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from rdpnet.curriculum import StageSchedule, expected_sample_fraction
from rdpnet.data import DatasetManifest, SyntheticGenConfig, generate_synthetic
from rdpnet.losses import LossConfig
from rdpnet.model import RdpNet, RdpNetConfig
from rdpnet.tensor import Rng
from rdpnet.trainer import TrainConfig, train


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("out", nargs="?", default="runs/desk_scale", type=Path)
    parser.add_argument("--epochs", type=int, default=45)
    parser.add_argument("--count", type=int, default=200)
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--dtype", choices=["float32", "float64"], default="float32")
    args = parser.parse_args()

    args.out.mkdir(parents=True, exist_ok=True)
    gen = SyntheticGenConfig(count=args.count, size=(64, 64), seed=args.seed)
    manifest = generate_synthetic(gen, args.out / "data")
    n_train = int(0.8 * args.count)
    train_m = DatasetManifest(entries=manifest.entries[:n_train], base_dir=manifest.base_dir)
    val_m = DatasetManifest(entries=manifest.entries[n_train:], base_dir=manifest.base_dir)
    print(f"dataset: {len(train_m)} train / {len(val_m)} val pairs (64x64)")

    model_cfg = RdpNetConfig(patch_size=4, embed_dim=16, depth=3, out_ch=8,
                             dw_kernel=5, dtype=args.dtype)
    sched = StageSchedule(
        warmup_end=max(1, args.epochs // 4),
        medium_start=max(2, args.epochs // 2),
        hard_start=max(3, (3 * args.epochs) // 4),
        total_epochs=args.epochs,
    )
    print(f"schedule: warmup {sched.warmup_end}, medium {sched.medium_start}, "
          f"hard {sched.hard_start}, total {args.epochs}; expected fraction "
          f"{expected_sample_fraction(sched):.4f} (efficient)")

    rows = []
    for strategy in ("plain", "efficient", "random_sampling"):
        tc = TrainConfig(epochs=args.epochs, batch_size=16, strategy=strategy,
                         seed=args.seed)
        model = RdpNet.build(model_cfg, Rng(args.seed).derive("init"))
        t0 = time.time()
        res = train(model, train_m, val_m, tc, sched, LossConfig(),
                    args.out / strategy)
        last = res.history[-1]
        rows.append((
            strategy,
            last["val_precision"],
            last["val_recall"],
            last["val_f1"],
            res.state.samples_processed / (args.epochs * len(train_m)),
            time.time() - t0,
        ))
        print(f"  {strategy}: done in {rows[-1][5]:.0f}s")

    print()
    print(f"{'strategy':<16} {'precision':>9} {'recall':>9} {'f1':>9} "
          f"{'samples':>9} {'seconds':>8}")
    for name, p, r, f1, frac, secs in rows:
        print(f"{name:<16} {p:>9.4f} {r:>9.4f} {f1:>9.4f} {frac:>9.4f} {secs:>8.0f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
