"""Calibration run for the desk-scale acceptance gates.

Generates the 200-pair synthetic dataset, runs the 30-epoch plain-strategy
configuration, then the two 45-epoch strategy-comparison runs, and prints
the numbers the acceptance thresholds pin down.
"""

import json
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from rdpnet.curriculum import StageSchedule
from rdpnet.data import DatasetManifest, SyntheticGenConfig, generate_synthetic
from rdpnet.losses import LossConfig
from rdpnet.model import RdpNet, RdpNetConfig
from rdpnet.tensor import Rng
from rdpnet.trainer import TrainConfig, train

OUT = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("/tmp/calibration")
OUT.mkdir(parents=True, exist_ok=True)

t0 = time.time()
gen = SyntheticGenConfig(count=200, size=(64, 64), seed=20240601)
manifest = generate_synthetic(gen, OUT / "data")
train_m = DatasetManifest(entries=manifest.entries[:160], base_dir=manifest.base_dir)
val_m = DatasetManifest(entries=manifest.entries[160:], base_dir=manifest.base_dir)
print(f"[{time.time()-t0:7.1f}s] dataset ready: {len(train_m)} train / {len(val_m)} val")

model_cfg = RdpNetConfig(patch_size=4, embed_dim=32, depth=6, out_ch=16,
                         dw_kernel=7, dtype="float32")

# criterion 7: plain, 30 epochs
tc = TrainConfig(epochs=30, batch_size=16, strategy="plain", seed=1)
sched = StageSchedule(warmup_end=10, medium_start=20, hard_start=30, total_epochs=30)
model = RdpNet.build(model_cfg, Rng(1).derive("init"))
res = train(model, train_m, val_m, tc, sched, LossConfig(), OUT / "plain30")
first, last = res.history[0], res.history[-1]
best_f1 = max(h["val_f1"] for h in res.history)
print(f"[{time.time()-t0:7.1f}s] plain30: loss {first['train_loss']:.4f} -> "
      f"{last['train_loss']:.4f} (ratio {last['train_loss']/first['train_loss']:.3f}); "
      f"final F1 {last['val_f1']:.4f}, best F1 {best_f1:.4f}")

# criterion 8: 45 epochs, warmup 10/20/30, efficient vs plain, smaller model
cmp_cfg = RdpNetConfig(patch_size=4, embed_dim=16, depth=3, out_ch=8,
                       dw_kernel=5, dtype="float32")
sched45 = StageSchedule(warmup_end=10, medium_start=20, hard_start=30, total_epochs=45)
results = {}
for strategy in ("plain", "efficient"):
    tcs = TrainConfig(epochs=45, batch_size=16, strategy=strategy, seed=2)
    m = RdpNet.build(cmp_cfg, Rng(2).derive("init"))
    r = train(m, train_m, val_m, tcs, sched45, LossConfig(), OUT / f"cmp_{strategy}")
    results[strategy] = r
    print(f"[{time.time()-t0:7.1f}s] {strategy}45: final F1 {r.history[-1]['val_f1']:.4f}, "
          f"samples {r.state.samples_processed} "
          f"(fraction {r.state.samples_processed/(45*160):.5f})")

summary = {
    "plain30": {
        "first_loss": first["train_loss"],
        "last_loss": last["train_loss"],
        "final_f1": last["val_f1"],
        "best_f1": best_f1,
    },
    "cmp": {
        s: {
            "final_f1": results[s].history[-1]["val_f1"],
            "samples": results[s].state.samples_processed,
        }
        for s in results
    },
}
(OUT / "summary.json").write_text(json.dumps(summary, indent=2))
print(f"[{time.time()-t0:7.1f}s] done; summary at {OUT/'summary.json'}")
