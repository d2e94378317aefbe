"""The optimization loop: AdamW with decoupled weight decay, step-decay
learning rate, curriculum-driven epoch composition, JSONL metric logs, and
bitwise-exact checkpoint/resume.

Determinism contract: every random draw comes from a child stream derived
from (seed, purpose, epoch), never from a continuing stream, so resuming
from a checkpoint replays the exact arithmetic of a straight-through run.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .checkpoint import (
    load_model_stream,
    read_records,
    save_model_bytes,
    write_record,
)
from .curriculum import (
    DifficultyScore,
    StageSchedule,
    SubsetSplit,
    active_set,
    random_sampling_epoch,
    score_samples,
    split,
    write_difficulty_csv,
    write_split_file,
)
from .data import DatasetManifest
from .errors import CheckpointError, ConfigError, DataError, NonFiniteError
from .inference import SampleStore, run_eval
from .losses import LossConfig, hybrid_loss_batch
from .metrics import Confusion, prf1
from .model import RdpNet
from .tensor import Rng, Tensor, backward
from .tensor import ops as T

STRATEGIES = ("efficient", "random_sampling", "plain")

TRAINER_MAGIC = b"RDPT"
TRAINER_VERSION = 1


@dataclass(frozen=True)
class AdamWConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 1e-3
    decay: float = 0.8
    decay_every: int = 15
    batch_size: int = 16
    epochs: int = 200
    adamw: AdamWConfig = field(default_factory=AdamWConfig)
    strategy: str = "efficient"
    seed: int = 0
    sample_fraction: float = 0.75  # random_sampling draw size

    def validate(self) -> None:
        if self.lr0 <= 0 or self.decay_every <= 0 or self.batch_size <= 0 or self.epochs <= 0:
            raise ConfigError("lr0, decay_every, batch_size, and epochs must be positive")
        if not 0 < self.decay <= 1:
            raise ConfigError(f"decay must lie in (0, 1], got {self.decay}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if not 0 < self.sample_fraction <= 1:
            raise ConfigError(f"sample_fraction must lie in (0, 1], got {self.sample_fraction}")


def lr_at(epoch: int, config: TrainConfig) -> float:
    """lr0 * decay^floor(epoch / decay_every)."""
    if epoch < 0:
        raise ConfigError(f"epoch must be >= 0, got {epoch}")
    return config.lr0 * config.decay ** (epoch // config.decay_every)


class TrainState:
    """Optimizer moments plus everything needed for exact resume."""

    def __init__(self):
        self.epoch = 0  # next epoch to run
        self.step = 0
        self.samples_processed = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.scores: Optional[list[DifficultyScore]] = None
        self.split: Optional[SubsetSplit] = None


def adamw_step(params, grads, state: TrainState, lr: float, config: AdamWConfig) -> None:
    """One decoupled-weight-decay Adam update over named parameters.

    params: iterable of (name, Tensor); grads: dict name -> array (missing
    entries mean zero gradient, which still applies decay and moment
    updates). Increments state.step once per call.
    """
    state.step += 1
    t = state.step
    b1, b2 = config.beta1, config.beta2
    bias1 = 1.0 - b1**t
    bias2 = 1.0 - b2**t
    for name, param in params:
        g = grads.get(name)
        if g is None:
            g = np.zeros(param.shape, dtype=param.dtype)
        if g.shape != param.shape:
            raise ConfigError(
                f"gradient shape {g.shape} does not match parameter {name!r} {param.shape}"
            )
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros(param.shape, dtype=np.float64)
            v = np.zeros(param.shape, dtype=np.float64)
            state.m[name] = m
            state.v[name] = v
        g64 = g.astype(np.float64, copy=False)
        m *= b1
        m += (1.0 - b1) * g64
        v *= b2
        v += (1.0 - b2) * g64 * g64
        mhat = m / bias1
        vhat = v / bias2
        theta = param.data.astype(np.float64, copy=False)
        update = theta - lr * mhat / (np.sqrt(vhat) + config.eps) - lr * config.weight_decay * theta
        param._set_data(update.astype(param.dtype, copy=False))


@dataclass
class EvalResult:
    precision: float
    recall: float
    f1: float
    mean_loss: float
    confusion: Confusion
    per_sample: list[tuple[str, float]]


def evaluate(model: RdpNet, manifest: DatasetManifest, loss_config: LossConfig,
             batch_size: int = 16, sample_store: SampleStore | None = None) -> EvalResult:
    """Micro-averaged P/R/F1 plus mean hybrid loss over a manifest."""
    evals = run_eval(model, manifest, loss_config, batch_size=batch_size,
                     sample_store=sample_store)
    total = Confusion()
    for e in evals:
        total = total + e.confusion
    precision, recall, f1 = prf1(total)
    losses = [e.loss for e in evals]
    mean_loss = float(np.mean(losses)) if losses else float("nan")
    return EvalResult(
        precision=precision,
        recall=recall,
        f1=f1,
        mean_loss=mean_loss,
        confusion=total,
        per_sample=[(e.sample_id, e.loss) for e in evals],
    )


# ---------------------------------------------------------------------------
# trainer-state checkpoints


def save_train_checkpoint(model: RdpNet, state: TrainState, path) -> None:
    meta = {
        "epoch": state.epoch,
        "step": state.step,
        "samples_processed": state.samples_processed,
        "scores": (
            [[s.sample_id, s.loss] for s in state.scores] if state.scores is not None else None
        ),
        "split": (
            {"easy": state.split.easy, "medium": state.split.medium, "hard": state.split.hard}
            if state.split is not None
            else None
        ),
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    model_bytes = save_model_bytes(model)
    buf = io.BytesIO()
    buf.write(TRAINER_MAGIC)
    buf.write(struct.pack("<I", TRAINER_VERSION))
    buf.write(struct.pack("<Q", len(meta_bytes)))
    buf.write(meta_bytes)
    buf.write(struct.pack("<Q", len(model_bytes)))
    buf.write(model_bytes)
    for name in sorted(state.m):
        write_record(buf, f"m.{name}", state.m[name])
        write_record(buf, f"v.{name}", state.v[name])
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_train_checkpoint(path) -> tuple[RdpNet, TrainState]:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != TRAINER_MAGIC:
            raise CheckpointError(
                f"bad trainer-state magic {magic!r} at offset 0 (expected {TRAINER_MAGIC!r})"
            )
        (version,) = struct.unpack("<I", f.read(4))
        if version != TRAINER_VERSION:
            raise CheckpointError(f"unsupported trainer-state version {version}")
        (meta_len,) = struct.unpack("<Q", f.read(8))
        meta = json.loads(f.read(meta_len).decode("utf-8"))
        (model_len,) = struct.unpack("<Q", f.read(8))
        model = load_model_stream(io.BytesIO(f.read(model_len)))
        records = read_records(f)
    state = TrainState()
    state.epoch = int(meta["epoch"])
    state.step = int(meta["step"])
    state.samples_processed = int(meta["samples_processed"])
    if meta["scores"] is not None:
        state.scores = [DifficultyScore(sample_id=s, loss=l) for s, l in meta["scores"]]
    if meta["split"] is not None:
        state.split = SubsetSplit(**meta["split"])
    for name, arr in records.items():
        if name.startswith("m."):
            state.m[name[2:]] = arr
        elif name.startswith("v."):
            state.v[name[2:]] = arr
        else:
            raise CheckpointError(f"unexpected trainer record {name!r}")
    return model, state


# ---------------------------------------------------------------------------
# the loop


@dataclass
class TrainResult:
    final_checkpoint: Path
    log_path: Path
    history: list[dict]
    state: TrainState


def _epoch_ids(model, state: TrainState, epoch: int, cfg: TrainConfig,
               schedule: StageSchedule, train_manifest: DatasetManifest,
               loss_config: LossConfig, store: SampleStore, out_dir: Path) -> list[str]:
    all_ids = train_manifest.ids()
    if cfg.strategy == "plain":
        return all_ids
    if epoch < schedule.warmup_end:
        return all_ids
    if state.scores is None:
        # scoring runs once, at the warmup boundary, on the full dataset
        state.scores = score_samples(model, train_manifest, loss_config,
                                     batch_size=cfg.batch_size, sample_store=store)
        write_difficulty_csv(state.scores, out_dir / "difficulty.csv")
        if cfg.strategy == "efficient":
            state.split = split(state.scores)
            write_split_file(state.split, out_dir / "split.txt")
    if cfg.strategy == "efficient":
        return active_set(epoch, schedule, state.split)
    # random_sampling: fresh weighted draw per epoch
    return random_sampling_epoch(state.scores, cfg.sample_fraction, Rng(cfg.seed), epoch)


def train(model: RdpNet, train_manifest: DatasetManifest, val_manifest: DatasetManifest,
          train_config: TrainConfig, schedule: StageSchedule, loss_config: LossConfig,
          out_dir, resume_state: Optional[TrainState] = None,
          log_name: str = "train_log.jsonl") -> TrainResult:
    """Run the loop from resume_state.epoch (or 0) to train_config.epochs.

    Writes per-epoch JSONL metric records, the difficulty CSV and split
    file at the warmup boundary, stage-boundary checkpoints, and a final
    trainer-state checkpoint for exact resume.
    """
    train_config.validate()
    schedule.validate()
    loss_config.validate()
    if train_config.epochs > schedule.total_epochs:
        raise ConfigError(
            f"epochs {train_config.epochs} exceed the schedule's total_epochs "
            f"{schedule.total_epochs}; a run may stop early but not outrun the plan"
        )
    if train_config.strategy != "plain" and len(train_manifest) < 9:
        raise DataError(
            f"the {train_config.strategy} strategy needs >= 9 samples, "
            f"got {len(train_manifest)}"
        )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / log_name

    state = resume_state if resume_state is not None else TrainState()
    store = SampleStore(train_manifest, loss_config, dtype=model.config.dtype)
    val_store = SampleStore(val_manifest, loss_config, dtype=model.config.dtype)
    boundary_epochs = {schedule.warmup_end, schedule.medium_start, schedule.hard_start}
    history: list[dict] = []

    mode = "a" if state.epoch > 0 else "w"
    with open(log_path, mode, encoding="utf-8") as log:
        for epoch in range(state.epoch, train_config.epochs):
            lr = lr_at(epoch, train_config)
            ids = _epoch_ids(model, state, epoch, train_config, schedule,
                             train_manifest, loss_config, store, out_dir)
            order = [ids[i] for i in Rng(train_config.seed).derive("shuffle", epoch)
                     .permutation(len(ids))]
            loss_sums = {"total": 0.0, "edge": 0.0, "focal": 0.0, "dice": 0.0}
            n_batches = 0
            for start in range(0, len(order), train_config.batch_size):
                batch_ids = order[start : start + train_config.batch_size]
                a, b, masks, wms = store.batch(batch_ids)
                logits = model.forward_batch(a, b, "train")
                terms = hybrid_loss_batch(logits, masks, loss_config, weight_maps=wms)
                loss_val = terms.total.item()
                if not np.isfinite(loss_val):
                    raise NonFiniteError(
                        f"non-finite training loss {loss_val} at epoch {epoch}, "
                        f"step {state.step}"
                    )
                model.registry.zero_grads()
                backward(terms.total)
                edge_val, focal_val, dice_val = (
                    terms.edge.item(), terms.focal.item(), terms.dice.item()
                )
                del logits, terms  # free the step's graph before the update
                grads = {
                    name: t.grad for name, t in model.registry.items() if t.grad is not None
                }
                adamw_step(model.registry.items(), grads, state, lr, train_config.adamw)
                state.samples_processed += len(batch_ids)
                loss_sums["total"] += loss_val
                loss_sums["edge"] += edge_val
                loss_sums["focal"] += focal_val
                loss_sums["dice"] += dice_val
                n_batches += 1

            val = evaluate(model, val_manifest, loss_config,
                           batch_size=train_config.batch_size, sample_store=val_store)
            record = {
                "epoch": epoch,
                "lr": lr,
                "train_loss": loss_sums["total"] / max(n_batches, 1),
                "edge_term": loss_sums["edge"] / max(n_batches, 1),
                "focal_term": loss_sums["focal"] / max(n_batches, 1),
                "dice_term": loss_sums["dice"] / max(n_batches, 1),
                "val_precision": val.precision,
                "val_recall": val.recall,
                "val_f1": val.f1,
                "samples_processed": state.samples_processed,
            }
            history.append(record)
            log.write(json.dumps(record, sort_keys=True) + "\n")
            log.flush()
            state.epoch = epoch + 1
            if state.epoch in boundary_epochs and state.epoch < train_config.epochs:
                save_train_checkpoint(model, state, out_dir / f"stage_epoch{state.epoch}.rdpt")

    final = out_dir / "final.rdpt"
    save_train_checkpoint(model, state, final)
    # model-only artifact in the plain checkpoint format
    with open(out_dir / "final_model.rdpn", "wb") as f:
        f.write(save_model_bytes(model))
    return TrainResult(final_checkpoint=final, log_path=log_path, history=history, state=state)
