"""Optimizer arithmetic, loop determinism, resume, trainer checkpoints."""

import json

import numpy as np
import pytest

from rdpnet.curriculum import StageSchedule, score_samples
from rdpnet.data import DatasetManifest, SyntheticGenConfig, generate_synthetic
from rdpnet.errors import ConfigError, DataError
from rdpnet.losses import LossConfig
from rdpnet.model import RdpNet, RdpNetConfig
from rdpnet.tensor import Rng, tensor
from rdpnet.trainer import (
    AdamWConfig,
    TrainConfig,
    TrainState,
    adamw_step,
    evaluate,
    load_train_checkpoint,
    lr_at,
    save_train_checkpoint,
    train,
)

from oracles import scalar_adam

TINY_MODEL = RdpNetConfig(patch_size=4, embed_dim=12, depth=2, out_ch=6, dw_kernel=3)


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("tinydata")
    cfg = SyntheticGenConfig(count=24, size=(32, 32), seed=77)
    manifest = generate_synthetic(cfg, root)
    train_m = DatasetManifest(entries=manifest.entries[:18], base_dir=manifest.base_dir)
    val_m = DatasetManifest(entries=manifest.entries[18:], base_dir=manifest.base_dir)
    return train_m, val_m


def _sched(warmup, medium, hard, total):
    return StageSchedule(warmup_end=warmup, medium_start=medium, hard_start=hard,
                         total_epochs=total)


# ---------------------------------------------------------------------------
# lr schedule


def test_lr_schedule_values():
    cfg = TrainConfig()
    assert lr_at(0, cfg) == 1e-3
    assert abs(lr_at(15, cfg) - 8e-4) < 1e-18
    assert abs(lr_at(30, cfg) - 6.4e-4) < 1e-18


def test_lr_non_increasing():
    cfg = TrainConfig()
    values = [lr_at(e, cfg) for e in range(200)]
    assert all(a >= b for a, b in zip(values, values[1:]))


def test_lr_rejects_negative_epoch():
    with pytest.raises(ConfigError):
        lr_at(-1, TrainConfig())


# ---------------------------------------------------------------------------
# adamw


def test_adamw_first_step_hand_value():
    p = tensor([1.0], tracked=True)
    state = TrainState()
    adamw_step([("p", p)], {"p": np.array([2.0])}, state, 0.1, AdamWConfig())
    # theta' = 1 - 0.1 * (2 / (2 + 1e-8)) - 0.1 * 0.01 * 1 = 0.899
    assert abs(p.data[0] - 0.899) < 1e-9


def test_adamw_zero_grad_no_decay_freezes():
    p = tensor([3.0, -2.0], tracked=True)
    state = TrainState()
    cfg = AdamWConfig(weight_decay=0.0)
    for _ in range(5):
        adamw_step([("p", p)], {}, state, 0.1, cfg)
    np.testing.assert_array_equal(p.data, [3.0, -2.0])


def test_adamw_zero_lr_changes_nothing_without_decay():
    p = tensor([1.5], tracked=True)
    state = TrainState()
    adamw_step([("p", p)], {"p": np.array([4.0])}, state, 0.0, AdamWConfig(weight_decay=0.0))
    np.testing.assert_array_equal(p.data, [1.5])


def test_adamw_zero_lr_with_decay_changes_nothing():
    # the decay term is lr * wd * theta, so lr = 0 freezes parameters exactly
    p = tensor([1.5], tracked=True)
    state = TrainState()
    adamw_step([("p", p)], {"p": np.array([4.0])}, state, 0.0, AdamWConfig(weight_decay=0.5))
    np.testing.assert_array_equal(p.data, [1.5])


def test_adamw_matches_scalar_adam_over_100_steps():
    rng = Rng(55)
    grads = rng.normal(0.0, 1.0, 100)
    ref = scalar_adam(0.7, grads.tolist(), lr=0.01)
    p = tensor([0.7], tracked=True)
    state = TrainState()
    cfg = AdamWConfig(weight_decay=0.0)  # wd = 0 reduces AdamW to Adam
    for g in grads:
        adamw_step([("p", p)], {"p": np.array([g])}, state, 0.01, cfg)
    assert abs(p.data[0] - ref[-1]) < 1e-12


def test_adamw_shape_mismatch():
    p = tensor([1.0, 2.0], tracked=True)
    with pytest.raises(ConfigError, match="shape"):
        adamw_step([("p", p)], {"p": np.zeros(3)}, TrainState(), 0.1, AdamWConfig())


# ---------------------------------------------------------------------------
# the loop


def _train_once(tiny_dataset, out, epochs=2, strategy="plain", seed=5, resume_state=None,
                model=None, warmup=1, medium=1, hard=2, total=None):
    train_m, val_m = tiny_dataset
    if model is None:
        model = RdpNet.build(TINY_MODEL, Rng(seed).derive("init"))
    tc = TrainConfig(epochs=epochs, batch_size=8, strategy=strategy, seed=seed,
                     decay_every=15)
    return model, train(model, train_m, val_m, tc,
                        _sched(warmup, medium, hard, total or epochs), LossConfig(),
                        out, resume_state=resume_state)


def test_plain_two_epochs_bitwise_rerun(tiny_dataset, tmp_path):
    _, res1 = _train_once(tiny_dataset, tmp_path / "r1")
    _, res2 = _train_once(tiny_dataset, tmp_path / "r2")
    assert res1.log_path.read_bytes() == res2.log_path.read_bytes()
    assert res1.final_checkpoint.read_bytes() == res2.final_checkpoint.read_bytes()


def test_log_record_fields(tiny_dataset, tmp_path):
    _, res = _train_once(tiny_dataset, tmp_path / "r")
    lines = res.log_path.read_text().splitlines()
    assert len(lines) == 2
    record = json.loads(lines[0])
    assert set(record) == {
        "epoch", "lr", "train_loss", "edge_term", "focal_term", "dice_term",
        "val_precision", "val_recall", "val_f1", "samples_processed",
    }
    assert record["epoch"] == 0
    assert record["lr"] == 1e-3
    assert record["samples_processed"] == 18


def test_loss_decreases_on_tiny_run(tiny_dataset, tmp_path):
    _, res = _train_once(tiny_dataset, tmp_path / "r", epochs=3)
    losses = [h["train_loss"] for h in res.history]
    assert losses[-1] < losses[0]


def test_efficient_strategy_requires_nine_samples(tiny_dataset, tmp_path):
    train_m, val_m = tiny_dataset
    small = DatasetManifest(entries=train_m.entries[:5], base_dir=train_m.base_dir)
    model = RdpNet.build(TINY_MODEL, Rng(0))
    with pytest.raises(DataError, match="9"):
        train(model, small, val_m,
              TrainConfig(epochs=2, batch_size=4, strategy="efficient", seed=0),
              _sched(1, 1, 2, 2), LossConfig(), tmp_path / "x")


def test_efficient_strategy_writes_difficulty_and_split(tiny_dataset, tmp_path):
    out = tmp_path / "eff"
    _, res = _train_once(tiny_dataset, out, epochs=4, strategy="efficient",
                         warmup=1, medium=2, hard=3)
    assert (out / "difficulty.csv").exists()
    assert (out / "split.txt").exists()
    # samples processed: 1 epoch full (18) + 1 epoch easy (8) + 1 epoch easy+medium (12)
    # + 1 epoch full (18); floor split of 18 = 8/4/6
    assert res.state.samples_processed == 18 + 8 + 12 + 18


def test_random_sampling_strategy_counts(tiny_dataset, tmp_path):
    _, res = _train_once(tiny_dataset, tmp_path / "rs", epochs=3,
                         strategy="random_sampling", warmup=1, medium=2, hard=3)
    # warmup epoch processes all 18, each later epoch round(0.75*18) = 14
    assert res.state.samples_processed == 18 + 14 + 14


def test_evaluate_deterministic_and_matches_scoring(tiny_dataset):
    train_m, _ = tiny_dataset
    model = RdpNet.build(TINY_MODEL, Rng(9))
    lc = LossConfig()
    e1 = evaluate(model, train_m, lc, batch_size=8)
    e2 = evaluate(model, train_m, lc, batch_size=8)
    assert e1.per_sample == e2.per_sample
    assert e1.f1 == e2.f1
    scores = score_samples(model, train_m, lc, batch_size=8)
    by_id = dict(e1.per_sample)
    for s in scores:
        assert by_id[s.sample_id] == s.loss  # bitwise equal across modules


def test_all_unchanged_prediction_gives_zero_recall(tiny_dataset):
    train_m, _ = tiny_dataset
    model = RdpNet.build(TINY_MODEL, rng=None)  # zero weights -> logits all equal
    result = evaluate(model, train_m, LossConfig(), batch_size=8)
    assert result.recall == 0.0


def test_resume_is_bitwise_identical(tiny_dataset, tmp_path):
    # straight-through 4 epochs
    _, full = _train_once(tiny_dataset, tmp_path / "full", epochs=4,
                          strategy="efficient", warmup=1, medium=2, hard=3)
    # 2 epochs, checkpoint, resume 2 more (the same full 4-epoch plan)
    model_a, part1 = _train_once(tiny_dataset, tmp_path / "part", epochs=2,
                                 strategy="efficient", warmup=1, medium=2, hard=3,
                                 total=4)
    model_b, state = load_train_checkpoint(part1.final_checkpoint)
    assert state.epoch == 2
    tc = TrainConfig(epochs=4, batch_size=8, strategy="efficient", seed=5, decay_every=15)
    part2 = train(model_b, tiny_dataset[0], tiny_dataset[1], tc,
                  _sched(1, 2, 3, 4), LossConfig(), tmp_path / "part",
                  resume_state=state)
    assert part2.final_checkpoint.read_bytes() == full.final_checkpoint.read_bytes()
    full_log = (tmp_path / "full" / "train_log.jsonl").read_bytes()
    part_log = (tmp_path / "part" / "train_log.jsonl").read_bytes()
    assert part_log == full_log


def test_trainer_checkpoint_roundtrip(tiny_dataset, tmp_path):
    model, res = _train_once(tiny_dataset, tmp_path / "ck", epochs=2)
    model2, state = load_train_checkpoint(res.final_checkpoint)
    assert state.epoch == 2
    assert state.step == res.state.step
    for (n1, t1), (n2, t2) in zip(model.registry.items(), model2.registry.items()):
        assert n1 == n2 and t1.data.tobytes() == t2.data.tobytes()
    for name in state.m:
        np.testing.assert_array_equal(state.m[name], res.state.m[name])
    path = tmp_path / "ck" / "again.rdpt"
    save_train_checkpoint(model2, state, path)
    assert path.read_bytes() == res.final_checkpoint.read_bytes()


def test_stage_boundary_checkpoints_written(tiny_dataset, tmp_path):
    out = tmp_path / "stages"
    _train_once(tiny_dataset, out, epochs=4, strategy="efficient",
                warmup=1, medium=2, hard=3)
    assert (out / "stage_epoch1.rdpt").exists()
    assert (out / "stage_epoch2.rdpt").exists()
    assert (out / "stage_epoch3.rdpt").exists()
    assert (out / "final.rdpt").exists()


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(strategy="bogus").validate()
    with pytest.raises(ConfigError):
        TrainConfig(decay=0.0).validate()
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0).validate()
