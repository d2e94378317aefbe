"""Shared eval-mode inference: batched forwards, per-sample losses, and
confusion accumulation. Both the trainer's evaluate() and curriculum
scoring run through here, so their per-sample losses are bitwise equal."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import DatasetManifest, SamplePair, load_sample
from .errors import NonFiniteError
from .losses import EdgeWeightMap, LossConfig, edge_weight_map, hybrid_loss
from .metrics import Confusion, confusion
from .model import RdpNet, predict_mask_batch
from .tensor import no_grad
from .tensor import ops as T


class SampleStore:
    """In-memory cache of decoded samples and their edge-weight maps.

    The weight map is a pure function of the mask, so caching it across
    epochs avoids recomputation without affecting results.
    """

    def __init__(self, manifest: DatasetManifest, loss_config: LossConfig, dtype="float64"):
        self.manifest = manifest
        self.loss_config = loss_config
        self.dtype = dtype
        self._by_id = {e.id: e for e in manifest.entries}
        self._samples: dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
        self._weights: dict[str, EdgeWeightMap] = {}

    def entry(self, sample_id: str) -> SamplePair:
        return self._by_id[sample_id]

    def get(self, sample_id: str):
        cached = self._samples.get(sample_id)
        if cached is None:
            pair = self._by_id[sample_id]
            a, b, m = load_sample(pair, base_dir=self.manifest.base_dir, dtype=self.dtype)
            cached = (a.data, b.data, m.data.astype(np.int64))
            self._samples[sample_id] = cached
        return cached

    def weight_map(self, sample_id: str) -> EdgeWeightMap:
        wm = self._weights.get(sample_id)
        if wm is None:
            mask = self.get(sample_id)[2]
            wm = edge_weight_map(mask, self.loss_config.alpha, self.loss_config.neighborhood)
            self._weights[sample_id] = wm
        return wm

    def batch(self, sample_ids, with_weights: bool = True):
        arrays = [self.get(sid) for sid in sample_ids]
        a = np.stack([x[0] for x in arrays])
        b = np.stack([x[1] for x in arrays])
        masks = [x[2] for x in arrays]
        wms = [self.weight_map(sid) for sid in sample_ids] if with_weights else None
        return a, b, masks, wms


@dataclass
class SampleEval:
    sample_id: str
    loss: float
    edge: float
    focal: float
    dice: float
    confusion: Confusion


def _chunks(seq, size):
    for i in range(0, len(seq), size):
        yield seq[i : i + size]


def run_eval(model: RdpNet, manifest: DatasetManifest, loss_config: LossConfig,
             batch_size: int = 16, sample_store: SampleStore | None = None) -> list[SampleEval]:
    """Eval-mode pass over a manifest: per-sample hybrid loss + confusion."""
    store = sample_store or SampleStore(manifest, loss_config, dtype=model.config.dtype)
    results: list[SampleEval] = []
    ids = [e.id for e in manifest.entries]
    with no_grad():
        for chunk in _chunks(ids, batch_size):
            a, b, masks, wms = store.batch(chunk)
            logits = model.forward_batch(a, b, "eval")
            preds = predict_mask_batch(logits)
            for i, sid in enumerate(chunk):
                terms = hybrid_loss(
                    T.getitem(logits, (i,)), masks[i], loss_config, weight_map=wms[i]
                )
                loss = terms.total.item()
                if not np.isfinite(loss):
                    raise NonFiniteError(f"non-finite eval loss for sample {sid!r}")
                results.append(SampleEval(
                    sample_id=sid,
                    loss=loss,
                    edge=terms.edge.item(),
                    focal=terms.focal.item(),
                    dice=terms.dice.item(),
                    confusion=confusion(preds[i], masks[i]),
                ))
    return results


def per_sample_losses(model: RdpNet, manifest: DatasetManifest, loss_config: LossConfig,
                      batch_size: int = 16, sample_store: SampleStore | None = None):
    return [
        (r.sample_id, r.loss)
        for r in run_eval(model, manifest, loss_config, batch_size=batch_size,
                          sample_store=sample_store)
    ]


def predict_to_dir(model: RdpNet, manifest: DatasetManifest, out_dir,
                   batch_size: int = 16) -> list[str]:
    """Write one binary PNG mask per sample; returns written file names."""
    from .data import save_mask
    from pathlib import Path

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    ids = [e.id for e in manifest.entries]
    store = SampleStore(manifest, LossConfig(), dtype=model.config.dtype)
    with no_grad():
        for chunk in _chunks(ids, batch_size):
            a, b, _, _ = store.batch(chunk, with_weights=False)
            preds = predict_mask_batch(model.forward_batch(a, b, "eval"))
            for i, sid in enumerate(chunk):
                name = f"{sid}_pred.png"
                save_mask(out_dir / name, preds[i])
                written.append(name)
    return written
