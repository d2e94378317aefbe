"""Boundary-weighted hybrid loss.

The edge weight of a pixel is alpha * |window_mean - label| over the m x m
neighbourhood clipped to the image (center included, divisor = actual
pixel count). It is zero exactly on label-uniform windows and peaks at
label transitions. The training loss is the sum of the edge-weighted
cross entropy, focal loss, and dice loss, each reduced by mean over
pixels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, ShapeError
from .tensor import Tensor
from .tensor import ops as T

PT_CLAMP = 1e-7


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 1.0
    neighborhood: int = 7
    focal_gamma: float = 2.0
    dice_smooth: float = 1.0

    def validate(self) -> None:
        if self.alpha <= 0:
            raise DataError(f"alpha must be positive, got {self.alpha}")
        if self.neighborhood < 3 or self.neighborhood % 2 == 0:
            raise DataError(f"neighborhood must be odd and >= 3, got {self.neighborhood}")
        if self.focal_gamma < 0:
            raise DataError(f"focal_gamma must be >= 0, got {self.focal_gamma}")


@dataclass
class EdgeWeightMap:
    weights: np.ndarray  # (H, W) float64, 0 <= w <= alpha
    alpha: float
    neighborhood: int


def _require_binary(mask: np.ndarray) -> np.ndarray:
    arr = np.asarray(mask)
    bad = (arr != 0) & (arr != 1)
    if np.any(bad):
        y, x = np.argwhere(bad)[0]
        raise DataError(
            f"mask must be binary, found value {arr[y, x]!r} at pixel ({y}, {x})"
        )
    return arr.astype(np.int64)


def edge_weight_map(mask, alpha: float = 1.0, neighborhood: int = 7) -> EdgeWeightMap:
    """Per-pixel boundary weights from a binary label mask.

    Window sums come from an integral image and the weight is computed as
    alpha * |sum - n*L| / n with an integer numerator: that keeps
    complement invariance, flip/rotation equivariance, and alpha linearity
    bitwise exact, which the plain float |mean - L| form does not.
    """
    if neighborhood < 3 or neighborhood % 2 == 0:
        raise DataError(f"neighborhood must be odd and >= 3, got {neighborhood}")
    if alpha <= 0:
        raise DataError(f"alpha must be positive, got {alpha}")
    lab = _require_binary(mask)
    if lab.ndim != 2:
        raise ShapeError(f"mask must be 2-D, got shape {lab.shape}")
    h, w = lab.shape
    r = neighborhood // 2

    integral = np.zeros((h + 1, w + 1), dtype=np.int64)
    integral[1:, 1:] = lab.cumsum(axis=0).cumsum(axis=1)
    ys = np.arange(h)
    xs = np.arange(w)
    y0 = np.maximum(ys - r, 0)
    y1 = np.minimum(ys + r, h - 1) + 1
    x0 = np.maximum(xs - r, 0)
    x1 = np.minimum(xs + r, w - 1) + 1
    window_sum = (
        integral[y1[:, None], x1[None, :]]
        - integral[y0[:, None], x1[None, :]]
        - integral[y1[:, None], x0[None, :]]
        + integral[y0[:, None], x0[None, :]]
    )
    count = (y1 - y0)[:, None] * (x1 - x0)[None, :]
    numerator = np.abs(window_sum - count * lab)  # integer, complement-symmetric
    weights = alpha * (numerator / count.astype(np.float64))
    return EdgeWeightMap(weights=weights, alpha=alpha, neighborhood=neighborhood)


def true_class_probabilities(logits: Tensor, target) -> Tensor:
    """Per-pixel softmax probability of the labelled class, clamped at 1e-7.

    logits: (2, H, W); target: binary (H, W).
    """
    if logits.ndim != 3 or logits.shape[0] != 2:
        raise ShapeError(f"expected (2,H,W) logits, got {logits.shape}")
    t = _require_binary(target).astype(logits.data.dtype)
    if t.shape != logits.shape[1:]:
        raise ShapeError(f"target {t.shape} does not match logits {logits.shape}")
    probs = T.softmax(logits, axis=0)
    pt = T.add(T.mul(probs[1], t), T.mul(probs[0], 1.0 - t))
    return T.clamp_min(pt, PT_CLAMP)


def edge_loss(probs: Tensor, weights: EdgeWeightMap) -> Tensor:
    """Mean over pixels of -w_edge * log(p_t)."""
    probs = T.as_tensor(probs)
    if probs.shape != weights.weights.shape:
        raise ShapeError(
            f"p_t field {probs.shape} does not match weight map {weights.weights.shape}"
        )
    w = weights.weights.astype(probs.data.dtype)
    return T.neg(T.mean(T.mul(T.log(probs), w)))


def focal_loss(probs: Tensor, gamma: float = 2.0) -> Tensor:
    """Mean over pixels of -(1 - p_t)^gamma * log(p_t); gamma=0 is plain CE."""
    probs = T.as_tensor(probs)
    logp = T.log(probs)
    if gamma == 0:
        return T.neg(T.mean(logp))
    modulator = T.pow_scalar(T.sub(1.0, probs), gamma)
    return T.neg(T.mean(T.mul(modulator, logp)))


def dice_loss(prob_changed: Tensor, target, smooth: float = 1.0) -> Tensor:
    """1 - (2*sum(p*t) + smooth) / (sum(p) + sum(t) + smooth)."""
    prob_changed = T.as_tensor(prob_changed)
    t = _require_binary(target).astype(prob_changed.data.dtype)
    if t.shape != prob_changed.shape:
        raise ShapeError(f"target {t.shape} does not match probabilities {prob_changed.shape}")
    inter = T.tsum(T.mul(prob_changed, t))
    total = T.add(T.tsum(prob_changed), float(t.sum()))
    return T.sub(1.0, T.div(T.add(T.mul(inter, 2.0), smooth), T.add(total, smooth)))


@dataclass
class HybridLossTerms:
    total: Tensor
    edge: Tensor
    focal: Tensor
    dice: Tensor

    def values(self) -> dict[str, float]:
        return {
            "total": self.total.item(),
            "edge": self.edge.item(),
            "focal": self.focal.item(),
            "dice": self.dice.item(),
        }


def hybrid_loss(logits: Tensor, target, config: LossConfig,
                weight_map: EdgeWeightMap | None = None) -> HybridLossTerms:
    """Edge + focal + dice for one sample. (2,H,W) logits, binary target.

    A precomputed weight map (a pure function of the target) may be passed
    to avoid recomputation across epochs.
    """
    config.validate()
    if weight_map is None:
        weight_map = edge_weight_map(target, config.alpha, config.neighborhood)
    pt = true_class_probabilities(logits, target)
    probs_changed = T.getitem(T.softmax(logits, axis=0), (1,))
    e = edge_loss(pt, weight_map)
    f = focal_loss(pt, config.focal_gamma)
    d = dice_loss(probs_changed, target, config.dice_smooth)
    return HybridLossTerms(total=T.add(T.add(e, f), d), edge=e, focal=f, dice=d)


def hybrid_loss_batch(logits: Tensor, targets, config: LossConfig,
                      weight_maps=None) -> HybridLossTerms:
    """Mean of per-sample hybrid losses over a batch.

    logits: (N,2,H,W); targets: (N,H,W) binary array or list of (H,W).
    Vectorized over the batch: per-sample pixel means are axis reductions,
    so the tape stays small regardless of batch size.
    """
    config.validate()
    if logits.ndim != 4 or logits.shape[1] != 2:
        raise ShapeError(f"expected (N,2,H,W) logits, got {logits.shape}")
    n = logits.shape[0]
    targets = [np.asarray(t) for t in targets]
    if len(targets) != n:
        raise ShapeError(f"{len(targets)} targets for a batch of {n}")
    dtype = logits.data.dtype
    t = np.stack([_require_binary(tt) for tt in targets]).astype(dtype)
    if t.shape[1:] != logits.shape[2:]:
        raise ShapeError(f"targets {t.shape} do not match logits {logits.shape}")
    if weight_maps is None:
        weight_maps = [
            edge_weight_map(tt, config.alpha, config.neighborhood) for tt in targets
        ]
    w = np.stack([wm.weights for wm in weight_maps]).astype(dtype)

    probs = T.softmax(logits, axis=1)
    p1 = T.getitem(probs, (slice(None), 1))  # changed-class prob (N,H,W)
    p0 = T.getitem(probs, (slice(None), 0))
    pt = T.clamp_min(T.add(T.mul(p1, t), T.mul(p0, 1.0 - t)), PT_CLAMP)
    neg_logpt = T.neg(T.log(pt))

    edge_per = T.mean(T.mul(neg_logpt, w), axes=(1, 2))  # (N,)
    if config.focal_gamma == 0:
        focal_per = T.mean(neg_logpt, axes=(1, 2))
    else:
        focal_per = T.mean(
            T.mul(T.pow_scalar(T.sub(1.0, pt), config.focal_gamma), neg_logpt), axes=(1, 2)
        )
    inter = T.tsum(T.mul(p1, t), axes=(1, 2))  # (N,)
    denom = T.add(T.tsum(p1, axes=(1, 2)), t.sum(axis=(1, 2)))
    smooth = config.dice_smooth
    dice_per = T.sub(1.0, T.div(T.add(T.mul(inter, 2.0), smooth), T.add(denom, smooth)))

    total_per = T.add(T.add(edge_per, focal_per), dice_per)
    return HybridLossTerms(
        total=T.mean(total_per),
        edge=T.mean(edge_per),
        focal=T.mean(focal_per),
        dice=T.mean(dice_per),
    )
