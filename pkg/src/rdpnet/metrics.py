"""Segmentation metrics: confusion counts, precision/recall/F1, a boundary-
band F1 for quantifying edge quality, and red/green error-map rendering."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DataError, ShapeError

FP_COLOR = (255, 0, 0)  # red
FN_COLOR = (0, 255, 0)  # green
TP_COLOR = (255, 255, 255)
TN_COLOR = (0, 0, 0)


@dataclass
class Confusion:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other: "Confusion") -> "Confusion":
        return Confusion(
            self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn
        )

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def as_dict(self) -> dict[str, int]:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn}


def _binary_pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred)
    g = np.asarray(gt)
    if p.shape != g.shape:
        raise ShapeError(f"prediction {p.shape} does not match ground truth {g.shape}")
    for name, arr in (("prediction", p), ("ground truth", g)):
        if np.any((arr != 0) & (arr != 1)):
            raise DataError(f"{name} must be binary (0/1)")
    return p.astype(bool), g.astype(bool)


def confusion(pred, gt) -> Confusion:
    """Pixel counts with "changed" (1) as the positive class."""
    p, g = _binary_pair(pred, gt)
    return Confusion(
        tp=int(np.count_nonzero(p & g)),
        fp=int(np.count_nonzero(p & ~g)),
        fn=int(np.count_nonzero(~p & g)),
        tn=int(np.count_nonzero(~p & ~g)),
    )


def prf1(c: Confusion) -> tuple[float, float, float]:
    """Precision, recall, F1; every 0/0 is defined as 0."""
    precision = c.tp / (c.tp + c.fp) if (c.tp + c.fp) > 0 else 0.0
    recall = c.tp / (c.tp + c.fn) if (c.tp + c.fn) > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if (precision + recall) > 0 else 0.0
    return precision, recall, f1


def f1_from_pr(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def transition_pixels(gt) -> np.ndarray:
    """Pixels with at least one 4-adjacent neighbour of a different label."""
    g = np.asarray(gt).astype(bool)
    t = np.zeros_like(g)
    t[:-1, :] |= g[:-1, :] != g[1:, :]
    t[1:, :] |= g[1:, :] != g[:-1, :]
    t[:, :-1] |= g[:, :-1] != g[:, 1:]
    t[:, 1:] |= g[:, 1:] != g[:, :-1]
    return t


@dataclass
class BoundaryBandResult:
    f1: float
    band_pixels: int
    full_image_fallback: bool
    confusion: Confusion


def boundary_band_f1(pred, gt, band: int) -> BoundaryBandResult:
    """F1 restricted to pixels within Chebyshev distance band-1 of a label
    transition (band=1 is exactly the two one-pixel rings around each
    boundary). A ground truth without transitions falls back to the full
    image: f1 = 1 when pred matches gt everywhere, else the full-image
    score, with the fallback flagged."""
    if band < 1:
        raise DataError(f"band must be >= 1, got {band}")
    p, g = _binary_pair(pred, gt)
    trans = transition_pixels(g)
    if not trans.any():
        full = confusion(p.astype(np.uint8), g.astype(np.uint8))
        matches = np.array_equal(p, g)
        return BoundaryBandResult(
            f1=1.0 if matches else prf1(full)[2],
            band_pixels=0,
            full_image_fallback=True,
            confusion=full,
        )
    if band == 1:
        band_mask = trans
    else:
        size = 2 * (band - 1) + 1
        band_mask = ndimage.binary_dilation(trans, structure=np.ones((size, size), dtype=bool))
    c = Confusion(
        tp=int(np.count_nonzero(p & g & band_mask)),
        fp=int(np.count_nonzero(p & ~g & band_mask)),
        fn=int(np.count_nonzero(~p & g & band_mask)),
        tn=int(np.count_nonzero(~p & ~g & band_mask)),
    )
    return BoundaryBandResult(
        f1=prf1(c)[2],
        band_pixels=int(band_mask.sum()),
        full_image_fallback=False,
        confusion=c,
    )


def render_error_map(pred, gt) -> np.ndarray:
    """(H,W,3) uint8 raster: FP red, FN green, TP white, TN black."""
    p, g = _binary_pair(pred, gt)
    out = np.zeros(p.shape + (3,), dtype=np.uint8)
    out[p & g] = TP_COLOR
    out[p & ~g] = FP_COLOR
    out[~p & g] = FN_COLOR
    return out


def metrics_report(c: Confusion) -> dict:
    precision, recall, f1 = prf1(c)
    return {
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "tp": c.tp,
        "fp": c.fp,
        "fn": c.fn,
        "tn": c.tn,
    }


def format_metrics_table(report: dict) -> str:
    rows = [
        ("precision", f"{report['precision']:.6f}"),
        ("recall", f"{report['recall']:.6f}"),
        ("f1", f"{report['f1']:.6f}"),
        ("tp", str(report["tp"])),
        ("fp", str(report["fp"])),
        ("fn", str(report["fn"])),
        ("tn", str(report["tn"])),
    ]
    width = max(len(k) for k, _ in rows)
    return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows)
