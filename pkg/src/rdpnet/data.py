"""Dataset handling: JSON Lines manifests, non-overlapping tiling of large
pairs, raster I/O, and a synthetic bi-temporal scene generator.

Rasters are lossless 8-bit PNGs: RGB for images, single-channel {0, 255}
for masks (255 = changed). The generator draws a shared base scene, adds
or removes shapes in one of the two frames, and applies per-channel
"seasonal" jitter plus pixel noise to both; the ground-truth mask is the
exact pixel set where the clean frames differ, which equals the union of
the change-shape footprints by construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image, ImageDraw

from .errors import DataError
from .tensor import Rng, Tensor

SHAPE_KINDS = ("rectangle", "polygon", "line")


@dataclass(frozen=True)
class SamplePair:
    id: str
    image_a: str
    image_b: str
    mask: str


@dataclass
class DatasetManifest:
    entries: list[SamplePair] = field(default_factory=list)
    base_dir: Optional[Path] = None

    def __len__(self) -> int:
        return len(self.entries)

    def ids(self) -> list[str]:
        return [e.id for e in self.entries]

    def resolve(self, relpath: str) -> Path:
        p = Path(relpath)
        if p.is_absolute() or self.base_dir is None:
            return p
        return self.base_dir / p


# ---------------------------------------------------------------------------
# manifest I/O


def write_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as f:
        for e in manifest.entries:
            f.write(json.dumps(
                {"id": e.id, "image_a": e.image_a, "image_b": e.image_b, "mask": e.mask},
                sort_keys=True,
            ))
            f.write("\n")


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    entries: list[SamplePair] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed manifest line: {exc}") from None
            missing = {"id", "image_a", "image_b", "mask"} - set(obj)
            if missing:
                raise DataError(f"{path}:{lineno}: missing keys {sorted(missing)}")
            if obj["id"] in seen:
                raise DataError(f"{path}:{lineno}: duplicate sample id {obj['id']!r}")
            seen.add(obj["id"])
            entries.append(SamplePair(
                id=obj["id"], image_a=obj["image_a"], image_b=obj["image_b"], mask=obj["mask"],
            ))
    return DatasetManifest(entries=entries, base_dir=path.parent)


# ---------------------------------------------------------------------------
# raster I/O


def save_rgb(path, arr: np.ndarray) -> None:
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
        raise DataError(f"expected (H,W,3) uint8 image, got {arr.shape} {arr.dtype}")
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def save_mask(path, mask01: np.ndarray) -> None:
    arr = (np.asarray(mask01) > 0).astype(np.uint8) * 255
    Image.fromarray(arr, mode="L").save(path, format="PNG")


def load_rgb(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def load_mask_raw(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode != "L":
            im = im.convert("L")
        return np.asarray(im, dtype=np.uint8)


def load_sample(pair: SamplePair, base_dir=None, dtype="float64"):
    """(tensor_a, tensor_b, mask_tensor): images scaled into [0,1],
    mask mapped {0,255} -> {0,1}; any other mask value is rejected."""
    base = DatasetManifest(base_dir=Path(base_dir) if base_dir else None)
    a = load_rgb(base.resolve(pair.image_a))
    b = load_rgb(base.resolve(pair.image_b))
    m = load_mask_raw(base.resolve(pair.mask))
    if a.shape[:2] != b.shape[:2] or a.shape[:2] != m.shape:
        raise DataError(
            f"sample {pair.id!r}: extents differ "
            f"(a {a.shape[:2]}, b {b.shape[:2]}, mask {m.shape})"
        )
    bad = (m != 0) & (m != 255)
    if np.any(bad):
        y, x = np.argwhere(bad)[0]
        raise DataError(
            f"sample {pair.id!r}: mask value {int(m[y, x])} at pixel ({y}, {x}) "
            f"is neither 0 nor 255"
        )
    np_dtype = np.dtype(dtype)
    ta = Tensor(a.transpose(2, 0, 1).astype(np_dtype) / np_dtype.type(255.0))
    tb = Tensor(b.transpose(2, 0, 1).astype(np_dtype) / np_dtype.type(255.0))
    tm = Tensor((m == 255).astype(np_dtype))
    return ta, tb, tm


# ---------------------------------------------------------------------------
# tiling


def tile_grid(h: int, w: int, tile_size: int) -> tuple[int, int]:
    """Rows/cols of the floor-aligned non-overlapping grid."""
    if tile_size < 1:
        raise DataError(f"tile_size must be >= 1, got {tile_size}")
    return h // tile_size, w // tile_size


def tile(pair: SamplePair, out_dir, tile_size: int = 256, base_dir=None) -> list[SamplePair]:
    """Cut one large pair into aligned tile_size x tile_size pairs.

    Trailing remainder pixels are discarded. Tile ids are the source id
    suffixed with _r{row}_c{col}; rasters land in out_dir and returned
    paths are relative to it.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base = DatasetManifest(base_dir=Path(base_dir) if base_dir else None)
    a = load_rgb(base.resolve(pair.image_a))
    b = load_rgb(base.resolve(pair.image_b))
    m = load_mask_raw(base.resolve(pair.mask))
    h, w = m.shape
    if a.shape[:2] != (h, w) or b.shape[:2] != (h, w):
        raise DataError(f"pair {pair.id!r}: raster extents differ")
    if tile_size > min(h, w):
        raise DataError(
            f"tile_size {tile_size} exceeds the smaller image extent {min(h, w)}"
        )
    rows, cols = tile_grid(h, w, tile_size)
    out: list[SamplePair] = []
    for r in range(rows):
        for c in range(cols):
            ys = slice(r * tile_size, (r + 1) * tile_size)
            xs = slice(c * tile_size, (c + 1) * tile_size)
            tid = f"{pair.id}_r{r:03d}_c{c:03d}"
            pa, pb, pm = f"{tid}_a.png", f"{tid}_b.png", f"{tid}_mask.png"
            save_rgb(out_dir / pa, np.ascontiguousarray(a[ys, xs]))
            save_rgb(out_dir / pb, np.ascontiguousarray(b[ys, xs]))
            Image.fromarray(np.ascontiguousarray(m[ys, xs]), mode="L").save(
                out_dir / pm, format="PNG"
            )
            out.append(SamplePair(id=tid, image_a=pa, image_b=pb, mask=pm))
    return out


# ---------------------------------------------------------------------------
# synthetic generation


@dataclass(frozen=True)
class SyntheticGenConfig:
    count: int = 200
    size: tuple[int, int] = (64, 64)
    shapes_min: int = 1
    shapes_max: int = 3
    shape_kinds: tuple[str, ...] = SHAPE_KINDS
    scenery_shapes: int = 5
    color_jitter: int = 12
    noise_sigma: float = 3.0
    seed: int = 0

    def validate(self) -> None:
        h, w = self.size
        if h < 16 or w < 16:
            raise DataError(f"size must be at least 16x16, got {self.size}")
        if self.count < 1:
            raise DataError("count must be >= 1")
        if not 0 <= self.shapes_min <= self.shapes_max:
            raise DataError(
                f"invalid shapes range ({self.shapes_min}, {self.shapes_max})"
            )
        unknown = set(self.shape_kinds) - set(SHAPE_KINDS)
        if unknown:
            raise DataError(f"unknown shape kinds {sorted(unknown)}")


def _draw_shape(draw: ImageDraw.ImageDraw, kind: str, rng: Rng, h: int, w: int, color):
    if kind == "rectangle":
        x0 = int(rng.integers(0, w - 6))
        y0 = int(rng.integers(0, h - 6))
        x1 = min(w - 1, x0 + int(rng.integers(5, max(6, w // 2))))
        y1 = min(h - 1, y0 + int(rng.integers(5, max(6, h // 2))))
        draw.rectangle([x0, y0, x1, y1], fill=color)
    elif kind == "polygon":
        cx = int(rng.integers(6, w - 6))
        cy = int(rng.integers(6, h - 6))
        pts = []
        for _ in range(int(rng.integers(3, 7))):
            pts.append((
                int(np.clip(cx + int(rng.integers(-w // 4, w // 4 + 1)), 0, w - 1)),
                int(np.clip(cy + int(rng.integers(-h // 4, h // 4 + 1)), 0, h - 1)),
            ))
        if len(set(pts)) < 3:
            draw.rectangle([cx - 2, cy - 2, cx + 2, cy + 2], fill=color)
        else:
            draw.polygon(pts, fill=color)
    elif kind == "line":
        # road-like strip: a short polyline of a few segments
        pts = [(int(rng.integers(0, w)), int(rng.integers(0, h)))]
        for _ in range(int(rng.integers(1, 4))):
            px, py = pts[-1]
            pts.append((
                int(np.clip(px + int(rng.integers(-w // 2, w // 2 + 1)), 0, w - 1)),
                int(np.clip(py + int(rng.integers(-h // 2, h // 2 + 1)), 0, h - 1)),
            ))
        draw.line(pts, fill=color, width=int(rng.integers(2, 5)))
    else:  # pragma: no cover - guarded by config validation
        raise DataError(f"unknown shape kind {kind!r}")


def _random_color(rng: Rng) -> tuple[int, int, int]:
    return tuple(int(v) for v in rng.integers(0, 256, 3))


def _render_base_scene(rng: Rng, h: int, w: int, scenery: int) -> np.ndarray:
    img = Image.new("RGB", (w, h), _random_color(rng))
    draw = ImageDraw.Draw(img)
    for _ in range(scenery):
        kind = SHAPE_KINDS[int(rng.integers(0, len(SHAPE_KINDS)))]
        _draw_shape(draw, kind, rng, h, w, _random_color(rng))
    return np.array(img, dtype=np.uint8)


def _generate_one(cfg: SyntheticGenConfig, rng: Rng):
    """One clean pair plus exact change mask (uint8 arrays)."""
    h, w = cfg.size
    base = _render_base_scene(rng, h, w, cfg.scenery_shapes)
    clean_a = base.copy()
    clean_b = base.copy()
    n_changes = int(rng.integers(cfg.shapes_min, cfg.shapes_max + 1))
    footprint = np.zeros((h, w), dtype=bool)
    for _ in range(n_changes):
        kind = cfg.shape_kinds[int(rng.integers(0, len(cfg.shape_kinds)))]
        color = _random_color(rng)
        target_is_b = bool(rng.integers(0, 2))  # add to b, or "remove" (present in a only)
        canvas = Image.fromarray(clean_b if target_is_b else clean_a)
        stencil = Image.new("L", (w, h), 0)
        # identical-entropy child streams: canvas and stencil must see the
        # exact same coordinate draws
        shape_key = int(rng.integers(0, 2**31))
        _draw_shape(ImageDraw.Draw(canvas), kind, rng.derive("shape", shape_key), h, w, color)
        _draw_shape(ImageDraw.Draw(stencil), kind, rng.derive("shape", shape_key), h, w, 255)
        drawn = np.array(canvas, dtype=np.uint8)
        mask = np.array(stencil, dtype=np.uint8) > 0
        if target_is_b:
            clean_b = drawn
        else:
            clean_a = drawn
        footprint |= mask
    # force a per-pixel difference wherever a change shape landed on an
    # identical underlying color, so footprint == (clean_a != clean_b)
    equal = (clean_a == clean_b).all(axis=2) & footprint
    if equal.any():
        target = clean_b  # adjust the most recent frame deterministically
        shift = np.where(target[equal][:, 0] >= 128, -32, 32).astype(np.int16)
        adjusted = target[equal].astype(np.int16)
        adjusted[:, 0] += shift
        target[equal] = np.clip(adjusted, 0, 255).astype(np.uint8)
    mask = (clean_a != clean_b).any(axis=2)

    def _degrade(clean: np.ndarray, drng: Rng) -> np.ndarray:
        out = clean.astype(np.float64)
        jitter = drng.uniform(-cfg.color_jitter, cfg.color_jitter, 3)
        out += jitter.reshape(1, 1, 3)
        if cfg.noise_sigma > 0:
            out += drng.normal(0.0, cfg.noise_sigma, out.shape)
        return np.clip(np.rint(out), 0, 255).astype(np.uint8)

    img_a = _degrade(clean_a, rng.derive("degrade", 0))
    img_b = _degrade(clean_b, rng.derive("degrade", 1))
    return img_a, img_b, mask.astype(np.uint8), clean_a, clean_b


def generate_synthetic(cfg: SyntheticGenConfig, out_dir, debug: bool = False):
    """Write cfg.count sample pairs + manifest.jsonl under out_dir.

    Returns the manifest; with debug=True also returns a dict of clean
    (pre-jitter/noise) frames per sample id for invariant checking.
    """
    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    root = Rng(cfg.seed)
    entries: list[SamplePair] = []
    clean: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    for i in range(cfg.count):
        sid = f"synth{i:05d}"
        img_a, img_b, mask, clean_a, clean_b = _generate_one(cfg, root.derive("sample", i))
        pa, pb, pm = f"{sid}_a.png", f"{sid}_b.png", f"{sid}_mask.png"
        save_rgb(out_dir / pa, img_a)
        save_rgb(out_dir / pb, img_b)
        save_mask(out_dir / pm, mask)
        entries.append(SamplePair(id=sid, image_a=pa, image_b=pb, mask=pm))
        if debug:
            clean[sid] = (clean_a, clean_b)
    manifest = DatasetManifest(entries=entries, base_dir=out_dir)
    write_manifest(manifest, out_dir / "manifest.jsonl")
    if debug:
        return manifest, clean
    return manifest
