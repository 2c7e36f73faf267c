"""Synthetic pixel-labeled corpus: bright shapes on textured backgrounds.

Each sample carries an exact object mask (a pixel is object iff its
center lies inside the analytic shape; no anti-aliasing), so ground
truth for the saliency and segmentation metrics is free. Objects are
deliberately brighter than the background: the saliency descent can
only darken pixels, so erasing the object has to be a downhill move.

Masked variants replace object pixels with the per-image background
mean color. The flat, shape-silhouetted hole this leaves is itself
class-discriminative, which is what the masked and dual classifiers
train on.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Tuple

import numpy as np

from . import pngio
from .rng import stream

MANIFEST_VERSION = "gradsal-dataset-v1"

# Shape palette, in the order class counts select from.
SHAPE_NAMES = ("disk", "triangle", "bar", "cross")

_MIN_IMAGE_SIZE = 16


class DatasetError(ValueError):
    pass


@dataclass
class GenerationConfig:
    classes: Tuple[str, ...] = ("disk", "triangle", "bar")
    image_size: int = 64
    train_count: int = 1500
    test_count: int = 500
    seed: int = 7

    def __post_init__(self):
        if len(self.classes) < 2:
            raise DatasetError("need at least 2 classes")
        unknown = [c for c in self.classes if c not in SHAPE_NAMES]
        if unknown:
            raise DatasetError(f"unknown shape classes: {unknown}")
        if len(set(self.classes)) != len(self.classes):
            raise DatasetError("duplicate class names")
        if self.image_size < _MIN_IMAGE_SIZE:
            raise DatasetError(
                f"image size {self.image_size} too small to place shapes "
                f"(minimum {_MIN_IMAGE_SIZE})"
            )
        if self.train_count < 1 or self.test_count < 1:
            raise DatasetError("train and test counts must be positive")


@dataclass
class LabeledSample:
    """One image with its class label and exact object mask."""

    image: np.ndarray  # (3, H, W) float64 in [0, 1]
    label: int
    mask: np.ndarray  # (H, W) bool
    split: str

    def __post_init__(self):
        n_obj = int(np.count_nonzero(self.mask))
        total = self.mask.size
        if n_obj < 1 or n_obj > total - 1:
            raise DatasetError(
                f"mask must mark a proper nonempty object region, got {n_obj}/{total}"
            )
        if self.image.shape[1:] != self.mask.shape:
            raise DatasetError(
                f"image {self.image.shape} and mask {self.mask.shape} disagree"
            )


@dataclass
class ManifestEntry:
    image: str  # path relative to the manifest
    mask: str
    label: int
    split: str

    @property
    def sample_id(self) -> str:
        return Path(self.image).stem


@dataclass
class DatasetManifest:
    version: str
    classes: List[str]
    samples: List[ManifestEntry]
    rng_seed: int
    image_size: int
    root: Path = field(default=Path("."), compare=False)

    def __post_init__(self):
        n = len(self.classes)
        for s in self.samples:
            if not 0 <= s.label < n:
                raise DatasetError(f"label {s.label} out of range for {n} classes")

    def split(self, name: str) -> List[ManifestEntry]:
        return [s for s in self.samples if s.split == name]

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "classes": list(self.classes),
            "rng_seed": self.rng_seed,
            "image_size": self.image_size,
            "samples": [
                {"image": s.image, "mask": s.mask, "label": s.label, "split": s.split}
                for s in self.samples
            ],
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        p = Path(path)
        d = json.loads(p.read_text())
        if d.get("version") != MANIFEST_VERSION:
            raise DatasetError(f"unsupported manifest version: {d.get('version')!r}")
        return cls(
            version=d["version"],
            classes=list(d["classes"]),
            samples=[ManifestEntry(**s) for s in d["samples"]],
            rng_seed=int(d["rng_seed"]),
            image_size=int(d["image_size"]),
            root=p.parent,
        )

    def load_sample(self, entry: ManifestEntry) -> LabeledSample:
        image = pngio.load_rgb(self.root / entry.image)
        mask = pngio.load_mask(self.root / entry.mask)
        return LabeledSample(image=image, label=entry.label, mask=mask,
                             split=entry.split)


def _shape_raster(shape: str, size: int, rng: np.random.Generator) -> np.ndarray:
    """Rasterize one randomly placed/scaled shape; pixel centers decide."""
    r = rng.uniform(0.14, 0.30) * size
    r = max(r, 4.0)
    margin = r + 2.0
    cy = rng.uniform(margin, size - margin)
    cx = rng.uniform(margin, size - margin)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dy, dx = yy - cy, xx - cx

    if shape == "disk":
        return dy * dy + dx * dx <= r * r
    if shape == "triangle":
        # upward triangle inscribed in the radius-r circle
        verts = []
        for k in range(3):
            ang = -np.pi / 2 + 2 * np.pi * k / 3
            verts.append((cx + r * np.cos(ang), cy + r * np.sin(ang)))
        inside = np.ones((size, size), dtype=bool)
        for k in range(3):
            x0, y0 = verts[k]
            x1, y1 = verts[(k + 1) % 3]
            # vertices are counter-clockwise in image coords; keep the left side
            cross = (x1 - x0) * (yy - y0) - (y1 - y0) * (xx - x0)
            inside &= cross >= 0
        return inside
    if shape == "bar":
        phi = rng.uniform(0.0, np.pi)
        u = np.cos(phi) * dx + np.sin(phi) * dy
        v = -np.sin(phi) * dx + np.cos(phi) * dy
        return (np.abs(u) <= r) & (np.abs(v) <= 0.38 * r)
    if shape == "cross":
        t = 0.34 * r
        horiz = (np.abs(dx) <= r) & (np.abs(dy) <= t)
        vert = (np.abs(dy) <= r) & (np.abs(dx) <= t)
        return horiz | vert
    raise DatasetError(f"unknown shape: {shape}")


def _background(size: int, rng: np.random.Generator) -> np.ndarray:
    """Dim textured background: tinted base + coarse blocks + pixel noise."""
    base = rng.uniform(0.10, 0.38, size=3)
    coarse_n = max(size // 8, 1)
    coarse = rng.uniform(-1.0, 1.0, size=(coarse_n, coarse_n))
    reps = -(-size // coarse_n)  # ceil
    texture = np.kron(coarse, np.ones((reps, reps)))[:size, :size]
    noise = rng.uniform(-1.0, 1.0, size=(3, size, size))
    img = base[:, None, None] + 0.05 * texture[None, :, :] + 0.02 * noise
    return np.clip(img, 0.02, 0.45)


def _object_color(rng: np.random.Generator) -> np.ndarray:
    """Bright saturated color: one dominant channel, others dimmer."""
    color = rng.uniform(0.55, 0.95, size=3)
    dominant = rng.integers(0, 3)
    color[dominant] = rng.uniform(0.80, 0.98)
    return color


def render_sample(shape: str, size: int, rng: np.random.Generator):
    """Paint one sample; returns (image (3,H,W) float in [0,1], mask)."""
    img = _background(size, rng)
    raster = _shape_raster(shape, size, rng)
    color = _object_color(rng)
    wobble = rng.uniform(-0.02, 0.02, size=(3, size, size))
    obj = np.clip(color[:, None, None] + wobble, 0.50, 1.0)
    img = np.where(raster[None, :, :], obj, img)
    # quantize once so the on-disk PNG round-trips bit-exactly
    u8 = np.floor(img * 255.0 + 0.5).astype(np.uint8)
    return u8.astype(np.float64) / 255.0, raster


def generate(config: GenerationConfig, out_dir) -> DatasetManifest:
    """Write a stratified corpus (images/, masks/, manifest.json) to out_dir.

    Deterministic for a fixed seed: every sample draws from its own named
    substream, so generation order (or parallelism) cannot change pixels.
    """
    out = Path(out_dir)
    img_dir = pngio.ensure_dir(out / "images")
    mask_dir = pngio.ensure_dir(out / "masks")
    n_classes = len(config.classes)

    entries: List[ManifestEntry] = []
    for split, count in (("train", config.train_count), ("test", config.test_count)):
        for i in range(count):
            label = i % n_classes  # stratified round-robin
            sample_id = f"{split}_{i:05d}"
            rng = stream(config.seed, "dataset", sample_id)
            image, mask = render_sample(config.classes[label], config.image_size, rng)
            LabeledSample(image=image, label=label, mask=mask, split=split)
            img_rel = f"images/{sample_id}.png"
            mask_rel = f"masks/{sample_id}.png"
            pngio.save_rgb(out / img_rel, image)
            pngio.save_mask(out / mask_rel, mask)
            entries.append(ManifestEntry(image=img_rel, mask=mask_rel,
                                         label=label, split=split))

    manifest = DatasetManifest(
        version=MANIFEST_VERSION,
        classes=list(config.classes),
        samples=entries,
        rng_seed=config.seed,
        image_size=config.image_size,
        root=out,
    )
    manifest.save(out / "manifest.json")
    return manifest


def make_masked(sample: LabeledSample) -> np.ndarray:
    """Replace object pixels with the image's mean background color.

    Background pixels are returned untouched; only mask=1 pixels change.
    """
    mask = sample.mask
    fill = sample.image[:, ~mask].mean(axis=1)
    out = sample.image.copy()
    out[:, mask] = fill[:, None]
    return out
