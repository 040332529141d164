"""Synthetic two-class texture tiles: oriented stripes vs. isotropic blobs.

Both classes share the same grayscale value distribution, so only local
texture separates them; that is exactly the signal marker-driven filters
should pick up. Used by the benchmark suite and the datagen CLI command.
"""

from __future__ import annotations

import os

import numpy as np
from PIL import Image as PILImage

from .markers import rasterize_strokes, save_markers

STRIPES_CLASS = 1  # positive class
BLOBS_CLASS = 2


def stripe_tile(rng: np.random.Generator, size: int = 64) -> np.ndarray:
    period = rng.uniform(5.0, 9.0)
    theta = rng.uniform(0.0, np.pi)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    yy, xx = np.mgrid[0:size, 0:size]
    wave = np.sin(2.0 * np.pi * (xx * np.cos(theta) + yy * np.sin(theta)) / period + phase)
    tile = 0.5 + 0.38 * wave + rng.normal(0.0, 0.03, (size, size))
    return np.clip(tile, 0.0, 1.0)


def blob_tile(rng: np.random.Generator, size: int = 64) -> np.ndarray:
    n_blobs = int(rng.integers(6, 12))
    yy, xx = np.mgrid[0:size, 0:size]
    tile = np.zeros((size, size))
    for _ in range(n_blobs):
        cx, cy = rng.uniform(0, size, 2)
        sigma = rng.uniform(3.0, 6.0)
        tile += np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2.0 * sigma * sigma))
    tile = tile - tile.min()
    peak = tile.max()
    if peak > 0:
        tile = tile / peak
    tile = 0.12 + 0.76 * tile + rng.normal(0.0, 0.03, (size, size))
    return np.clip(tile, 0.0, 1.0)


def generate_texture_dataset(root: str, tiles_per_class: int = 100,
                             size: int = 64, seed: int = 0) -> None:
    """Write <root>/1/stripes_*.png and <root>/2/blobs_*.png tiles."""
    rng = np.random.default_rng(seed)
    for label, maker, stem in ((STRIPES_CLASS, stripe_tile, "stripes"),
                               (BLOBS_CLASS, blob_tile, "blobs")):
        sub = os.path.join(root, str(label))
        os.makedirs(sub, exist_ok=True)
        for i in range(tiles_per_class):
            tile = maker(rng, size)
            gray = (tile * 255.0).round().astype(np.uint8)
            rgb = np.stack([gray, gray, gray], axis=-1)
            PILImage.fromarray(rgb).save(os.path.join(sub, f"{stem}_{i:03d}.png"))


def example_strokes(label: int, size: int = 64) -> list:
    """A cross of two strokes through the tile center, labeled with its class."""
    margin = size // 8
    mid = size // 2
    return [
        ([(margin, mid), (size - margin, mid)], 2.0, label, "h"),
        ([(mid, margin), (mid, size - margin)], 2.0, label, "v"),
    ]


def write_example_markers(out_dir: str, ids_by_class: dict[int, list[str]],
                          size: int = 64) -> None:
    """Rasterize the example cross strokes for the given images per class."""
    os.makedirs(out_dir, exist_ok=True)
    for label, ids in sorted(ids_by_class.items()):
        for image_id in ids:
            ms = rasterize_strokes(example_strokes(label, size), size, size,
                                   image_id=image_id)
            save_markers(ms, os.path.join(out_dir, f"{image_id}.txt"))
