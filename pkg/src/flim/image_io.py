"""Dataset loading: decode rasters, convert sRGB to CIE L*a*b*, map bands to [0,1].

All downstream stages consume images as H x W x m float arrays with every
value in [0,1]. Raw dataset images always have m=3 (L*, a*, b*); intermediate
feature maps reuse the same shape with arbitrary m.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image as PILImage, UnidentifiedImageError

from .errors import DuplicateIdError, FormatError, IoError, LayoutError

# sRGB -> XYZ (D65) per IEC 61966-2-1; rows sum to the white point below,
# so pure white lands exactly on L*=100, a*=b*=0.
_SRGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
_WHITE = np.array([0.95047, 1.0, 1.08883])

# Fixed theoretical band ranges for the [0,1] mapping. Per-image min-max would
# make marker statistics incomparable across images, so these never adapt.
LAB_RANGES = ((0.0, 100.0), (-128.0, 127.0), (-128.0, 127.0))


@dataclass(frozen=True)
class Image:
    """A multi-band raster with values in [0,1]."""

    id: str
    data: np.ndarray  # H x W x m

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def bands(self) -> int:
        return self.data.shape[2]


@dataclass
class DatasetIndex:
    """Index of (id, path, label) triples; labels are 1-based class ids."""

    entries: list[tuple[str, str, int]] = field(default_factory=list)
    classes: int = 0

    def ids(self) -> list[str]:
        return [e[0] for e in self.entries]

    def label_of(self, image_id: str) -> int:
        for eid, _, label in self.entries:
            if eid == image_id:
                return label
        raise KeyError(image_id)

    def path_of(self, image_id: str) -> str:
        for eid, path, _ in self.entries:
            if eid == image_id:
                return path
        raise KeyError(image_id)


def rgb_to_lab(rgb):
    """Convert one sRGB triple in [0,255] to (L*, a*, b*).

    Standard sRGB gamma, D65 white point; L in [0,100], a/b roughly
    in [-128,127].
    """
    out = rgb_array_to_lab(np.asarray(rgb, dtype=np.float64).reshape(1, 1, 3))
    return tuple(float(v) for v in out[0, 0])


def rgb_array_to_lab(rgb: np.ndarray) -> np.ndarray:
    """Vectorized sRGB([0,255]) -> Lab over an H x W x 3 array."""
    c = np.asarray(rgb, dtype=np.float64) / 255.0
    linear = np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)
    xyz = linear @ _SRGB_TO_XYZ.T
    t = xyz / _WHITE
    delta = 6.0 / 29.0
    f = np.where(t > delta**3, np.cbrt(t), t / (3 * delta * delta) + 4.0 / 29.0)
    fx, fy, fz = f[..., 0], f[..., 1], f[..., 2]
    lab = np.stack([116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)], axis=-1)
    return lab


def normalize_lab(lab: np.ndarray) -> np.ndarray:
    """Affinely map Lab bands to [0,1] using the fixed ranges, clamped."""
    out = np.empty_like(lab)
    for b, (lo, hi) in enumerate(LAB_RANGES):
        out[..., b] = (lab[..., b] - lo) / (hi - lo)
    return np.clip(out, 0.0, 1.0)


def denormalize_lab(norm: np.ndarray) -> np.ndarray:
    """Inverse of :func:`normalize_lab` (exact for in-range values)."""
    out = np.empty_like(norm)
    for b, (lo, hi) in enumerate(LAB_RANGES):
        out[..., b] = norm[..., b] * (hi - lo) + lo
    return out


def load_image(path: str, image_id: str | None = None) -> Image:
    """Decode an 8-bit PNG/JPEG, convert to Lab, normalize bands to [0,1]."""
    try:
        with PILImage.open(path) as img:
            img.load()
            mode = img.mode
            if mode not in ("RGB", "L"):
                # palettes etc. decode fine as RGB; reject alpha and >8-bit
                if mode in ("P",):
                    img = img.convert("RGB")
                else:
                    raise FormatError(f"{path}: unsupported mode {mode!r}, need 8-bit RGB")
            if img.mode == "L":
                raise FormatError(f"{path}: expected 3 channels, got 1")
            arr = np.asarray(img, dtype=np.uint8)
    except FileNotFoundError as e:
        raise IoError(f"{path}: file not found") from e
    except UnidentifiedImageError as e:
        raise IoError(f"{path}: cannot decode image") from e
    except OSError as e:
        raise IoError(f"{path}: {e}") from e
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise FormatError(f"{path}: expected 3 channels, got shape {arr.shape}")
    lab = rgb_array_to_lab(arr)
    data = normalize_lab(lab).astype(np.float32)
    if image_id is None:
        image_id = os.path.splitext(os.path.basename(path))[0]
    return Image(id=image_id, data=data)


_IMAGE_EXTS = (".png", ".jpg", ".jpeg")


def load_dataset(root_dir: str) -> DatasetIndex:
    """Index a dataset laid out as <root>/<label>/<id>.png or via manifest.tsv.

    Class labels are positive integers. Raises LayoutError when neither
    layout is present and DuplicateIdError on conflicting ids.
    """
    manifest = os.path.join(root_dir, "manifest.tsv")
    if os.path.isfile(manifest):
        return _load_manifest(root_dir, manifest)
    if not os.path.isdir(root_dir):
        raise LayoutError(f"{root_dir}: not a directory")
    entries: list[tuple[str, str, int]] = []
    seen: dict[str, int] = {}
    for name in sorted(os.listdir(root_dir)):
        sub = os.path.join(root_dir, name)
        if not (os.path.isdir(sub) and name.isdigit() and int(name) >= 1):
            continue
        label = int(name)
        for fname in sorted(os.listdir(sub)):
            if not fname.lower().endswith(_IMAGE_EXTS):
                continue
            image_id = os.path.splitext(fname)[0]
            if image_id in seen:
                raise DuplicateIdError(f"id {image_id!r} appears in classes {seen[image_id]} and {label}")
            seen[image_id] = label
            entries.append((image_id, os.path.join(sub, fname), label))
    if not entries:
        raise LayoutError(f"{root_dir}: no class subdirectories with images found")
    classes = max(label for _, _, label in entries)
    if classes < 2:
        raise LayoutError(f"{root_dir}: need at least 2 classes, found {classes}")
    return DatasetIndex(entries=entries, classes=classes)


def _load_manifest(root_dir: str, manifest: str) -> DatasetIndex:
    entries: list[tuple[str, str, int]] = []
    seen: dict[str, int] = {}
    with open(manifest, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise LayoutError(f"{manifest}:{lineno}: expected id<TAB>path<TAB>label")
            image_id, path, label_s = parts
            try:
                label = int(label_s)
            except ValueError as e:
                raise LayoutError(f"{manifest}:{lineno}: bad label {label_s!r}") from e
            if label < 1:
                raise LayoutError(f"{manifest}:{lineno}: labels are 1-based, got {label}")
            if image_id in seen:
                raise DuplicateIdError(f"{manifest}:{lineno}: duplicate id {image_id!r}")
            seen[image_id] = label
            if not os.path.isabs(path):
                path = os.path.join(root_dir, path)
            entries.append((image_id, path, label))
    if not entries:
        raise LayoutError(f"{manifest}: empty manifest")
    classes = max(label for _, _, label in entries)
    if classes < 2:
        raise LayoutError(f"{manifest}: need at least 2 classes, found {classes}")
    return DatasetIndex(entries=entries, classes=classes)
