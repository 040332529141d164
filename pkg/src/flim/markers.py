"""User-drawn markers: stroke rasterization, persistence, and patch extraction.

A marker set is a collection of labeled pixels on one image. Patches are the
k x k x m neighborhoods around those pixels, grouped per class; they are the
unit everything downstream clusters and standardizes.

The stroke rasterizer is the authority the browser preview must reproduce
pixel-for-pixel, so every step is integer-exact: coordinates round half-up,
segments walk with Bresenham, and the brush stamps all integer offsets with
dx^2 + dy^2 <= radius^2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BadPatchSizeError, EmptyStrokeError, ParseError
from .image_io import Image

MARKER_HEADER_PREFIX = "#flim-markers v1"


@dataclass
class MarkerSet:
    """Labeled pixels on one image; (x, y) are column/row, labels 1-based."""

    image_id: str
    width: int
    height: int
    pixels: list[tuple[int, int, int]] = field(default_factory=list)  # (x, y, label)
    stroke_ids: list[str] = field(default_factory=list)  # UI provenance only

    def count_per_label(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for _, _, label in self.pixels:
            counts[label] = counts.get(label, 0) + 1
        return counts

    def labels(self) -> list[int]:
        return sorted(set(label for _, _, label in self.pixels))


@dataclass
class Patch:
    values: np.ndarray  # k x k x m
    label: int
    source: tuple[str, int, int]  # (image_id, x, y)


@dataclass
class PatchSets:
    """Per-class patch lists; the union runs over all selected images."""

    by_class: dict[int, list[Patch]] = field(default_factory=dict)

    def add(self, patch: Patch) -> None:
        self.by_class.setdefault(patch.label, []).append(patch)

    def merge(self, other: "PatchSets") -> None:
        for label, patches in other.by_class.items():
            self.by_class.setdefault(label, []).extend(patches)

    def all_patches(self) -> list[Patch]:
        return [p for label in sorted(self.by_class) for p in self.by_class[label]]

    def counts(self) -> dict[int, int]:
        return {label: len(ps) for label, ps in self.by_class.items()}

    def total(self) -> int:
        return sum(len(ps) for ps in self.by_class.values())

    def stacked(self, label: int) -> np.ndarray:
        return np.stack([p.values for p in self.by_class[label]])


def _round_half_up(v: float) -> int:
    # Mirrored by the browser preview (Math.floor(v + 0.5)); do not change.
    return int(np.floor(v + 0.5))


def _bresenham(x0: int, y0: int, x1: int, y1: int) -> list[tuple[int, int]]:
    points = []
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    x, y = x0, y0
    while True:
        points.append((x, y))
        if x == x1 and y == y1:
            break
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x += sx
        if e2 <= dx:
            err += dx
            y += sy
    return points


def rasterize_strokes(strokes, width: int, height: int, image_id: str = "") -> MarkerSet:
    """Rasterize (polyline, brush radius, label) strokes into a marker set.

    Polyline coordinates are clamped into bounds, swept with Bresenham, and
    each visited center stamps a disc of the brush radius. Later strokes win
    at conflicting pixels. Raises EmptyStrokeError when nothing is produced.
    """
    label_at: dict[tuple[int, int], int] = {}
    stroke_ids: list[str] = []
    for stroke in strokes:
        if len(stroke) == 4:
            points, radius, label, stroke_id = stroke
        else:
            points, radius, label = stroke
            stroke_id = ""
        if stroke_id:
            stroke_ids.append(str(stroke_id))
        if not points:
            continue
        centers = [
            (
                min(max(_round_half_up(px), 0), width - 1),
                min(max(_round_half_up(py), 0), height - 1),
            )
            for px, py in points
        ]
        visited: list[tuple[int, int]] = []
        if len(centers) == 1:
            visited = [centers[0]]
        else:
            for (x0, y0), (x1, y1) in zip(centers, centers[1:]):
                visited.extend(_bresenham(x0, y0, x1, y1))
        r = float(radius)
        ri = int(np.floor(r))
        r2 = r * r
        for cx, cy in visited:
            for dy in range(-ri, ri + 1):
                for dx in range(-ri, ri + 1):
                    if dx * dx + dy * dy > r2:
                        continue
                    x, y = cx + dx, cy + dy
                    if 0 <= x < width and 0 <= y < height:
                        label_at[(x, y)] = int(label)
    if not label_at:
        raise EmptyStrokeError("strokes rasterized to zero pixels")
    pixels = [(x, y, label_at[(x, y)])
              for (x, y) in sorted(label_at, key=lambda p: (p[1], p[0]))]
    return MarkerSet(image_id=image_id, width=width, height=height,
                     pixels=pixels, stroke_ids=stroke_ids)


def extract_patches(rep, markers: MarkerSet, k: int) -> PatchSets:
    """Cut one zero-padded k x k x m patch per marker pixel, grouped by label."""
    data = rep.data if isinstance(rep, Image) else np.asarray(rep)
    if data.ndim == 2:
        data = data[:, :, None]
    h, w, m = data.shape
    if k % 2 == 0 or k < 1:
        raise BadPatchSizeError(f"patch side must be odd, got {k}")
    if k > 2 * min(h, w):
        raise BadPatchSizeError(f"patch side {k} too large for {h}x{w} image")
    half = (k - 1) // 2
    padded = np.zeros((h + 2 * half, w + 2 * half, m), dtype=data.dtype)
    padded[half:half + h, half:half + w] = data
    sets = PatchSets()
    for x, y, label in markers.pixels:
        window = padded[y:y + k, x:x + k]
        sets.add(Patch(values=window.copy(), label=label, source=(markers.image_id, x, y)))
    return sets


def save_markers(markers: MarkerSet, path: str) -> None:
    """Write the marker file: header line then x<TAB>y<TAB>label rows."""
    lines = [
        f"{MARKER_HEADER_PREFIX} image={markers.image_id} "
        f"width={markers.width} height={markers.height}"
    ]
    for x, y, label in markers.pixels:
        lines.append(f"{x}\t{y}\t{label}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_markers(path: str) -> MarkerSet:
    """Parse a marker file, validating labels and bounds against the header."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith(MARKER_HEADER_PREFIX):
        raise ParseError(f"{path}:1: missing '{MARKER_HEADER_PREFIX}' header")
    header = lines[0][len(MARKER_HEADER_PREFIX):].strip()
    fields = dict(part.split("=", 1) for part in header.split() if "=" in part)
    try:
        image_id = fields["image"]
        width = int(fields["width"])
        height = int(fields["height"])
    except (KeyError, ValueError) as e:
        raise ParseError(f"{path}:1: bad header fields: {header!r}") from e
    pixels: list[tuple[int, int, int]] = []
    seen: dict[tuple[int, int], int] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ParseError(f"{path}:{lineno}: expected x<TAB>y<TAB>label")
        try:
            x, y, label = int(parts[0]), int(parts[1]), int(parts[2])
        except ValueError as e:
            raise ParseError(f"{path}:{lineno}: non-integer field") from e
        if label < 1:
            raise ParseError(f"{path}:{lineno}: labels are 1-based, got {label}")
        if not (0 <= x < width and 0 <= y < height):
            raise ParseError(f"{path}:{lineno}: pixel ({x},{y}) outside {width}x{height}")
        if seen.get((x, y), label) != label:
            raise ParseError(f"{path}:{lineno}: pixel ({x},{y}) has conflicting labels")
        if (x, y) not in seen:
            seen[(x, y)] = label
            pixels.append((x, y, label))
    return MarkerSet(image_id=image_id, width=width, height=height, pixels=pixels)
