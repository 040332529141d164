"""Filter learning: standardize marker patches, cluster per class, emit filters.

The pipeline is: compute mean/std over the union of all marker patches
(marker-based batch normalization), standardize every patch, run K-means
inside each class on the vectorized patches, and turn each centroid into a
unit-norm filter. Filters keep their source class so activations can be
inspected per class.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass

import numpy as np

from .errors import BadKError, TooFewPatchesError
from .markers import PatchSets

log = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-4
FILTERBANK_MAGIC = b"FLIMFB1"


@dataclass
class MarkerStats:
    """Componentwise mean and (population) std over all marker patches."""

    mean: np.ndarray  # k x k x m
    std: np.ndarray   # k x k x m, floored at SIGMA_FLOOR

    def standardize(self, patches: np.ndarray) -> np.ndarray:
        """Apply (P - mean) / std; accepts one patch or a stacked batch."""
        return (patches - self.mean) / self.std


@dataclass
class FilterBank:
    """K unit-norm filters of shape k x k x m plus their normalization stats."""

    filters: np.ndarray   # K x k x k x m, float32, each unit L2 norm
    classes: np.ndarray   # K source-class labels
    stats: MarkerStats

    @property
    def num_filters(self) -> int:
        return self.filters.shape[0]

    @property
    def patch_side(self) -> int:
        return self.filters.shape[1]

    @property
    def bands(self) -> int:
        return self.filters.shape[3]


def compute_marker_stats(patches: np.ndarray) -> MarkerStats:
    """Mean/std over a stacked (n, k, k, m) patch array, all classes pooled.

    Std is the population standard deviation, floored componentwise at
    SIGMA_FLOOR so flat marker regions cannot blow up the division.
    """
    patches = np.asarray(patches, dtype=np.float64)
    if patches.ndim != 4 or patches.shape[0] < 2:
        raise TooFewPatchesError(
            f"need a stacked (n>=2, k, k, m) patch array, got shape {patches.shape}")
    mean = patches.mean(axis=0)
    std = patches.std(axis=0)  # population (ddof=0)
    std = np.maximum(std, SIGMA_FLOOR)
    return MarkerStats(mean=mean, std=std)


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]), dtype=points.dtype)
    first = int(rng.integers(n))
    centroids[0] = points[first]
    d2 = np.sum((points - centroids[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # all remaining points coincide with a chosen centroid
            idx = int(rng.integers(n))
        else:
            r = rng.random() * total
            idx = int(np.searchsorted(np.cumsum(d2), r, side="right"))
            idx = min(idx, n - 1)
        centroids[j] = points[idx]
        d2 = np.minimum(d2, np.sum((points - centroids[j]) ** 2, axis=1))
    return centroids


def _lloyd(points: np.ndarray, k: int, rng: np.random.Generator,
           max_iter: int, tol: float):
    n = points.shape[0]
    centroids = _kmeans_pp_init(points, k, rng)
    history: list[float] = []
    assign = np.zeros(n, dtype=np.int64)
    for _ in range(max_iter):
        d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        assign = np.argmin(d2, axis=1)
        objective = float(d2[np.arange(n), assign].sum())
        history.append(objective)
        new_centroids = centroids.copy()
        for j in range(k):
            members = points[assign == j]
            if len(members):
                new_centroids[j] = members.mean(axis=0)
            else:
                # re-seed an empty cluster on the point farthest from its centroid
                far = int(np.argmax(d2[np.arange(n), assign]))
                new_centroids[j] = points[far]
        if history[-1] == 0.0 or np.array_equal(new_centroids, centroids):
            centroids = new_centroids
            break
        if len(history) >= 2 and history[-2] > 0:
            if (history[-2] - history[-1]) <= tol * history[-2]:
                centroids = new_centroids
                break
        centroids = new_centroids
    d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    assign = np.argmin(d2, axis=1)
    history.append(float(d2[np.arange(n), assign].sum()))
    return assign, centroids, history


def kmeans(points: np.ndarray, k: int, seed: int = 0,
           max_iter: int = 300, tol: float = 1e-6, n_init: int = 10):
    """Lloyd's algorithm with k-means++ seeding and n_init restarts.

    Returns (assignments, centroids, objective_history) of the restart with
    the lowest final objective; the history is non-increasing within that
    run. Deterministic for a fixed seed.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        points = points.reshape(points.shape[0], -1)
    n = points.shape[0]
    if k < 1 or k > n:
        raise BadKError(f"k={k} outside [1, {n}]")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, n_init)):
        assign, centroids, history = _lloyd(points, k, rng, max_iter, tol)
        if best is None or history[-1] < best[2][-1]:
            best = (assign, centroids, history)
        if best[2][-1] == 0.0:
            break
    return best


def learn_filters(patch_sets: PatchSets, filters_per_class, seed: int = 0) -> FilterBank:
    """Cluster standardized patches per class; centroids become unit filters.

    filters_per_class maps class label -> K_i (a dict, or a sequence aligned
    with the sorted class labels). Bank size is sum(K_i).
    """
    labels = sorted(patch_sets.by_class)
    if not labels:
        raise TooFewPatchesError("no patches")
    if isinstance(filters_per_class, dict):
        per_class = {int(l): int(filters_per_class[l]) for l in labels}
    else:
        counts = list(filters_per_class)
        if len(counts) != len(labels):
            raise BadKError(
                f"{len(counts)} filter counts for {len(labels)} classes")
        per_class = {l: int(c) for l, c in zip(labels, counts)}
    all_patches = np.stack([p.values for l in labels for p in patch_sets.by_class[l]])
    stats = compute_marker_stats(all_patches)
    k_side, _, m = stats.mean.shape
    master = np.random.default_rng(seed)
    filters: list[np.ndarray] = []
    filter_classes: list[int] = []
    for label in labels:
        k_i = per_class[label]
        group = patch_sets.stacked(label).astype(np.float64)
        if k_i < 1 or k_i > len(group):
            raise BadKError(f"class {label}: K={k_i} outside [1, {len(group)}]")
        standardized = stats.standardize(group).reshape(len(group), -1)
        sub_seed = int(master.integers(0, 2**63 - 1))
        _, centroids, _ = kmeans(standardized, k_i, seed=sub_seed)
        for centroid in centroids:
            norm = float(np.linalg.norm(centroid))
            if norm < 1e-12:
                log.warning("class %d produced a zero centroid; emitting canonical unit filter", label)
                unit = np.zeros_like(centroid)
                unit[0] = 1.0
            else:
                unit = centroid / norm
            filters.append(unit.reshape(k_side, k_side, m))
            filter_classes.append(label)
    bank = FilterBank(
        filters=np.stack(filters).astype(np.float32),
        classes=np.asarray(filter_classes, dtype=np.int32),
        stats=MarkerStats(mean=stats.mean.astype(np.float32),
                          std=stats.std.astype(np.float32)),
    )
    return bank


def split_filters_evenly(total: int, class_labels) -> dict[int, int]:
    """Split a total filter budget across classes, remainder to lower labels."""
    labels = sorted(class_labels)
    base, rem = divmod(total, len(labels))
    return {l: base + (1 if i < rem else 0) for i, l in enumerate(labels)}


# --- serialization: binary container plus a human-readable JSON twin ---

def save_filter_bank(bank: FilterBank, path: str) -> None:
    k, m, n = bank.patch_side, bank.bands, bank.num_filters
    with open(path, "wb") as fh:
        fh.write(FILTERBANK_MAGIC)
        fh.write(struct.pack("<4I", n, k, k, m))
        fh.write(bank.stats.mean.astype("<f4").tobytes())
        fh.write(bank.stats.std.astype("<f4").tobytes())
        fh.write(bank.filters.astype("<f4").tobytes())
        fh.write(bank.classes.astype("<u4").tobytes())


def load_filter_bank(path: str) -> FilterBank:
    with open(path, "rb") as fh:
        magic = fh.read(len(FILTERBANK_MAGIC))
        if magic != FILTERBANK_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        n, k, k2, m = struct.unpack("<4I", fh.read(16))
        if k != k2:
            raise ValueError(f"{path}: non-square patch dims {k}x{k2}")
        count = k * k * m
        mean = np.frombuffer(fh.read(4 * count), dtype="<f4").reshape(k, k, m)
        std = np.frombuffer(fh.read(4 * count), dtype="<f4").reshape(k, k, m)
        filters = np.frombuffer(fh.read(4 * n * count), dtype="<f4").reshape(n, k, k, m)
        classes = np.frombuffer(fh.read(4 * n), dtype="<u4").astype(np.int32)
    return FilterBank(filters=filters.copy(), classes=classes,
                      stats=MarkerStats(mean=mean.copy(), std=std.copy()))


def filter_bank_to_json(bank: FilterBank) -> dict:
    return {
        "v": 1,
        "magic": FILTERBANK_MAGIC.decode(),
        "K": bank.num_filters,
        "k": bank.patch_side,
        "m": bank.bands,
        "classes": bank.classes.tolist(),
        "stats": {
            "mean": bank.stats.mean.astype(float).round(7).tolist(),
            "std": bank.stats.std.astype(float).round(7).tolist(),
        },
        "filters": bank.filters.astype(float).round(7).tolist(),
    }


def save_filter_bank_json(bank: FilterBank, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(filter_bank_to_json(bank), fh, sort_keys=True)
        fh.write("\n")
