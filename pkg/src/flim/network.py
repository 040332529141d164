"""Layer configuration, forward pass, and layer-at-a-time network learning.

A layer runs: standardize patches with the bank's marker statistics, convolve
(inner product of the vectorized patch with each unit filter), ReLU, max-pool,
and optionally a trailing per-channel batch normalization fitted on training
features. Convolution zero-pads so the spatial output matches the input;
pooling is valid (unpadded) in strided mode, and stride-1 zero-padded in
dimension-preserving mode so marker coordinates stay valid while learning.
"""

from __future__ import annotations

import io
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (BadWindowError, DimMismatchError, EmptyInputError,
                     InsufficientMarkersError)
from .filters import (FILTERBANK_MAGIC, FilterBank, learn_filters,
                      load_filter_bank, save_filter_bank,
                      save_filter_bank_json, split_filters_evenly)
from .image_io import Image
from .markers import MarkerSet, PatchSets, extract_patches

NETWORK_MAGIC = b"FLIMNET1"

MODE_STRIDED = "strided"
MODE_PRESERVING = "dimension-preserving"

STD_FLOOR = 1e-4


@dataclass
class LayerSpec:
    patch_size: int
    total_filters: int | None = None
    filters_per_class: dict[int, int] | None = None
    pool_window: int = 3
    pool_stride: int = 4
    pool_mode: str = MODE_STRIDED
    batch_norm: bool = True

    def __post_init__(self):
        if self.patch_size % 2 == 0 or self.patch_size < 1:
            raise ValueError(f"patch_size must be odd, got {self.patch_size}")
        if self.pool_window < 1 or self.pool_stride < 1:
            raise ValueError("pool_window and pool_stride must be >= 1")
        if self.total_filters is None and self.filters_per_class is None:
            raise ValueError("need total_filters or filters_per_class")

    def resolve_filters(self, class_labels) -> dict[int, int]:
        if self.filters_per_class is not None:
            return {int(l): int(c) for l, c in self.filters_per_class.items()}
        return split_filters_evenly(self.total_filters, class_labels)


@dataclass
class OutputNorm:
    """Frozen per-channel statistics applied after pooling."""

    mean: np.ndarray  # (channels,)
    std: np.ndarray   # (channels,), floored at STD_FLOOR

    def apply(self, rep: np.ndarray) -> np.ndarray:
        return (rep - self.mean) / self.std


@dataclass
class LayerModel:
    spec: LayerSpec
    bank: FilterBank
    output_norm: OutputNorm | None = None


@dataclass
class NetworkSpec:
    layers: list[LayerSpec]
    input_bands: int = 3

    @staticmethod
    def from_json(doc: dict) -> "NetworkSpec":
        layers = []
        for entry in doc["layers"]:
            fpc = entry.get("filters_per_class")
            if fpc is not None:
                fpc = {int(k): int(v) for k, v in fpc.items()}
            layers.append(LayerSpec(
                patch_size=int(entry["patch_size"]),
                total_filters=entry.get("total_filters"),
                filters_per_class=fpc,
                pool_window=int(entry.get("pool_window", 3)),
                pool_stride=int(entry.get("pool_stride", 4)),
                pool_mode=entry.get("pool_mode", MODE_STRIDED),
                batch_norm=bool(entry.get("batch_norm", True)),
            ))
        return NetworkSpec(layers=layers, input_bands=int(doc.get("input_bands", 3)))

    def to_json(self) -> dict:
        return {
            "v": 1,
            "input_bands": self.input_bands,
            "layers": [
                {
                    "patch_size": l.patch_size,
                    "total_filters": l.total_filters,
                    "filters_per_class": l.filters_per_class,
                    "pool_window": l.pool_window,
                    "pool_stride": l.pool_stride,
                    "pool_mode": l.pool_mode,
                    "batch_norm": l.batch_norm,
                }
                for l in self.layers
            ],
        }


@dataclass
class NetworkModel:
    layers: list[LayerModel]
    input_bands: int


@dataclass
class FeatureMap:
    data: np.ndarray  # H x W x channels
    image_id: str = ""
    layer_index: int = -1


def _as_array(rep) -> np.ndarray:
    if isinstance(rep, Image):
        return rep.data
    if isinstance(rep, FeatureMap):
        return rep.data
    arr = np.asarray(rep)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


def conv_forward(rep, bank: FilterBank) -> np.ndarray:
    """output(p, j) = vec(standardize(P(p))) . vec(F_j), zero padded ("same").

    The bank's marker statistics standardize every patch before the inner
    product, fusing marker-based batch normalization with the convolution.
    Accumulation runs in float64; the result is float32.
    """
    data = _as_array(rep)
    h, w, m = data.shape
    if m != bank.bands:
        raise DimMismatchError(f"input has {m} bands, bank expects {bank.bands}")
    k = bank.patch_side
    half = (k - 1) // 2
    padded = np.zeros((h + 2 * half, w + 2 * half, m), dtype=np.float64)
    padded[half:half + h, half:half + w] = data
    # (h, w, m, k, k) -> (h, w, k, k, m) so vec order matches the filters
    windows = sliding_window_view(padded, (k, k), axis=(0, 1))
    cols = windows.transpose(0, 1, 3, 4, 2).reshape(h * w, k * k * m)
    mean = bank.stats.mean.astype(np.float64).reshape(-1)
    std = bank.stats.std.astype(np.float64).reshape(-1)
    cols = (cols - mean) / std
    filt = bank.filters.astype(np.float64).reshape(bank.num_filters, -1)
    out = cols @ filt.T
    return out.reshape(h, w, bank.num_filters).astype(np.float32)


def relu(rep) -> np.ndarray:
    return np.maximum(_as_array(rep), 0)


def max_pool(rep, window: int, stride: int = 1, mode: str = MODE_STRIDED) -> np.ndarray:
    """Sliding-window max.

    strided: valid pooling, output dims floor((H - window)/stride) + 1.
    dimension-preserving: stride 1 with zero padding, output dims = input dims.
    """
    data = _as_array(rep)
    h, w, _ = data.shape
    if window < 1:
        raise BadWindowError(f"window must be >= 1, got {window}")
    if mode == MODE_PRESERVING:
        before = (window - 1) // 2
        after = window // 2
        data = np.pad(data, ((before, after), (before, after), (0, 0)))
        stride = 1
    elif window > min(h, w):
        raise BadWindowError(f"window {window} exceeds {h}x{w} input")
    windows = sliding_window_view(data, (window, window), axis=(0, 1))
    return windows[::stride, ::stride].max(axis=(3, 4))


def pooled_shape(h: int, w: int, window: int, stride: int) -> tuple[int, int]:
    return (h - window) // stride + 1, (w - window) // stride + 1


def fit_output_norm(features: list[np.ndarray]) -> OutputNorm:
    """Per-channel mean/std over all pixels of all feature maps, then frozen."""
    if not features:
        raise EmptyInputError("no feature maps to fit on")
    flat = np.concatenate([_as_array(f).reshape(-1, _as_array(f).shape[2])
                           for f in features], axis=0).astype(np.float64)
    mean = flat.mean(axis=0)
    std = np.maximum(flat.std(axis=0), STD_FLOOR)
    return OutputNorm(mean=mean.astype(np.float32), std=std.astype(np.float32))


def _layer_forward(data: np.ndarray, layer: LayerModel, mode: str,
                   apply_norm: bool) -> np.ndarray:
    out = conv_forward(data, layer.bank)
    out = relu(out)
    out = max_pool(out, layer.spec.pool_window, layer.spec.pool_stride, mode)
    if apply_norm and layer.spec.batch_norm and layer.output_norm is not None:
        out = layer.output_norm.apply(out).astype(np.float32)
    return out


def forward(image, model: NetworkModel, mode: str = MODE_STRIDED,
            upto_layer: int | None = None, apply_norm: bool = True) -> np.ndarray:
    """Run layers 1..upto_layer (all by default); returns the final map."""
    data = _as_array(image)
    if data.shape[2] != model.input_bands:
        raise DimMismatchError(
            f"image has {data.shape[2]} bands, model expects {model.input_bands}")
    layers = model.layers if upto_layer is None else model.layers[:upto_layer]
    for layer in layers:
        data = _layer_forward(data, layer, mode, apply_norm)
    return data


def extract_features(image, model: NetworkModel) -> np.ndarray:
    """Strided forward through all layers, flattened row-major (y, x, channel)."""
    return forward(image, model, mode=MODE_STRIDED).ravel()


def learn_network(selected: list[tuple[Image, MarkerSet]], spec: NetworkSpec,
                  seed: int = 0, norm_images: list[Image] | None = None) -> NetworkModel:
    """Learn every layer's filter bank from markers, one layer at a time.

    The original marker coordinates index every layer's input because the
    learning pass keeps output dimensions (same-size convolution, stride-1
    padded pooling). After all banks exist, each layer's trailing batch norm
    is fitted on norm_images (the selected images when not given) under the
    configured strided pooling.
    """
    if not selected:
        raise EmptyInputError("no selected images")
    class_labels = sorted({label for _, ms in selected for label in ms.labels()})
    master = np.random.default_rng(seed)
    reps = [img.data.astype(np.float32) for img, _ in selected]
    layers: list[LayerModel] = []
    for layer_spec in spec.layers:
        per_class = layer_spec.resolve_filters(class_labels)
        sets = PatchSets()
        for rep, (_, ms) in zip(reps, selected):
            sets.merge(extract_patches(rep, ms, layer_spec.patch_size))
        counts = sets.counts()
        for label, k_i in per_class.items():
            if counts.get(label, 0) < k_i:
                raise InsufficientMarkersError(
                    f"class {label}: {counts.get(label, 0)} marker pixels < K={k_i}")
        layer_seed = int(master.integers(0, 2**63 - 1))
        bank = learn_filters(sets, per_class, seed=layer_seed)
        layer = LayerModel(spec=layer_spec, bank=bank)
        layers.append(layer)
        reps = [_layer_forward(rep, layer, MODE_PRESERVING, apply_norm=False)
                for rep in reps]
    model = NetworkModel(layers=layers, input_bands=spec.input_bands)
    fit_sources = norm_images if norm_images is not None else [img for img, _ in selected]
    fit_network_norms(model, fit_sources)
    return model


def fit_network_norms(model: NetworkModel, images: list[Image]) -> None:
    """Fit each layer's trailing norm sequentially on the given images."""
    reps = [_as_array(img).astype(np.float32) for img in images]
    for layer in model.layers:
        reps = [_layer_forward(rep, layer, MODE_STRIDED, apply_norm=False)
                for rep in reps]
        if layer.spec.batch_norm:
            layer.output_norm = fit_output_norm(reps)
            reps = [layer.output_norm.apply(rep).astype(np.float32) for rep in reps]


def feature_length(model: NetworkModel, height: int, width: int) -> int:
    h, w = height, width
    channels = model.input_bands
    for layer in model.layers:
        h, w = pooled_shape(h, w, layer.spec.pool_window, layer.spec.pool_stride)
        channels = layer.bank.num_filters
    return h * w * channels


# --- serialization ---

def save_network(model: NetworkModel, out_dir: str) -> None:
    """Write the binary container plus JSON twin and per-layer bank files."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "network.bin"), "wb") as fh:
        fh.write(NETWORK_MAGIC)
        fh.write(struct.pack("<2I", len(model.layers), model.input_bands))
        for layer in model.layers:
            s = layer.spec
            fh.write(struct.pack("<3I2B2x", s.patch_size, s.pool_window,
                                 s.pool_stride, int(s.batch_norm),
                                 int(s.pool_mode == MODE_PRESERVING)))
            class_list = layer.bank.classes.tolist()
            per_class = sorted((l, class_list.count(l)) for l in set(class_list))
            fh.write(struct.pack("<I", len(per_class)))
            for label, count in per_class:
                fh.write(struct.pack("<2I", label, count))
            buf = io.BytesIO()
            _write_bank(buf, layer.bank)
            blob = buf.getvalue()
            fh.write(struct.pack("<Q", len(blob)))
            fh.write(blob)
            if layer.output_norm is not None:
                fh.write(struct.pack("<BI", 1, len(layer.output_norm.mean)))
                fh.write(layer.output_norm.mean.astype("<f4").tobytes())
                fh.write(layer.output_norm.std.astype("<f4").tobytes())
            else:
                fh.write(struct.pack("<BI", 0, 0))
    doc = {
        "v": 1,
        "magic": NETWORK_MAGIC.decode(),
        "input_bands": model.input_bands,
        "layers": [
            {
                "patch_size": l.spec.patch_size,
                "pool_window": l.spec.pool_window,
                "pool_stride": l.spec.pool_stride,
                "pool_mode": l.spec.pool_mode,
                "batch_norm": l.spec.batch_norm,
                "num_filters": l.bank.num_filters,
                "filter_classes": l.bank.classes.tolist(),
                "bank_file": f"layer{i + 1}.fb",
                "output_norm": None if l.output_norm is None else {
                    "mean": l.output_norm.mean.astype(float).round(7).tolist(),
                    "std": l.output_norm.std.astype(float).round(7).tolist(),
                },
            }
            for i, l in enumerate(model.layers)
        ],
    }
    with open(os.path.join(out_dir, "network.json"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")
    for i, layer in enumerate(model.layers):
        save_filter_bank(layer.bank, os.path.join(out_dir, f"layer{i + 1}.fb"))
        save_filter_bank_json(layer.bank, os.path.join(out_dir, f"layer{i + 1}.fb.json"))


def _write_bank(fh, bank: FilterBank) -> None:
    k, m, n = bank.patch_side, bank.bands, bank.num_filters
    fh.write(FILTERBANK_MAGIC)
    fh.write(struct.pack("<4I", n, k, k, m))
    fh.write(bank.stats.mean.astype("<f4").tobytes())
    fh.write(bank.stats.std.astype("<f4").tobytes())
    fh.write(bank.filters.astype("<f4").tobytes())
    fh.write(bank.classes.astype("<u4").tobytes())


def load_network(model_dir: str) -> NetworkModel:
    path = os.path.join(model_dir, "network.bin")
    with open(path, "rb") as fh:
        magic = fh.read(len(NETWORK_MAGIC))
        if magic != NETWORK_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        n_layers, input_bands = struct.unpack("<2I", fh.read(8))
        layers = []
        for _ in range(n_layers):
            patch, window, stride, bn, preserving = struct.unpack("<3I2B2x", fh.read(16))
            (n_classes,) = struct.unpack("<I", fh.read(4))
            fpc = {}
            for _ in range(n_classes):
                label, count = struct.unpack("<2I", fh.read(8))
                fpc[label] = count
            (blob_len,) = struct.unpack("<Q", fh.read(8))
            blob = fh.read(blob_len)
            bank = _read_bank(io.BytesIO(blob), path)
            present, channels = struct.unpack("<BI", fh.read(5))
            norm = None
            if present:
                mean = np.frombuffer(fh.read(4 * channels), dtype="<f4").copy()
                std = np.frombuffer(fh.read(4 * channels), dtype="<f4").copy()
                norm = OutputNorm(mean=mean, std=std)
            spec = LayerSpec(patch_size=patch, filters_per_class=fpc,
                             pool_window=window, pool_stride=stride,
                             pool_mode=MODE_PRESERVING if preserving else MODE_STRIDED,
                             batch_norm=bool(bn))
            layers.append(LayerModel(spec=spec, bank=bank, output_norm=norm))
    return NetworkModel(layers=layers, input_bands=input_bands)


def _read_bank(fh, path: str) -> FilterBank:
    from .filters import MarkerStats
    magic = fh.read(len(FILTERBANK_MAGIC))
    if magic != FILTERBANK_MAGIC:
        raise ValueError(f"{path}: bad bank magic {magic!r}")
    n, k, k2, m = struct.unpack("<4I", fh.read(16))
    count = k * k * m
    mean = np.frombuffer(fh.read(4 * count), dtype="<f4").reshape(k, k, m).copy()
    std = np.frombuffer(fh.read(4 * count), dtype="<f4").reshape(k, k, m).copy()
    filt = np.frombuffer(fh.read(4 * n * count), dtype="<f4").reshape(n, k, k, m).copy()
    classes = np.frombuffer(fh.read(4 * n), dtype="<u4").astype(np.int32)
    return FilterBank(filters=filt, classes=classes,
                      stats=MarkerStats(mean=mean, std=std))
