"""File-to-file pipeline stages shared by the CLI and the HTTP service.

Every stage is deterministic for fixed inputs and seed: splits come from a
seeded permutation, features are written as raw little-endian float32, and
all manifests use sorted-key JSON, so re-running a stage reproduces its
outputs byte for byte.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .classifiers import (LinearSvmModel, Metrics, MlpModel, TrainConfig,
                          evaluate, load_mlp, load_svm, save_mlp, save_svm,
                          train_mlp, train_svm)
from .errors import FlimError
from .image_io import DatasetIndex, Image, load_dataset, load_image
from .markers import MarkerSet, load_markers
from .network import (NetworkModel, NetworkSpec, extract_features,
                      learn_network, load_network, save_network)
from .projection import tsne


class ValidationError(FlimError):
    """Stage inputs violate a pipeline contract."""


def dump_json(doc, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def read_json(path: str):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# --- splits ---

def make_splits(index: DatasetIndex, n_train: int, n_val: int, seed: int,
                force_train=()) -> dict:
    """Seeded disjoint train/val/test id lists; forced ids go to train first."""
    ids = sorted(index.ids())
    force = sorted(set(force_train))
    unknown = [i for i in force if i not in set(ids)]
    if unknown:
        raise ValidationError(f"forced train ids not in dataset: {unknown}")
    if len(force) > n_train:
        raise ValidationError(f"{len(force)} forced ids exceed train size {n_train}")
    if n_train + n_val > len(ids):
        raise ValidationError(
            f"train {n_train} + val {n_val} exceeds dataset size {len(ids)}")
    rng = np.random.default_rng(seed)
    rest = [i for i in ids if i not in set(force)]
    perm = [rest[j] for j in rng.permutation(len(rest))]
    train = force + perm[:n_train - len(force)]
    val = perm[n_train - len(force):n_train - len(force) + n_val]
    test = perm[n_train - len(force) + n_val:]
    return {"v": 1, "seed": seed, "train": sorted(train), "val": sorted(val),
            "test": sorted(test)}


def load_splits(path: str) -> dict:
    doc = read_json(path)
    for key in ("train", "val", "test"):
        if key not in doc:
            raise ValidationError(f"{path}: missing split {key!r}")
    return doc


# --- images and markers ---

def load_split_images(index: DatasetIndex, ids) -> list[Image]:
    return [load_image(index.path_of(i), image_id=i) for i in ids]


def load_marker_dir(markers_dir: str) -> dict[str, MarkerSet]:
    """All <image-id>.txt marker files in a directory, keyed by image id."""
    if not os.path.isdir(markers_dir):
        raise ValidationError(f"{markers_dir}: not a directory")
    out: dict[str, MarkerSet] = {}
    for name in sorted(os.listdir(markers_dir)):
        if not name.endswith(".txt"):
            continue
        ms = load_markers(os.path.join(markers_dir, name))
        out[ms.image_id] = ms
    if not out:
        raise ValidationError(f"{markers_dir}: no marker files found")
    return out


def learn_from_markers(index: DatasetIndex, markers: dict[str, MarkerSet],
                       spec: NetworkSpec, seed: int,
                       train_ids=None, norm_ids=None) -> NetworkModel:
    """Learn a network from the marked images; norms fit on norm_ids."""
    dataset_ids = set(index.ids())
    for image_id in markers:
        if image_id not in dataset_ids:
            raise ValidationError(f"marker file references unknown image {image_id!r}")
        if train_ids is not None and image_id not in set(train_ids):
            raise ValidationError(
                f"marked image {image_id!r} is outside the training split")
    selected = []
    for image_id in sorted(markers):
        img = load_image(index.path_of(image_id), image_id=image_id)
        ms = markers[image_id]
        if (ms.width, ms.height) != (img.width, img.height):
            raise ValidationError(
                f"markers for {image_id!r} are {ms.width}x{ms.height}, "
                f"image is {img.width}x{img.height}")
        selected.append((img, ms))
    norm_images = None
    if norm_ids is not None:
        norm_images = load_split_images(index, sorted(norm_ids))
    return learn_network(selected, spec, seed=seed, norm_images=norm_images)


# --- features ---

def extract_split(model: NetworkModel, index: DatasetIndex, ids):
    """Feature matrix plus labels for the given ids (sorted for determinism)."""
    ids = sorted(ids)
    feats = []
    labels = []
    for image_id in ids:
        img = load_image(index.path_of(image_id), image_id=image_id)
        feats.append(extract_features(img, model))
        labels.append(index.label_of(image_id))
    return ids, np.stack(feats).astype(np.float32), np.asarray(labels, dtype=np.int64)


def save_features(out_dir: str, ids, features: np.ndarray, labels) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "features.f32"), "wb") as fh:
        fh.write(features.astype("<f4").tobytes())
    dump_json({"v": 1, "ids": list(ids), "labels": [int(l) for l in labels],
               "count": int(features.shape[0]), "dim": int(features.shape[1])},
              os.path.join(out_dir, "manifest.json"))


def load_features(feats_dir: str):
    manifest = read_json(os.path.join(feats_dir, "manifest.json"))
    data = np.fromfile(os.path.join(feats_dir, "features.f32"), dtype="<f4")
    X = data.reshape(manifest["count"], manifest["dim"])
    return manifest["ids"], X, np.asarray(manifest["labels"], dtype=np.int64)


# --- classifiers ---

def train_classifier(kind: str, X: np.ndarray, labels: np.ndarray,
                     positive_class: int, C: float = 0.01, seed: int = 0,
                     hidden_sizes=None, train_config: TrainConfig | None = None):
    """hidden_sizes=None keeps the MLP module default (two 4096-unit layers)."""
    if kind == "svm":
        y = np.where(labels == positive_class, 1, -1)
        return train_svm(X, y, C=C, seed=seed)
    if kind == "mlp":
        config = train_config or TrainConfig(seed=seed)
        if hidden_sizes is None:
            return train_mlp(X, labels, config=config)
        return train_mlp(X, labels, hidden_sizes=hidden_sizes, config=config)
    raise ValidationError(f"unknown classifier kind {kind!r}")


def save_classifier(model, kind: str, positive_class: int, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    if kind == "svm":
        save_svm(model, os.path.join(out_dir, "svm.bin"))
    else:
        save_mlp(model, os.path.join(out_dir, "mlp.bin"))
    dump_json({"v": 1, "kind": kind, "positive_class": positive_class},
              os.path.join(out_dir, "clf.json"))


def load_classifier(clf_dir: str):
    meta = read_json(os.path.join(clf_dir, "clf.json"))
    if meta["kind"] == "svm":
        model = load_svm(os.path.join(clf_dir, "svm.bin"))
    else:
        model = load_mlp(os.path.join(clf_dir, "mlp.bin"))
    return model, meta


def predict_labels(model, meta: dict, X: np.ndarray,
                   negative_class: int | None = None) -> np.ndarray:
    """Map raw model outputs to dataset class labels."""
    positive = meta["positive_class"]
    if isinstance(model, LinearSvmModel):
        raw = model.predict(X)
        if negative_class is None:
            negative_class = 2 if positive == 1 else 1
        return np.where(raw == 1, positive, negative_class)
    assert isinstance(model, MlpModel)
    return model.predict(X)


def evaluate_classifier(model, meta: dict, X: np.ndarray, labels: np.ndarray,
                        negative_class: int | None = None) -> Metrics:
    if negative_class is None:
        others = sorted(set(int(l) for l in labels) - {meta["positive_class"]})
        negative_class = others[0] if others else None
    pred = predict_labels(model, meta, X, negative_class=negative_class)
    return evaluate(pred, labels, meta["positive_class"])


# --- projection ---

def project_images(index: DatasetIndex, ids, perplexity: float = 30.0,
                   iterations: int = 1000, seed: int = 0):
    """t-SNE of the flattened normalized images; returns (embedding, labels)."""
    ids = sorted(ids)
    vectors = np.stack([
        load_image(index.path_of(i), image_id=i).data.ravel() for i in ids])
    emb = tsne(vectors, perplexity=min(perplexity, (len(ids) - 1) / 3.0),
               iterations=iterations, seed=seed, ids=ids)
    labels = {i: index.label_of(i) for i in ids}
    return emb, labels


# --- full pipeline ---

def run_all(dataset_root: str, config_path: str, markers_dir: str, out_dir: str,
            n_splits: int = 3, seed: int = 0, kind: str = "svm", C: float = 0.01,
            train_size: int | None = None, val_size: int | None = None,
            positive_class: int = 1, eval_split: str = "test",
            hidden_sizes=None) -> dict:
    """Repeat split -> learn -> extract -> train -> eval over seeded splits.

    Marked images are forced into every training split so the selected set
    stays inside it. Reports per-split metrics and their mean +- std.
    """
    index = load_dataset(dataset_root)
    spec = NetworkSpec.from_json(read_json(config_path))
    markers = load_marker_dir(markers_dir)
    n = len(index.ids())
    if train_size is None:
        train_size = max(len(markers), int(round(n * 0.3)))
    if val_size is None:
        val_size = int(round(n * 0.2))
    os.makedirs(out_dir, exist_ok=True)
    per_split = []
    for s in range(n_splits):
        split_seed = seed + s
        split_dir = os.path.join(out_dir, f"split{s}")
        os.makedirs(split_dir, exist_ok=True)
        splits = make_splits(index, train_size, val_size, split_seed,
                             force_train=sorted(markers))
        dump_json(splits, os.path.join(split_dir, "splits.json"))
        model = learn_from_markers(index, markers, spec, seed=split_seed,
                                   train_ids=splits["train"],
                                   norm_ids=splits["train"])
        save_network(model, os.path.join(split_dir, "model"))
        train_ids, X_train, y_train = extract_split(model, index, splits["train"])
        save_features(os.path.join(split_dir, "feats-train"), train_ids, X_train, y_train)
        clf = train_classifier(kind, X_train, y_train, positive_class, C=C,
                               seed=split_seed, hidden_sizes=hidden_sizes)
        save_classifier(clf, kind, positive_class, os.path.join(split_dir, "clf"))
        eval_ids, X_eval, y_eval = extract_split(model, index, splits[eval_split])
        save_features(os.path.join(split_dir, f"feats-{eval_split}"), eval_ids, X_eval, y_eval)
        meta = {"kind": kind, "positive_class": positive_class}
        metrics = evaluate_classifier(clf, meta, X_eval, y_eval)
        dump_json(metrics.to_json(), os.path.join(split_dir, "metrics.json"))
        per_split.append(metrics)
    summary = {
        "v": 1,
        "kind": kind,
        "positive_class": positive_class,
        "splits": n_splits,
        "seed": seed,
        "eval_split": eval_split,
        "per_split": [m.to_json() for m in per_split],
        "mean": {}, "std": {},
    }
    for field in ("precision", "recall", "f_score"):
        values = [getattr(m, field) for m in per_split]
        summary["mean"][field] = float(np.mean(values))
        summary["std"][field] = float(np.std(values))
    dump_json(summary, os.path.join(out_dir, "metrics.json"))
    return summary
