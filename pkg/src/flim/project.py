"""On-disk project state driving the interactive service.

One project directory holds everything the select-mark-learn-inspect loop
touches: the dataset pointer, seeded splits, the selected image set, marker
files (canonical pixel lists plus the raw stroke payloads the UI round-trips),
the learned network, cached features, classifiers, and metrics history. Every
mutation persists immediately; reloading the directory reproduces the state.
"""

from __future__ import annotations

import json
import os
import threading

import numpy as np

from .classifiers import TrainConfig
from .errors import FlimError
from .image_io import DatasetIndex, load_dataset, load_image
from .markers import MarkerSet, load_markers, rasterize_strokes, save_markers
from .network import (MODE_PRESERVING, NetworkModel, NetworkSpec,
                      conv_forward, forward, load_network, max_pool, relu,
                      save_network)
from .pipeline import (ValidationError, dump_json, evaluate_classifier,
                       extract_split, learn_from_markers, load_classifier,
                       load_features, make_splits, predict_labels, read_json,
                       save_classifier, save_features, train_classifier)
from .projection import tsne


class Project:
    """A project directory plus its parsed state; thread-safe via one lock."""

    def __init__(self, root: str, dataset_root: str | None = None):
        self.root = root
        self.lock = threading.RLock()
        os.makedirs(root, exist_ok=True)
        self.path = os.path.join(root, "project.json")
        if os.path.exists(self.path):
            self.state = read_json(self.path)
            if dataset_root:
                self.state["dataset_root"] = dataset_root
        else:
            if not dataset_root:
                raise ValidationError("new project needs a dataset root")
            self.state = {
                "v": 1,
                "dataset_root": dataset_root,
                "splits": None,
                "selected": [],
                "network_config": None,
                "classifier": None,
                "metrics_history": [],
                "model_version": 0,
                "seed": 0,
            }
            self.save()
        self.index: DatasetIndex = load_dataset(self.state["dataset_root"])
        self._model: NetworkModel | None = None
        for sub in ("markers", "strokes", "thumbs", "embeddings", "feats"):
            os.makedirs(os.path.join(root, sub), exist_ok=True)

    # --- persistence ---

    def save(self) -> None:
        dump_json(self.state, self.path)

    # --- splits and selection ---

    def ensure_splits(self, train: int | None = None, val: int | None = None,
                      seed: int = 0) -> dict:
        with self.lock:
            if self.state["splits"] is None:
                n = len(self.index.ids())
                if train is None:
                    train = min(200, max(4, int(round(n * 0.4))))
                if val is None:
                    val = min(2000, max(0, int(round(n * 0.3))))
                self.state["splits"] = make_splits(self.index, train, val, seed)
                self.state["seed"] = seed
                self.save()
            return self.state["splits"]

    def split_ids(self, split: str) -> list[str]:
        if split == "all":
            return sorted(self.index.ids())
        splits = self.state["splits"] or {}
        if split not in ("train", "val", "test") or split not in splits:
            raise ValidationError(f"unknown split {split!r}")
        return splits[split]

    def set_selected(self, ids: list[str]) -> None:
        with self.lock:
            known = set(self.index.ids())
            unknown = [i for i in ids if i not in known]
            if unknown:
                raise ValidationError(f"unknown image ids: {unknown}")
            if self.state["splits"] is not None:
                train = set(self.state["splits"]["train"])
                outside = [i for i in ids if i not in train]
                if outside:
                    raise ValidationError(
                        f"selected images outside the training split: {outside}")
            self.state["selected"] = sorted(set(ids))
            self.save()

    # --- markers ---

    def put_markers(self, image_id: str, payload: bytes) -> MarkerSet:
        """Store the raw stroke payload verbatim and its rasterization."""
        if image_id not in set(self.index.ids()):
            raise KeyError(image_id)
        doc = json.loads(payload.decode("utf-8"))
        strokes = [
            (
                [(float(p[0]), float(p[1])) for p in s["points"]],
                float(s.get("radius", 0.0)),
                int(s["label"]),
                str(s.get("id", "")),
            )
            for s in doc["strokes"]
        ]
        img = self.load_image(image_id)
        ms = rasterize_strokes(strokes, img.width, img.height, image_id=image_id)
        with self.lock:
            with open(self._strokes_path(image_id), "wb") as fh:
                fh.write(payload)
            save_markers(ms, self._markers_path(image_id))
        return ms

    def get_stroke_payload(self, image_id: str) -> bytes:
        path = self._strokes_path(image_id)
        if not os.path.exists(path):
            raise KeyError(image_id)
        with open(path, "rb") as fh:
            return fh.read()

    def marker_ids(self) -> list[str]:
        out = []
        for name in sorted(os.listdir(os.path.join(self.root, "markers"))):
            if name.endswith(".txt"):
                out.append(name[:-4])
        return out

    def marker_sets(self) -> dict[str, MarkerSet]:
        return {i: load_markers(self._markers_path(i)) for i in self.marker_ids()}

    def _markers_path(self, image_id: str) -> str:
        return os.path.join(self.root, "markers", f"{image_id}.txt")

    def _strokes_path(self, image_id: str) -> str:
        return os.path.join(self.root, "strokes", f"{image_id}.json")

    # --- images ---

    def load_image(self, image_id: str):
        return load_image(self.index.path_of(image_id), image_id=image_id)

    def thumbnail_path(self, image_id: str, size: int = 128) -> str:
        from PIL import Image as PILImage
        path = os.path.join(self.root, "thumbs", f"{image_id}.png")
        if not os.path.exists(path):
            with PILImage.open(self.index.path_of(image_id)) as img:
                img.thumbnail((size, size))
                img.save(path)
        return path

    # --- learning ---

    def learn(self, config: dict | None = None, seed: int | None = None,
              progress=None) -> NetworkModel:
        with self.lock:
            if config is not None:
                self.state["network_config"] = config
            config = self.state["network_config"]
            if config is None:
                raise ValidationError("no network config set")
            if seed is None:
                seed = self.state["seed"]
        spec = NetworkSpec.from_json(config)
        splits = self.ensure_splits()
        markers = self.marker_sets()
        selected = self.state["selected"]
        if selected:
            markers = {i: ms for i, ms in markers.items() if i in set(selected)}
        if not markers:
            raise ValidationError("no marked images to learn from")
        if progress:
            progress(0.1, "learning filter banks")
        model = learn_from_markers(self.index, markers, spec, seed=seed,
                                   train_ids=splits["train"],
                                   norm_ids=splits["train"])
        if progress:
            progress(0.9, "saving model")
        with self.lock:
            save_network(model, os.path.join(self.root, "model"))
            self.state["model_version"] += 1
            self.save()
            self._model = model
        return model

    def model(self) -> NetworkModel:
        with self.lock:
            if self._model is None:
                model_dir = os.path.join(self.root, "model")
                if not os.path.exists(os.path.join(model_dir, "network.bin")):
                    raise ValidationError("no learned model yet")
                self._model = load_network(model_dir)
            return self._model

    # --- features ---

    def features(self, split: str):
        """Cached (ids, X, labels) for a split under the current model."""
        model = self.model()
        version = self.state["model_version"]
        feats_dir = os.path.join(self.root, "feats", split)
        meta_path = os.path.join(feats_dir, "version.json")
        if os.path.exists(meta_path) and read_json(meta_path)["model_version"] == version:
            return load_features(feats_dir)
        ids, X, labels = extract_split(model, self.index, self.split_ids(split))
        save_features(feats_dir, ids, X, labels)
        dump_json({"v": 1, "model_version": version}, meta_path)
        return ids, X, labels

    # --- classifier ---

    def train_classifier(self, kind: str, seed: int = 0, C: float = 0.01,
                         hidden_sizes=None, train_config: TrainConfig | None = None,
                         positive_class: int = 1, progress=None) -> dict:
        if progress:
            progress(0.1, "extracting training features")
        _, X_train, y_train = self.features("train")
        if progress:
            progress(0.5, f"training {kind}")
        clf = train_classifier(kind, X_train, y_train, positive_class, C=C,
                               seed=seed, hidden_sizes=hidden_sizes,
                               train_config=train_config)
        clf_dir = os.path.join(self.root, "clf")
        save_classifier(clf, kind, positive_class, clf_dir)
        eval_split = "val" if self.split_ids("val") else "train"
        if progress:
            progress(0.8, f"evaluating on {eval_split}")
        _, X_eval, y_eval = self.features(eval_split)
        meta = {"kind": kind, "positive_class": positive_class}
        metrics = evaluate_classifier(clf, meta, X_eval, y_eval)
        entry = dict(metrics.to_json(), kind=kind, split=eval_split,
                     model_version=self.state["model_version"])
        with self.lock:
            self.state["classifier"] = {"kind": kind, "positive_class": positive_class,
                                        "model_version": self.state["model_version"]}
            self.state["metrics_history"].append(entry)
            self.save()
            dump_json(entry, os.path.join(self.root, "metrics.json"))
        return entry

    def latest_metrics(self) -> dict:
        history = self.state["metrics_history"]
        if not history:
            raise ValidationError("no classifier trained yet")
        return history[-1]

    def misclassified(self, split: str = "val") -> list[dict]:
        if self.state["classifier"] is None:
            raise ValidationError("no classifier trained yet")
        clf, meta = load_classifier(os.path.join(self.root, "clf"))
        ids, X, labels = self.features(split)
        pred = predict_labels(clf, meta, X)
        return [
            {"id": i, "predicted": int(p), "truth": int(t)}
            for i, p, t in zip(ids, pred, labels) if int(p) != int(t)
        ]

    # --- projections ---

    def embedding_path(self, space: str, split: str) -> str:
        return os.path.join(self.root, "embeddings", f"{space}__{split}.json")

    def compute_embedding(self, space: str, split: str = "train", seed: int = 0,
                          iterations: int = 1000, perplexity: float = 30.0,
                          progress=None) -> list[dict]:
        ids = sorted(self.split_ids(split))
        if progress:
            progress(0.1, f"building {space} vectors")
        if space == "input":
            vectors = np.stack([self.load_image(i).data.ravel() for i in ids])
        elif space.startswith("layer"):
            n = int(space[len("layer"):])
            model = self.model()
            if not (1 <= n <= len(model.layers)):
                raise ValidationError(f"layer {n} out of range")
            vectors = np.stack([
                forward(self.load_image(i), model, upto_layer=n).ravel()
                for i in ids])
        elif space == "classifier":
            if self.state["classifier"] is None or self.state["classifier"]["kind"] != "mlp":
                raise ValidationError("classifier space needs a trained MLP")
            clf, _ = load_classifier(os.path.join(self.root, "clf"))
            feat_ids, X, _ = self.features(split)
            order = {fid: k for k, fid in enumerate(feat_ids)}
            vectors = clf.hidden_activations(X[[order[i] for i in ids]])
        else:
            raise ValidationError(f"unknown projection space {space!r}")
        if progress:
            progress(0.3, "running t-SNE")
        emb = tsne(vectors, perplexity=min(perplexity, (len(ids) - 1) / 3.0),
                   iterations=iterations, seed=seed, ids=ids)
        labels = {i: self.index.label_of(i) for i in ids}
        doc = {"v": 1, "space": space, "split": split,
               "points": emb.to_json(labels),
               "final_kl": emb.kl_history[-1] if emb.kl_history else None}
        with self.lock:
            dump_json(doc, self.embedding_path(space, split))
        return doc

    def get_embedding(self, space: str, split: str = "train") -> dict:
        path = self.embedding_path(space, split)
        if not os.path.exists(path):
            raise KeyError(f"{space}/{split}")
        return read_json(path)

    # --- activations ---

    def activation_map(self, image_id: str, layer: int, channel: int) -> np.ndarray:
        """Post-ReLU conv output of one channel at input resolution, in [0,1]."""
        model = self.model()
        if not (1 <= layer <= len(model.layers)):
            raise KeyError(f"layer {layer}")
        img = self.load_image(image_id)
        data = img.data
        for lm in model.layers[:layer - 1]:
            data = relu(conv_forward(data, lm.bank))
            data = max_pool(data, lm.spec.pool_window, 1, MODE_PRESERVING)
        lm = model.layers[layer - 1]
        if not (0 <= channel < lm.bank.num_filters):
            raise KeyError(f"channel {channel}")
        act = relu(conv_forward(data, lm.bank))[:, :, channel]
        lo, hi = float(act.min()), float(act.max())
        if hi - lo < 1e-12:
            return np.zeros_like(act)
        return (act - lo) / (hi - lo)
