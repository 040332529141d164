"""Classifiers consuming extracted features: linear SVM, small MLP, metrics.

The SVM minimizes the L2-regularized hinge loss
    0.5 * ||w||^2 + C * sum_i max(0, 1 - y_i (w . x_i + b))
by dual coordinate descent with the bias folded in as an extra constant
feature (liblinear convention). The MLP is ReLU hidden layers + softmax
cross-entropy trained by seeded mini-batch SGD with L2 weight decay and a
step learning-rate schedule.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (DimMismatchError, DivergenceError, LengthMismatchError,
                     SingleClassError)

SVM_MAGIC = b"FLIMSVM1"
MLP_MAGIC = b"FLIMMLP1"

BIAS_FEATURE = 1.0  # constant appended to every sample for the SVM bias


# --- linear SVM ---

@dataclass
class LinearSvmModel:
    w: np.ndarray
    b: float
    C: float
    objective_history: list[float] = field(default_factory=list)
    dual_history: list[float] = field(default_factory=list)

    def decision(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[1] != self.w.shape[0]:
            raise DimMismatchError(f"features have dim {X.shape[1]}, model {self.w.shape[0]}")
        return X @ self.w + self.b

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.where(self.decision(X) >= 0.0, 1, -1)


def svm_objective(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, C: float) -> float:
    margins = 1.0 - y * (X @ w + b)
    return 0.5 * float(w @ w) + C * float(np.maximum(margins, 0.0).sum())


def train_svm(features: np.ndarray, labels: np.ndarray, C: float = 0.01,
              seed: int = 0, tol: float = 1e-4, max_epochs: int = 1000) -> LinearSvmModel:
    """Dual coordinate descent on the hinge-loss primal; labels in {-1,+1}.

    Stops when the relative change of the optimized objective between epochs
    falls below tol. Deterministic for a fixed seed (seeded epoch permutations).
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise DimMismatchError(f"features {X.shape} vs labels {y.shape}")
    if not (np.any(y == 1) and np.any(y == -1)):
        raise SingleClassError("need at least one example of each label in {-1,+1}")
    n, d = X.shape
    Xa = np.concatenate([X, np.full((n, 1), BIAS_FEATURE)], axis=1)
    qii = np.einsum("ij,ij->i", Xa, Xa)
    alpha = np.zeros(n)
    w = np.zeros(d + 1)
    rng = np.random.default_rng(seed)
    primal_history = []
    dual_history = []  # the coordinate-descent objective; non-increasing
    for _ in range(max_epochs):
        order = rng.permutation(n)
        for i in order:
            if qii[i] <= 0.0:
                continue
            g = y[i] * (Xa[i] @ w) - 1.0
            new_alpha = min(max(alpha[i] - g / qii[i], 0.0), C)
            delta = new_alpha - alpha[i]
            if delta != 0.0:
                w += delta * y[i] * Xa[i]
                alpha[i] = new_alpha
        primal_history.append(
            0.5 * float(w @ w)
            + C * float(np.maximum(1.0 - y * (Xa @ w), 0.0).sum()))
        dual_history.append(0.5 * float(w @ w) - float(alpha.sum()))
        if len(dual_history) > 1:
            prev, cur = dual_history[-2], dual_history[-1]
            if abs(prev - cur) <= tol * max(abs(prev), 1e-12):
                break
    return LinearSvmModel(w=w[:d].copy(), b=float(w[d] * BIAS_FEATURE), C=C,
                          objective_history=primal_history,
                          dual_history=dual_history)


# --- MLP ---

@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 64
    learning_rate: float = 1e-4
    weight_decay: float = 1e-3
    lr_decay_factor: float = 0.1
    lr_decay_start: int = 30   # decay kicks in after this epoch ...
    lr_decay_period: int = 5   # ... every this many epochs
    seed: int = 0

    def __post_init__(self):
        if min(self.epochs, self.batch_size, self.lr_decay_period) < 1:
            raise ValueError("epochs, batch_size, lr_decay_period must be positive")
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ValueError("learning_rate must be positive, weight_decay >= 0")
        if not (0.0 < self.lr_decay_factor <= 1.0):
            raise ValueError("lr_decay_factor must be in (0, 1]")


@dataclass
class MlpModel:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    classes: np.ndarray  # label values, index = output unit

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def forward(self, X: np.ndarray) -> list[np.ndarray]:
        """Returns the list of layer activations, logits last."""
        acts = [np.asarray(X, dtype=np.float64)]
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = acts[-1] @ W + b
            acts.append(z if i == len(self.weights) - 1 else np.maximum(z, 0.0))
        return acts

    def predict(self, X: np.ndarray) -> np.ndarray:
        logits = self.forward(X)[-1]
        return self.classes[np.argmax(logits, axis=1)]

    def hidden_activations(self, X: np.ndarray) -> np.ndarray:
        """Output of the last hidden layer (feeds the projection view)."""
        return self.forward(X)[-2]


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def mlp_loss_and_grads(model: MlpModel, X: np.ndarray, y_idx: np.ndarray,
                       weight_decay: float = 0.0):
    """Mean softmax cross-entropy plus L2 decay; analytic backprop gradients."""
    n = X.shape[0]
    acts = model.forward(X)
    probs = _softmax(acts[-1])
    eps = 1e-12
    loss = -float(np.log(probs[np.arange(n), y_idx] + eps).mean())
    if weight_decay:
        loss += 0.5 * weight_decay * (
            sum(float((W * W).sum()) for W in model.weights)
            + sum(float((b * b).sum()) for b in model.biases))
    delta = probs
    delta[np.arange(n), y_idx] -= 1.0
    delta /= n
    grads_w, grads_b = [], []
    for i in range(len(model.weights) - 1, -1, -1):
        gw = acts[i].T @ delta + weight_decay * model.weights[i]
        gb = delta.sum(axis=0) + weight_decay * model.biases[i]
        grads_w.append(gw)
        grads_b.append(gb)
        if i > 0:
            delta = delta @ model.weights[i].T
            delta[acts[i] <= 0.0] = 0.0
    grads_w.reverse()
    grads_b.reverse()
    return loss, grads_w, grads_b


def init_mlp(input_dim: int, hidden_sizes, n_outputs: int, seed: int = 0,
             classes=None) -> MlpModel:
    """He-style uniform init, scale sqrt(6/fan_in), seeded."""
    rng = np.random.default_rng(seed)
    sizes = [input_dim] + list(hidden_sizes) + [n_outputs]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    if classes is None:
        classes = np.arange(1, n_outputs + 1)
    return MlpModel(weights=weights, biases=biases, classes=np.asarray(classes))


def train_mlp(features: np.ndarray, labels: np.ndarray, hidden_sizes=(4096, 4096),
              config: TrainConfig | None = None) -> MlpModel:
    """Mini-batch SGD on softmax cross-entropy with L2 weight decay.

    The learning rate is multiplied by lr_decay_factor every lr_decay_period
    epochs once past lr_decay_start. Deterministic given config.seed.
    """
    if config is None:
        config = TrainConfig()
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    classes = np.unique(y)
    if len(classes) < 2:
        raise SingleClassError(f"need >= 2 classes, got {classes.tolist()}")
    class_index = {c: i for i, c in enumerate(classes.tolist())}
    y_idx = np.array([class_index[v] for v in y.tolist()])
    model = init_mlp(X.shape[1], hidden_sizes, len(classes), seed=config.seed,
                     classes=classes)
    rng = np.random.default_rng(config.seed + 1)
    lr = config.learning_rate
    n = X.shape[0]
    for epoch in range(1, config.epochs + 1):
        if (epoch > config.lr_decay_start
                and (epoch - config.lr_decay_start) % config.lr_decay_period == 0):
            lr *= config.lr_decay_factor
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            loss, gw, gb = mlp_loss_and_grads(model, X[batch], y_idx[batch],
                                              config.weight_decay)
            if not np.isfinite(loss):
                raise DivergenceError(f"loss became {loss} at epoch {epoch}")
            for W, g in zip(model.weights, gw):
                W -= lr * g
            for b, g in zip(model.biases, gb):
                b -= lr * g
    return model


# --- metrics ---

@dataclass
class Metrics:
    precision: float
    recall: float
    f_score: float
    tp: int
    fp: int
    fn: int
    tn: int
    degenerate: bool = False  # true when a zero denominator forced a 0
    macro_precision: float = 0.0
    macro_recall: float = 0.0
    macro_f_score: float = 0.0

    def to_json(self) -> dict:
        return {
            "v": 1,
            "precision": self.precision,
            "recall": self.recall,
            "f_score": self.f_score,
            "tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn,
            "degenerate": self.degenerate,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f_score": self.macro_f_score,
        }


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float, bool]:
    degenerate = False
    if tp + fp == 0:
        precision, degenerate = 0.0, True
    else:
        precision = tp / (tp + fp)
    if tp + fn == 0:
        recall, degenerate = 0.0, True
    else:
        recall = tp / (tp + fn)
    if precision + recall == 0.0:
        f_score, degenerate = 0.0, True
    else:
        f_score = 2.0 * precision * recall / (precision + recall)
    return precision, recall, f_score, degenerate


def evaluate(predicted, truth, positive_class) -> Metrics:
    """Confusion counts and precision/recall/f-score for the positive class.

    Zero denominators yield 0 and set the degenerate flag. Macro-averaged
    metrics over all classes present in the truth are reported alongside.
    """
    pred = np.asarray(predicted)
    true = np.asarray(truth)
    if pred.shape != true.shape:
        raise LengthMismatchError(f"{pred.shape} vs {true.shape}")
    tp = int(np.sum((pred == positive_class) & (true == positive_class)))
    fp = int(np.sum((pred == positive_class) & (true != positive_class)))
    fn = int(np.sum((pred != positive_class) & (true == positive_class)))
    tn = int(np.sum((pred != positive_class) & (true != positive_class)))
    precision, recall, f_score, degenerate = _prf(tp, fp, fn)
    macro_p, macro_r, macro_f = [], [], []
    for cls in np.unique(true):
        ctp = int(np.sum((pred == cls) & (true == cls)))
        cfp = int(np.sum((pred == cls) & (true != cls)))
        cfn = int(np.sum((pred != cls) & (true == cls)))
        p, r, f, _ = _prf(ctp, cfp, cfn)
        macro_p.append(p)
        macro_r.append(r)
        macro_f.append(f)
    return Metrics(
        precision=precision, recall=recall, f_score=f_score,
        tp=tp, fp=fp, fn=fn, tn=tn, degenerate=degenerate,
        macro_precision=float(np.mean(macro_p)),
        macro_recall=float(np.mean(macro_r)),
        macro_f_score=float(np.mean(macro_f)),
    )


def format_metrics_table(rows: list[tuple[str, tuple[float, float], tuple[float, float], tuple[float, float]]]) -> str:
    """Aligned text table: Method | Precision | Recall | F-score, mean +- std."""
    header = f"{'Method':<16} {'Precision':>16} {'Recall':>16} {'F-score':>16}"
    lines = [header, "-" * len(header)]
    for name, p, r, f in rows:
        cells = [f"{m:.3f} +- {s:.3f}" for m, s in (p, r, f)]
        lines.append(f"{name:<16} {cells[0]:>16} {cells[1]:>16} {cells[2]:>16}")
    return "\n".join(lines)


# --- serialization ---

def save_svm(model: LinearSvmModel, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(SVM_MAGIC)
        fh.write(struct.pack("<I", model.w.shape[0]))
        fh.write(struct.pack("<2d", model.b, model.C))
        fh.write(model.w.astype("<f8").tobytes())


def load_svm(path: str) -> LinearSvmModel:
    with open(path, "rb") as fh:
        magic = fh.read(len(SVM_MAGIC))
        if magic != SVM_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        (dim,) = struct.unpack("<I", fh.read(4))
        b, C = struct.unpack("<2d", fh.read(16))
        w = np.frombuffer(fh.read(8 * dim), dtype="<f8").copy()
    return LinearSvmModel(w=w, b=b, C=C)


def save_mlp(model: MlpModel, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(MLP_MAGIC)
        fh.write(struct.pack("<2I", len(model.weights), len(model.classes)))
        fh.write(np.asarray(model.classes, dtype="<i4").tobytes())
        for W, b in zip(model.weights, model.biases):
            fh.write(struct.pack("<2I", W.shape[0], W.shape[1]))
            fh.write(W.astype("<f8").tobytes())
            fh.write(b.astype("<f8").tobytes())


def load_mlp(path: str) -> MlpModel:
    with open(path, "rb") as fh:
        magic = fh.read(len(MLP_MAGIC))
        if magic != MLP_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        n_layers, n_classes = struct.unpack("<2I", fh.read(8))
        classes = np.frombuffer(fh.read(4 * n_classes), dtype="<i4").copy()
        weights, biases = [], []
        for _ in range(n_layers):
            rows, cols = struct.unpack("<2I", fh.read(8))
            weights.append(np.frombuffer(fh.read(8 * rows * cols), dtype="<f8")
                           .reshape(rows, cols).copy())
            biases.append(np.frombuffer(fh.read(8 * cols), dtype="<f8").copy())
    return MlpModel(weights=weights, biases=biases, classes=classes)
