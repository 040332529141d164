"""Exact O(N^2) t-SNE for image selection and layer-inspection views.

Per-point Gaussian bandwidths are found by binary search so every conditional
distribution hits the target perplexity; the joint P is symmetrized; the
embedding minimizes KL(P||Q) against a Student-t Q by gradient descent with
momentum and early exaggeration. Desk-scale datasets (a few hundred to a few
thousand points) never need an approximate variant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BadPerplexityError, TooFewPointsError

EARLY_EXAGGERATION = 12.0
EXAGGERATION_ITERS = 250
MOMENTUM_SWITCH_ITER = 250
MOMENTUM_EARLY = 0.5
MOMENTUM_LATE = 0.8
MIN_GAIN = 0.01
ENTROPY_TOL = 1e-5
MAX_BISECTIONS = 50
_EPS = 1e-12


@dataclass
class Embedding2D:
    points: np.ndarray  # N x 2
    ids: list[str]
    kl_history: list[float] = field(default_factory=list)

    def to_json(self, labels: dict[str, int] | None = None) -> list[dict]:
        out = []
        for (x, y), pid in zip(self.points, self.ids):
            entry = {"id": pid, "x": float(x), "y": float(y)}
            if labels is not None:
                entry["label"] = labels.get(pid)
            out.append(entry)
        return out


def _pairwise_sq_dists(X: np.ndarray) -> np.ndarray:
    s = np.sum(X * X, axis=1)
    d2 = s[:, None] - 2.0 * (X @ X.T) + s[None, :]
    np.fill_diagonal(d2, 0.0)
    return np.maximum(d2, 0.0)


def _entropy_and_prow(d_row: np.ndarray, beta: float):
    p = np.exp(-d_row * beta)
    total = p.sum()
    if total <= 0.0:
        return 0.0, np.zeros_like(p)
    h = np.log(total) + beta * float((d_row * p).sum()) / total
    return h, p / total


def conditional_probabilities(X: np.ndarray, perplexity: float) -> np.ndarray:
    """Row-stochastic conditional P with per-row bandwidths matched by bisection."""
    n = X.shape[0]
    d2 = _pairwise_sq_dists(X)
    target = np.log(perplexity)
    P = np.zeros((n, n))
    for i in range(n):
        others = np.concatenate([np.arange(i), np.arange(i + 1, n)])
        d_row = d2[i, others]
        beta, beta_min, beta_max = 1.0, -np.inf, np.inf
        h, p_row = _entropy_and_prow(d_row, beta)
        for _ in range(MAX_BISECTIONS):
            if abs(h - target) < ENTROPY_TOL:
                break
            if h > target:
                beta_min = beta
                beta = beta * 2.0 if beta_max == np.inf else (beta + beta_max) / 2.0
            else:
                beta_max = beta
                beta = beta / 2.0 if beta_min == -np.inf else (beta + beta_min) / 2.0
            h, p_row = _entropy_and_prow(d_row, beta)
        P[i, others] = p_row
    return P


def joint_probabilities(X: np.ndarray, perplexity: float) -> np.ndarray:
    cond = conditional_probabilities(X, perplexity)
    P = (cond + cond.T) / (2.0 * X.shape[0])
    return np.maximum(P, _EPS)


def _student_t_q(Y: np.ndarray):
    num = 1.0 / (1.0 + _pairwise_sq_dists(Y))
    np.fill_diagonal(num, 0.0)
    Q = num / num.sum()
    return np.maximum(Q, _EPS), num


def kl_divergence(P: np.ndarray, Y: np.ndarray) -> float:
    Q, _ = _student_t_q(Y)
    mask = ~np.eye(P.shape[0], dtype=bool)
    return float(np.sum(P[mask] * np.log(P[mask] / Q[mask])))


def kl_divergence_and_grad(P: np.ndarray, Y: np.ndarray):
    """KL(P||Q) and its gradient w.r.t. the embedding coordinates."""
    Q, num = _student_t_q(Y)
    mask = ~np.eye(P.shape[0], dtype=bool)
    kl = float(np.sum(P[mask] * np.log(P[mask] / Q[mask])))
    PQd = (P - Q) * num
    grad = 4.0 * ((np.diag(PQd.sum(axis=1)) - PQd) @ Y)
    return kl, grad


def tsne(vectors: np.ndarray, perplexity: float = 30.0, iterations: int = 1000,
         seed: int = 0, learning_rate: float | None = None,
         ids: list[str] | None = None) -> Embedding2D:
    """Embed N x d vectors into 2-D; deterministic for a fixed seed.

    learning_rate defaults to the standard size-scaled rule
    max(N / exaggeration, 50); a fixed rate like 200 inflates small
    embeddings past their structure scale.

    kl_history records KL(P||Q) against the true (unexaggerated) P at every
    iteration, so optimization progress is comparable across the exaggeration
    boundary.
    """
    X = np.asarray(vectors, dtype=np.float64)
    if X.ndim != 2:
        X = X.reshape(X.shape[0], -1)
    n = X.shape[0]
    if n < 4:
        raise TooFewPointsError(f"need >= 4 points, got {n}")
    if not (0.0 < perplexity < n / 3.0):
        raise BadPerplexityError(f"perplexity {perplexity} not in (0, {n / 3.0})")
    if ids is None:
        ids = [str(i) for i in range(n)]
    if learning_rate is None:
        learning_rate = max(n / EARLY_EXAGGERATION, 50.0)
    P = joint_probabilities(X, perplexity)
    rng = np.random.default_rng(seed)
    Y = rng.standard_normal((n, 2)) * 1e-4
    velocity = np.zeros_like(Y)
    # per-coordinate adaptive gains; lr 200 assumes this standard scheme
    gains = np.ones_like(Y)
    kl_history: list[float] = []
    for it in range(iterations):
        P_opt = P * EARLY_EXAGGERATION if it < EXAGGERATION_ITERS else P
        _, grad = kl_divergence_and_grad(P_opt, Y)
        momentum = MOMENTUM_EARLY if it < MOMENTUM_SWITCH_ITER else MOMENTUM_LATE
        same_sign = (grad > 0.0) == (velocity > 0.0)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        gains = np.maximum(gains, MIN_GAIN)
        velocity = momentum * velocity - learning_rate * (gains * grad)
        Y = Y + velocity
        Y = Y - Y.mean(axis=0)
        kl_history.append(kl_divergence(P, Y))
    return Embedding2D(points=Y, ids=list(ids), kl_history=kl_history)
