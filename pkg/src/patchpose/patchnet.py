"""Per-point patch classifier: two shared point-wise layers with a
global-mean context feature, trained by full-batch gradient descent with
exact analytic gradients.

Per-point input is (x, y, z, gx, gy, gz) where g is the cloud's mean
coordinate, so the two layers see both the point and the global scale.
Architecture: linear(6 -> H) -> ReLU -> linear(H -> 2) -> softmax; the
patch probability is the class-1 softmax output.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import LengthMismatch, SchemaError
from .geometry import as_cloud

PROB_CLAMP = 1e-12


@dataclass
class MlpParams:
    w1: np.ndarray  # (H, 6)
    b1: np.ndarray  # (H,)
    w2: np.ndarray  # (2, H)
    b2: np.ndarray  # (2,)

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[0]

    def copy(self) -> "MlpParams":
        return MlpParams(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1, self.w2.ravel(), self.b2])

    @classmethod
    def from_vector(cls, vec: np.ndarray, hidden_dim: int) -> "MlpParams":
        h = hidden_dim
        n1 = h * 6
        w1 = vec[:n1].reshape(h, 6)
        b1 = vec[n1 : n1 + h]
        w2 = vec[n1 + h : n1 + h + 2 * h].reshape(2, h)
        b2 = vec[n1 + 3 * h : n1 + 3 * h + 2]
        return cls(w1.copy(), b1.copy(), w2.copy(), b2.copy())


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    learning_rate: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


def _glorot(rng, fan_out, fan_in):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def init_params(hidden_dim: int, seed) -> MlpParams:
    """Glorot-uniform weights, zero biases; deterministic by seed."""
    if hidden_dim < 1:
        raise ValueError("hidden_dim must be >= 1")
    rng = np.random.default_rng(seed)
    return MlpParams(
        w1=_glorot(rng, hidden_dim, 6),
        b1=np.zeros(hidden_dim),
        w2=_glorot(rng, 2, hidden_dim),
        b2=np.zeros(2),
    )


def point_features(cloud) -> np.ndarray:
    """(N, 6) per-point features: coordinates plus the global mean."""
    pts = as_cloud(cloud)
    g = pts.mean(axis=0)
    return np.hstack([pts, np.broadcast_to(g, pts.shape)])


def _forward_full(params: MlpParams, feats: np.ndarray):
    pre = feats @ params.w1.T + params.b1
    hid = np.maximum(pre, 0.0)
    logits = hid @ params.w2.T + params.b2
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    soft = exp / exp.sum(axis=1, keepdims=True)
    return pre, hid, soft


def forward(params: MlpParams, cloud) -> np.ndarray:
    """Per-point patch probability (class-1 softmax outputs)."""
    feats = point_features(cloud)
    return _forward_full(params, feats)[2][:, 1]


def cross_entropy_loss(probs, labels) -> float:
    """Mean binary cross entropy; probabilities clamped to [1e-12, 1-1e-12]."""
    p = np.asarray(probs, dtype=float)
    y = np.asarray(labels, dtype=float)
    if p.shape != y.shape:
        raise LengthMismatch(f"probs {p.shape} vs labels {y.shape}")
    p = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def loss(params: MlpParams, cloud, labels) -> float:
    return cross_entropy_loss(forward(params, cloud), labels)


def gradient(params: MlpParams, cloud, labels) -> MlpParams:
    """Exact gradient of the mean cross entropy w.r.t. every parameter."""
    feats = point_features(cloud)
    y = np.asarray(labels, dtype=float)
    if len(y) != len(feats):
        raise LengthMismatch(f"{len(feats)} points vs {len(y)} labels")
    pre, hid, soft = _forward_full(params, feats)
    n = len(feats)
    dlogits = soft.copy()
    dlogits[:, 1] -= y
    dlogits[:, 0] -= 1.0 - y
    dlogits /= n
    dw2 = dlogits.T @ hid
    db2 = dlogits.sum(axis=0)
    dhid = dlogits @ params.w2
    dhid[pre <= 0.0] = 0.0
    dw1 = dhid.T @ feats
    db1 = dhid.sum(axis=0)
    return MlpParams(w1=dw1, b1=db1, w2=dw2, b2=db2)


def train(params: MlpParams, dataset, cfg: TrainConfig):
    """Full-batch gradient descent over a list of (cloud, labels) pairs.

    Returns (final params, per-epoch mean loss trace). The input params are
    not mutated.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    cur = params.copy()
    trace = []
    for _ in range(cfg.epochs):
        total = 0.0
        acc = MlpParams(
            np.zeros_like(cur.w1), np.zeros_like(cur.b1),
            np.zeros_like(cur.w2), np.zeros_like(cur.b2),
        )
        for cloud, labels in dataset:
            total += loss(cur, cloud, labels)
            g = gradient(cur, cloud, labels)
            acc.w1 += g.w1
            acc.b1 += g.b1
            acc.w2 += g.w2
            acc.b2 += g.b2
        k = cfg.learning_rate / len(dataset)
        cur.w1 -= k * acc.w1
        cur.b1 -= k * acc.b1
        cur.w2 -= k * acc.w2
        cur.b2 -= k * acc.b2
        trace.append(total / len(dataset))
    return cur, trace


def predict_patch(params: MlpParams, cloud, count: int) -> np.ndarray:
    """Indices of the `count` most patch-like points (ties to lowest index)."""
    probs = forward(params, cloud)
    if not 1 <= count <= len(probs):
        raise ValueError(f"count {count} outside [1, {len(probs)}]")
    order = np.lexsort((np.arange(len(probs)), -probs))
    return np.array(sorted(order[:count]), dtype=int)


def save_params(path, params: MlpParams) -> None:
    doc = {
        "version": 1,
        "hidden_dim": params.hidden_dim,
        "w1": params.w1.tolist(),
        "b1": params.b1.tolist(),
        "w2": params.w2.tolist(),
        "b2": params.b2.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))


def load_params(path) -> MlpParams:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    for key in ("version", "hidden_dim", "w1", "b1", "w2", "b2"):
        if key not in doc:
            raise SchemaError(key, "missing")
    if doc["version"] != 1:
        raise SchemaError("version", f"unsupported version {doc['version']}")
    params = MlpParams(
        w1=np.asarray(doc["w1"], dtype=float),
        b1=np.asarray(doc["b1"], dtype=float),
        w2=np.asarray(doc["w2"], dtype=float),
        b2=np.asarray(doc["b2"], dtype=float),
    )
    if params.w1.shape != (doc["hidden_dim"], 6) or params.w2.shape != (2, doc["hidden_dim"]):
        raise SchemaError("w1", "dimension mismatch")
    return params
