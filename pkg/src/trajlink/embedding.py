"""Trainable embedding over Fisher-Vector features with triplet metric learning.

A small fully-connected rectifier network maps the flattened 20x54 signature
to a unit vector; cosine similarity between embeddings, rescaled to [0, 1],
scores whether two human segments belong to the same person. A height-based
similarity is provided as a fallback for sparse point clouds.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .features import GmmGrid, fisher_vector
from .geometry import HumanSegment

DEFAULT_LAYER_SIZES = (1080, 256, 128, 64)
DEFAULT_MARGIN = 0.2
DEFAULT_SIGMA_H = 0.05

MODEL_MAGIC = b"TLNKMDL1"
MODEL_VERSION = 1


@dataclass
class EmbeddingNet:
    """Rectifier MLP with an L2-normalized output embedding."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    @property
    def n_parameters(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    @classmethod
    def initialize(cls, sizes: tuple[int, ...] = DEFAULT_LAYER_SIZES, seed: int = 0) -> "EmbeddingNet":
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            weights.append(rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_out, n_in)))
            biases.append(np.zeros(n_out))
        return cls(weights=weights, biases=biases)

    def copy(self) -> "EmbeddingNet":
        return EmbeddingNet(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )


def _as_feature_batch(f) -> np.ndarray:
    x = np.asarray(f, dtype=np.float64)
    if x.ndim == 2 and x.shape == (20, 54):
        x = x.reshape(1, -1)
    elif x.ndim == 1:
        x = x.reshape(1, -1)
    elif x.ndim == 3:
        x = x.reshape(x.shape[0], -1)
    return x


def _forward(net: EmbeddingNet, x: np.ndarray):
    """Forward pass keeping intermediate activations for backprop."""
    acts = [x]
    pre = []
    h = x
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w.T + b
        pre.append(z)
        h = z if i == last else np.maximum(z, 0.0)
        acts.append(h)
    y = acts[-1]
    norms = np.linalg.norm(y, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("degenerate norm: embedding collapsed to the zero vector")
    e = y / norms[:, None]
    return e, (acts, pre, norms)


def embed(f, net: EmbeddingNet) -> np.ndarray:
    """Map one feature matrix to its unit-norm embedding."""
    return _forward(net, _as_feature_batch(f))[0][0]


def embed_batch(features, net: EmbeddingNet) -> np.ndarray:
    return _forward(net, _as_feature_batch(features))[0]


def triplet_loss(a: np.ndarray, p: np.ndarray, n: np.ndarray, margin: float = DEFAULT_MARGIN) -> float:
    """Cosine-similarity triplet hinge: max(0, margin - cos(a,p) + cos(a,n))."""
    return float(max(0.0, margin - float(np.dot(a, p)) + float(np.dot(a, n))))


def _backward(net: EmbeddingNet, cache, grad_e: np.ndarray):
    """Gradients of a scalar loss w.r.t. all parameters, given dL/d(embedding)."""
    acts, pre, norms = cache
    y = acts[-1]
    e = y / norms[:, None]
    # through the L2 normalization
    dot = np.sum(grad_e * e, axis=1, keepdims=True)
    delta = (grad_e - dot * e) / norms[:, None]

    grads_w = [np.zeros_like(w) for w in net.weights]
    grads_b = [np.zeros_like(b) for b in net.biases]
    for i in range(len(net.weights) - 1, -1, -1):
        if i != len(net.weights) - 1:
            delta = delta * (pre[i] > 0.0)
        grads_w[i] = delta.T @ acts[i]
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ net.weights[i]
    return grads_w, grads_b


def triplet_forward_backward(
    net: EmbeddingNet,
    anchors: np.ndarray,
    positives: np.ndarray,
    negatives: np.ndarray,
    margin: float = DEFAULT_MARGIN,
):
    """Mean triplet loss over a batch and its analytic parameter gradients."""
    xa, xp, xn = (_as_feature_batch(v) for v in (anchors, positives, negatives))
    b = len(xa)
    x = np.concatenate([xa, xp, xn], axis=0)
    e, cache = _forward(net, x)
    ea, ep, en = e[:b], e[b : 2 * b], e[2 * b :]

    sim_ap = np.sum(ea * ep, axis=1)
    sim_an = np.sum(ea * en, axis=1)
    per_triplet = margin - sim_ap + sim_an
    active = per_triplet > 0.0
    loss = float(np.mean(np.maximum(per_triplet, 0.0)))

    grad_e = np.zeros_like(e)
    scale = active.astype(np.float64)[:, None] / b
    grad_e[:b] = (en - ep) * scale
    grad_e[b : 2 * b] = -ea * scale
    grad_e[2 * b :] = ea * scale
    grads_w, grads_b = _backward(net, cache, grad_e)
    return loss, grads_w, grads_b


@dataclass
class TrainConfig:
    margin: float = DEFAULT_MARGIN
    batch_size: int = 64
    epochs: int = 50
    learning_rate: float = 1e-3
    lr_decay: float = 0.5
    decay_every: int = 20
    layer_sizes: tuple[int, ...] = DEFAULT_LAYER_SIZES
    seed: int = 0
    # "random": uniform triplets. "semi-hard": per anchor, the hardest in-batch
    # negative that is still farther than the positive; guards against the
    # collapse mode where every embedding converges to one point and the loss
    # freezes at the margin.
    mining: str = "random"


@dataclass
class TrainResult:
    net: EmbeddingNet
    final_loss: float
    loss_history: list[float] = field(default_factory=list)


def train(features, labels, config: TrainConfig | None = None) -> TrainResult:
    """Fit the embedding by SGD on the triplet loss. Fully seeded: the same
    data and config reproduce the same weights bit for bit.

    Inputs are standardized per dimension over the training set (signature
    entries span several orders of magnitude, which otherwise stalls the first
    layer); the affine standardization is folded into the first layer before
    returning, so the net maps raw feature matrices directly. Triplets are
    sampled per ``config.mining``.
    """
    cfg = config or TrainConfig()
    x = _as_feature_batch(features)
    y = np.asarray(labels)
    if len(x) != len(y):
        raise ValueError("features and labels length mismatch")

    by_class: dict = {}
    for i, lab in enumerate(y.tolist()):
        by_class.setdefault(lab, []).append(i)
    anchor_classes = [c for c, idx in by_class.items() if len(idx) >= 2]
    if len(by_class) < 2 or not anchor_classes:
        raise ValueError("insufficient classes: need >= 2 persons with >= 2 segments each")
    if cfg.mining not in ("random", "semi-hard"):
        raise ValueError(f"unknown mining mode {cfg.mining!r}")

    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale = np.where(scale < 1e-8, 1.0, scale)
    xs = (x - mean) / scale

    rng = np.random.default_rng(cfg.seed)
    net = EmbeddingNet.initialize(cfg.layer_sizes, seed=cfg.seed)
    class_arrays = {c: np.asarray(idx) for c, idx in by_class.items()}

    if cfg.mining == "semi-hard":
        history = _train_semi_hard(net, xs, y, class_arrays, anchor_classes, cfg, rng)
    else:
        history = _train_random(net, xs, y, class_arrays, anchor_classes, cfg, rng)

    # fold the standardization into the first layer: the returned net embeds
    # raw feature matrices, and the model file format stays unchanged
    w0 = net.weights[0] / scale[None, :]
    net.biases[0] = net.biases[0] - w0 @ mean
    net.weights[0] = w0
    return TrainResult(net=net, final_loss=history[-1] if history else 0.0, loss_history=history)


def _train_random(net, x, y, class_arrays, anchor_classes, cfg: TrainConfig, rng) -> list[float]:
    """Uniform triplet sampling: random positive, random negative."""
    anchor_pool = np.asarray(sorted(i for c in anchor_classes for i in class_arrays[c].tolist()))
    all_idx = np.arange(len(y))
    lr = cfg.learning_rate
    history = []
    for epoch in range(cfg.epochs):
        if epoch > 0 and cfg.decay_every > 0 and epoch % cfg.decay_every == 0:
            lr *= cfg.lr_decay
        order = rng.permutation(anchor_pool)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            pos = np.empty(len(batch), dtype=np.int64)
            neg = np.empty(len(batch), dtype=np.int64)
            for k, i in enumerate(batch):
                same = class_arrays[y[i].item() if hasattr(y[i], "item") else y[i]]
                p = i
                while p == i:
                    p = same[rng.integers(len(same))]
                pos[k] = p
                nidx = all_idx[rng.integers(len(all_idx))]
                while y[nidx] == y[i]:
                    nidx = all_idx[rng.integers(len(all_idx))]
                neg[k] = nidx
            loss, gw, gb = triplet_forward_backward(net, x[batch], x[pos], x[neg], cfg.margin)
            for w, g in zip(net.weights, gw):
                w -= lr * g
            for b, g in zip(net.biases, gb):
                b -= lr * g
            epoch_loss += loss
            n_batches += 1
        history.append(epoch_loss / max(n_batches, 1))
    return history


def _train_semi_hard(net, x, y, class_arrays, anchor_classes, cfg: TrainConfig, rng) -> list[float]:
    """Class-balanced batches; random positive, semi-hard in-batch negative."""
    n_p = min(len(anchor_classes), max(2, cfg.batch_size // 8))
    n_k = max(2, cfg.batch_size // n_p)
    steps = max(1, len(y) // (n_p * n_k))
    lr = cfg.learning_rate
    history = []
    for epoch in range(cfg.epochs):
        if epoch > 0 and cfg.decay_every > 0 and epoch % cfg.decay_every == 0:
            lr *= cfg.lr_decay
        epoch_loss = 0.0
        for _ in range(steps):
            picked = rng.choice(len(anchor_classes), size=n_p, replace=False)
            batch = np.concatenate([
                rng.choice(
                    class_arrays[anchor_classes[c]],
                    size=n_k,
                    replace=len(class_arrays[anchor_classes[c]]) < n_k,
                )
                for c in picked
            ])
            e = embed_batch(x[batch], net)
            sims = e @ e.T
            yb = y[batch]
            same = yb[:, None] == yb[None, :]
            np.fill_diagonal(same, False)
            pos = np.empty(len(batch), dtype=np.int64)
            neg = np.empty(len(batch), dtype=np.int64)
            for i in range(len(batch)):
                cands = np.flatnonzero(same[i])
                pos[i] = cands[rng.integers(len(cands))]
                others = np.flatnonzero(~same[i])
                others = others[others != i]
                sn = sims[i, others]
                semi = others[sn < sims[i, pos[i]]]
                neg[i] = semi[np.argmax(sims[i, semi])] if len(semi) else others[np.argmin(sn)]
            loss, gw, gb = triplet_forward_backward(
                net, x[batch], x[batch[pos]], x[batch[neg]], cfg.margin
            )
            for w, g in zip(net.weights, gw):
                w -= lr * g
            for b, g in zip(net.biases, gb):
                b -= lr * g
            epoch_loss += loss
        history.append(epoch_loss / steps)
    return history


def cosine_to_unit_interval(cos: float) -> float:
    return (cos + 1.0) / 2.0


def p1_similarity(h_i: HumanSegment, h_j: HumanSegment, grid: GmmGrid, net: EmbeddingNet) -> float:
    """Point-cloud similarity of two human segments in [0, 1]."""
    ei = embed(fisher_vector(h_i, grid), net)
    ej = embed(fisher_vector(h_j, grid), net)
    return cosine_to_unit_interval(float(np.dot(ei, ej)))


def segment_height(segment: HumanSegment) -> float:
    """Robust person height from a segment: 95th-percentile z."""
    return float(np.percentile(segment.points[:, 2], 95.0))


def height_similarity(height_i: float, height_j: float, sigma_h: float = DEFAULT_SIGMA_H) -> float:
    d = height_i - height_j
    return float(np.exp(-(d * d) / (2.0 * sigma_h * sigma_h)))


def p1_height(h_i: HumanSegment, h_j: HumanSegment, sigma_h: float = DEFAULT_SIGMA_H) -> float:
    """Height-based similarity fallback for sparse point clouds, in [0, 1]."""
    return height_similarity(segment_height(h_i), segment_height(h_j), sigma_h)


def aggregate_embedding(
    segments: list[HumanSegment],
    grid: GmmGrid,
    net: EmbeddingNet,
    stride: int = 5,
) -> np.ndarray:
    """Mean embedding of every ``stride``-th segment, re-normalized to unit
    length. Permutation-invariant over the sampled set."""
    picked = segments[::stride] if segments else []
    if not picked:
        raise ValueError("no segments to embed")
    feats = np.stack([fisher_vector(s, grid).reshape(-1) for s in picked])
    e = embed_batch(feats, net)
    mean = e.mean(axis=0)
    norm = np.linalg.norm(mean)
    if norm == 0.0:
        raise ValueError("degenerate norm: aggregated embedding is zero")
    return mean / norm


def aggregate_height(segments: list[HumanSegment], stride: int = 5) -> float:
    picked = segments[::stride] if segments else []
    if not picked:
        raise ValueError("no segments to measure")
    return float(np.median([segment_height(s) for s in picked]))


def save_model(path, net: EmbeddingNet, grid: GmmGrid) -> None:
    """Self-contained binary model file: versioned header, GMM grid, then the
    network parameters as little-endian float64 in layer order."""
    sizes = net.layer_sizes
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<II", MODEL_VERSION, len(sizes)))
        fh.write(struct.pack(f"<{len(sizes)}I", *sizes))
        fh.write(struct.pack("<I", grid.n_components))
        fh.write(struct.pack("<d", grid.sigma))
        fh.write(np.ascontiguousarray(grid.means, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(grid.weights, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(grid.alpha, dtype="<f8").tobytes())
        for w, b in zip(net.weights, net.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_model(path) -> tuple[EmbeddingNet, GmmGrid]:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MODEL_MAGIC:
            raise ValueError("not a trajlink model file")
        version, n_sizes = struct.unpack("<II", fh.read(8))
        if version != MODEL_VERSION:
            raise ValueError(f"unsupported model version {version}")
        sizes = struct.unpack(f"<{n_sizes}I", fh.read(4 * n_sizes))
        (c,) = struct.unpack("<I", fh.read(4))
        (sigma,) = struct.unpack("<d", fh.read(8))
        means = np.frombuffer(fh.read(8 * c * 3), dtype="<f8").reshape(c, 3).copy()
        weights = np.frombuffer(fh.read(8 * c), dtype="<f8").copy()
        alpha = np.frombuffer(fh.read(8 * c), dtype="<f8").copy()
        grid = GmmGrid(means=means, sigma=sigma, weights=weights, alpha=alpha)
        weights_list, biases = [], []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            w = np.frombuffer(fh.read(8 * n_in * n_out), dtype="<f8").reshape(n_out, n_in).copy()
            b = np.frombuffer(fh.read(8 * n_out), dtype="<f8").copy()
            weights_list.append(w)
            biases.append(b)
    return EmbeddingNet(weights=weights_list, biases=biases), grid
