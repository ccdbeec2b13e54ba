"""Second-stage classifier over AFVs.

A small fully-connected network (two rectified hidden layers with inverted
dropout after each) trained with cross-entropy by mini-batch SGD or an
adaptive-moment optimizer. The detection verdict derives from the argmax:
CLEAN if and only if the predicted class is label 0.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .dataset_ops import AfvTable

HIDDEN_DIMS = (256, 128)
DROPOUT_RATE = 0.3
CHECKPOINT_MAGIC = b"AFVM"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    batch_size: int = 2500
    sgd_mode: bool = False  # False selects the adaptive-moment optimizer
    learning_rate: float = 1.00
    num_epochs: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.num_epochs < 1:
            raise ValueError("num_epochs must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")


@dataclass
class SecondStageModel:
    layer_dims: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    dropout_rate: float
    seed: int
    label_vocab: tuple[int, ...]  # network class index -> dataset label

    @property
    def n_classes(self) -> int:
        return self.layer_dims[-1]

    def parameter_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))


def init_model(
    d_in: int,
    n_classes: int,
    seed: int = 0,
    hidden_dims: tuple[int, ...] = HIDDEN_DIMS,
    dropout_rate: float = DROPOUT_RATE,
    label_vocab: tuple[int, ...] | None = None,
) -> SecondStageModel:
    """Seeded Glorot-uniform initialization of the full layer stack."""
    if d_in < 1:
        raise ValueError("d_in must be >= 1")
    if n_classes < 2:
        raise ValueError("need >= 2 classes")
    if not 0.0 <= dropout_rate < 1.0:
        raise ValueError("dropout_rate must be in [0, 1)")
    if label_vocab is None:
        label_vocab = tuple(range(n_classes))
    if len(label_vocab) != n_classes:
        raise ValueError("label_vocab length must equal n_classes")
    dims = (d_in, *hidden_dims, n_classes)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return SecondStageModel(dims, weights, biases, dropout_rate, seed, tuple(label_vocab))


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _forward_cache(
    model: SecondStageModel,
    x: np.ndarray,
    train_mode: bool,
    rng: np.random.Generator | None,
):
    """Probabilities plus the intermediates needed for backprop."""
    h = x
    pre_acts, activations, masks = [], [h], []
    n_hidden = len(model.weights) - 1
    for layer in range(n_hidden):
        a = h @ model.weights[layer] + model.biases[layer]
        h = np.maximum(a, 0.0)
        if train_mode and model.dropout_rate > 0.0:
            keep = 1.0 - model.dropout_rate
            mask = (rng.random(h.shape) < keep) / keep  # inverted scaling
            h = h * mask
        else:
            mask = None
        pre_acts.append(a)
        masks.append(mask)
        activations.append(h)
    logits = h @ model.weights[-1] + model.biases[-1]
    return _softmax(logits), pre_acts, activations, masks


def forward(
    model: SecondStageModel,
    afv_batch: np.ndarray,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Class-probability matrix; dropout is active only in train mode."""
    x = np.atleast_2d(np.asarray(afv_batch, dtype=np.float64))
    if x.shape[1] != model.layer_dims[0]:
        raise ValueError(f"feature dim {x.shape[1]} != model d_in {model.layer_dims[0]}")
    if train_mode and model.dropout_rate > 0.0 and rng is None:
        raise ValueError("train-mode forward needs an rng for dropout")
    probs, *_ = _forward_cache(model, x, train_mode, rng)
    return probs


def _backward(model, x, y_idx, probs, pre_acts, activations, masks):
    """Gradients of mean cross-entropy w.r.t. every weight and bias."""
    n = x.shape[0]
    delta = probs.copy()
    delta[np.arange(n), y_idx] -= 1.0
    delta /= n
    grads_w = [None] * len(model.weights)
    grads_b = [None] * len(model.biases)
    grads_w[-1] = activations[-1].T @ delta
    grads_b[-1] = delta.sum(axis=0)
    upstream = delta @ model.weights[-1].T
    for layer in range(len(model.weights) - 2, -1, -1):
        if masks[layer] is not None:
            upstream = upstream * masks[layer]
        upstream = upstream * (pre_acts[layer] > 0.0)
        grads_w[layer] = activations[layer].T @ upstream
        grads_b[layer] = upstream.sum(axis=0)
        if layer > 0:
            upstream = upstream @ model.weights[layer].T
    return grads_w, grads_b


def _cross_entropy(probs: np.ndarray, y_idx: np.ndarray) -> float:
    picked = probs[np.arange(probs.shape[0]), y_idx]
    return float(-np.mean(np.log(np.maximum(picked, 1e-300))))


class _AdamState:
    def __init__(self, model: SecondStageModel):
        self.m = [np.zeros_like(w) for w in model.weights] + [
            np.zeros_like(b) for b in model.biases
        ]
        self.v = [np.zeros_like(g) for g in self.m]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray], lr: float):
        b1, b2, eps = 0.9, 0.999, 1e-8
        self.t += 1
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            m_hat = self.m[i] / (1 - b1**self.t)
            v_hat = self.v[i] / (1 - b2**self.t)
            p -= lr * m_hat / (np.sqrt(v_hat) + eps)


def train(
    model: SecondStageModel, table: AfvTable, config: TrainConfig
) -> tuple[SecondStageModel, list[tuple[int, float, float]]]:
    """Train on the table's train split; returns the model and an epoch trace.

    The trace holds (epoch, mean cross-entropy over the epoch's batches,
    train accuracy in eval mode). Training is fully determined by the
    config seed, the table, and the initial weights.
    """
    rows = table.train_rows()
    vocab = tuple(int(v) for v in np.unique(rows.labels))
    if vocab != model.label_vocab:
        raise ValueError(f"training labels {vocab} do not match model vocab {model.label_vocab}")
    x = rows.values
    y_idx = np.searchsorted(np.asarray(model.label_vocab), rows.labels)
    rng = np.random.default_rng(config.seed)
    adam = None if config.sgd_mode else _AdamState(model)
    trace = []
    for epoch in range(config.num_epochs):
        order = rng.permutation(x.shape[0])
        epoch_loss = 0.0
        for start in range(0, x.shape[0], config.batch_size):
            batch = order[start : start + config.batch_size]
            xb, yb = x[batch], y_idx[batch]
            probs, pre, acts, masks = _forward_cache(model, xb, True, rng)
            loss = _cross_entropy(probs, yb)
            if not np.isfinite(loss):
                raise RuntimeError(
                    f"NaN/inf loss at epoch {epoch} (lr={config.learning_rate}, "
                    f"batch_size={config.batch_size})"
                )
            epoch_loss += loss * len(batch)
            grads_w, grads_b = _backward(model, xb, yb, probs, pre, acts, masks)
            params = model.weights + model.biases
            grads = grads_w + grads_b
            if config.sgd_mode:
                for p, g in zip(params, grads):
                    p -= config.learning_rate * g
            else:
                adam.step(params, grads, config.learning_rate)
        train_acc = float(np.mean(predict(model, x) == rows.labels))
        trace.append((epoch, epoch_loss / x.shape[0], train_acc))
    return model, trace


def grad_check(
    model: SecondStageModel,
    afv_batch: np.ndarray,
    labels: np.ndarray,
    n_params: int = 200,
    h: float = 1e-4,
    seed: int = 0,
) -> float:
    """Max relative error of analytic vs central-difference gradients.

    Dropout must stay off (eval-mode gradients). The relative error per
    sampled parameter is |ga - gn| / max(|ga| + |gn|, 1e-4); the floor makes
    near-zero gradients compare absolutely. A parameter whose +/-h step
    flips a rectifier pre-activation sign is resampled: the loss is not
    differentiable across the kink, so the central difference is invalid
    there.
    """
    x = np.atleast_2d(np.asarray(afv_batch, dtype=np.float64))
    y_idx = np.searchsorted(np.asarray(model.label_vocab), np.asarray(labels))
    probs, pre, acts, masks = _forward_cache(model, x, False, None)
    grads_w, grads_b = _backward(model, x, y_idx, probs, pre, acts, masks)
    params = model.weights + model.biases
    grads = grads_w + grads_b

    def loss_and_pattern():
        p, pre_now, *_ = _forward_cache(model, x, False, None)
        pattern = [a > 0.0 for a in pre_now]
        return _cross_entropy(p, y_idx), pattern

    rng = np.random.default_rng(seed)
    worst = 0.0
    checked = 0
    for _ in range(20 * n_params):
        if checked >= n_params:
            break
        li = int(rng.integers(len(params)))
        flat = params[li].ravel()
        k = int(rng.integers(flat.size))
        orig = flat[k]
        flat[k] = orig + h
        up, pat_up = loss_and_pattern()
        flat[k] = orig - h
        down, pat_down = loss_and_pattern()
        flat[k] = orig
        if any(np.any(a != b) for a, b in zip(pat_up, pat_down)):
            continue  # kink crossed, central difference meaningless here
        numeric = (up - down) / (2 * h)
        analytic = float(grads[li].ravel()[k])
        rel = abs(analytic - numeric) / max(abs(analytic) + abs(numeric), 1e-4)
        worst = max(worst, rel)
        checked += 1
    if checked < n_params:
        raise RuntimeError(f"could only evaluate {checked}/{n_params} kink-free parameters")
    return worst


def predict(model: SecondStageModel, rows: np.ndarray) -> np.ndarray:
    """Argmax labels (dataset vocabulary); ties break to the lowest label."""
    probs = forward(model, rows, train_mode=False)
    return np.asarray(model.label_vocab)[np.argmax(probs, axis=1)]


def detect(labels: np.ndarray) -> np.ndarray:
    """CLEAN-bit rule: True means ATTACK, i.e. any non-zero predicted label."""
    return np.asarray(labels) != 0


# ---------------------------------------------------------------------------
# checkpoint format: header + dims + vocab + little-endian f32 weights


def save_checkpoint(model: SecondStageModel, path: str) -> None:
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<H", CHECKPOINT_VERSION))
        f.write(struct.pack("<B", len(model.layer_dims)))
        f.write(struct.pack(f"<{len(model.layer_dims)}I", *model.layer_dims))
        f.write(struct.pack("<f", model.dropout_rate))
        f.write(struct.pack("<q", model.seed))
        f.write(struct.pack("<H", len(model.label_vocab)))
        f.write(struct.pack(f"<{len(model.label_vocab)}i", *model.label_vocab))
        for w, b in zip(model.weights, model.biases):
            f.write(w.astype("<f4").tobytes())
            f.write(b.astype("<f4").tobytes())


def load_checkpoint(path: str) -> SecondStageModel:
    with open(path, "rb") as f:
        if f.read(4) != CHECKPOINT_MAGIC:
            raise ValueError("bad checkpoint magic")
        (version,) = struct.unpack("<H", f.read(2))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (n_dims,) = struct.unpack("<B", f.read(1))
        dims = struct.unpack(f"<{n_dims}I", f.read(4 * n_dims))
        (dropout,) = struct.unpack("<f", f.read(4))
        (seed,) = struct.unpack("<q", f.read(8))
        (n_vocab,) = struct.unpack("<H", f.read(2))
        vocab = struct.unpack(f"<{n_vocab}i", f.read(4 * n_vocab))
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            w = np.frombuffer(f.read(4 * fan_in * fan_out), dtype="<f4")
            weights.append(w.reshape(fan_in, fan_out).astype(np.float64))
            b = np.frombuffer(f.read(4 * fan_out), dtype="<f4")
            biases.append(b.astype(np.float64))
    return SecondStageModel(tuple(dims), weights, biases, float(dropout), int(seed), vocab)


def save_trace_csv(trace: list[tuple[int, float, float]], path: str) -> None:
    lines = ["epoch,loss,train_accuracy"]
    for epoch, loss, acc in trace:
        lines.append(f"{epoch},{loss!r},{acc!r}")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
