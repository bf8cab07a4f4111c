"""Desk-scale differentiable classifiers with hand-written forward/backward.

Three small architectures (linear softmax, one-hidden-layer MLP, 3x3
convolution + MLP) provide enough decision-boundary diversity for
substitute/target transfer experiments while training in seconds. All math
is float64 numpy; layers are stateless in forward (caches are returned, not
stored), so a trained Classifier is safe to evaluate concurrently.

Model files: magic "CWM1", version byte, input dims and class count, then
per layer a kind tag, two dimension fields, and row-major float64 weights
and biases.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .core import Image, as_vector, make_rng

MODEL_MAGIC = b"CWM1"
MODEL_VERSION = 1
PROB_FLOOR = 1e-12

_KIND_TAGS = {"dense": 1, "relu": 2, "conv3x3": 3}
_TAG_KINDS = {v: k for k, v in _KIND_TAGS.items()}


class ModelFormatError(ValueError):
    """Raised for corrupt, truncated, or mismatched model files."""


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------


class DenseLayer:
    """Affine map x @ W + b. weight: (n_in, n_out), bias: (n_out,)."""

    kind = "dense"

    def __init__(self, weight: np.ndarray, bias: np.ndarray):
        self.weight = np.asarray(weight, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ValueError("dense layer dimensions do not chain")

    @property
    def n_in(self) -> int:
        return self.weight.shape[0]

    @property
    def n_out(self) -> int:
        return self.weight.shape[1]

    def forward(self, x):
        return x @ self.weight + self.bias, x

    def backward(self, cache, grad_out):
        x = cache
        grad_in = grad_out @ self.weight.T
        return grad_in, (x.T @ grad_out, grad_out.sum(axis=0))

    def apply_update(self, grads, lr):
        gw, gb = grads
        self.weight -= lr * gw
        self.bias -= lr * gb


class ReluLayer:
    """Elementwise max(0, x); subgradient at 0 taken as 0."""

    kind = "relu"
    n_in = 0
    n_out = 0

    def forward(self, x):
        mask = x > 0
        return np.where(mask, x, 0.0), mask

    def backward(self, cache, grad_out):
        return np.where(cache, grad_out, 0.0), ()

    def apply_update(self, grads, lr):
        pass


class Conv3x3Layer:
    """Valid 3x3 convolution over an (h, w, c)-ordered flat input.

    weight: (filters, 9 * in_channels), bias: (filters,). Output is flat in
    (row, column, filter) order, so it feeds a DenseLayer directly.
    """

    kind = "conv3x3"

    def __init__(self, weight, bias, in_h: int, in_w: int, in_c: int):
        self.weight = np.asarray(weight, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)
        self.in_h, self.in_w, self.in_c = in_h, in_w, in_c
        filters = self.weight.shape[0]
        if self.weight.shape != (filters, 9 * in_c) or self.bias.shape != (filters,):
            raise ValueError("conv layer dimensions do not chain")
        self.out_h, self.out_w = in_h - 2, in_w - 2
        if self.out_h <= 0 or self.out_w <= 0:
            raise ValueError("input too small for 3x3 convolution")
        self._patch_index = self._build_patch_index()

    @property
    def n_in(self) -> int:
        return self.in_h * self.in_w * self.in_c

    @property
    def n_out(self) -> int:
        return self.out_h * self.out_w * self.weight.shape[0]

    def _build_patch_index(self) -> np.ndarray:
        # flat input index of every (dy, dx, channel) tap for each output site
        idx = np.empty((self.out_h * self.out_w, 9 * self.in_c), dtype=np.int64)
        p = 0
        for i in range(self.out_h):
            for j in range(self.out_w):
                taps = []
                for dy in range(3):
                    for dx in range(3):
                        base = ((i + dy) * self.in_w + (j + dx)) * self.in_c
                        taps.extend(range(base, base + self.in_c))
                idx[p] = taps
                p += 1
        return idx

    def forward(self, x):
        patches = x[:, self._patch_index]  # (B, P, 9c)
        out = patches @ self.weight.T + self.bias  # (B, P, F)
        return out.reshape(x.shape[0], -1), patches

    def backward(self, cache, grad_out):
        patches = cache
        batch = patches.shape[0]
        g3 = grad_out.reshape(batch, -1, self.weight.shape[0])  # (B, P, F)
        gw = np.einsum("bpf,bpk->fk", g3, patches)
        gb = g3.sum(axis=(0, 1))
        gpatches = g3 @ self.weight  # (B, P, 9c)
        grad_in = np.zeros((batch, self.n_in))
        np.add.at(
            grad_in,
            (np.arange(batch)[:, None, None], self._patch_index[None, :, :]),
            gpatches,
        )
        return grad_in, (gw, gb)

    def apply_update(self, grads, lr):
        gw, gb = grads
        self.weight -= lr * gw
        self.bias -= lr * gb


# ---------------------------------------------------------------------------
# Classifier
# ---------------------------------------------------------------------------


class Classifier:
    """A feed-forward softmax classifier over flat (h, w, c) images."""

    def __init__(self, layers, width: int, height: int, channels: int, n_classes: int,
                 name: str = "model"):
        self.layers = list(layers)
        self.width, self.height, self.channels = width, height, channels
        self.n_classes = n_classes
        self.name = name
        self.train_accuracy: float | None = None
        self.test_accuracy: float | None = None
        self.loss_history: list[float] = []
        n = width * height * channels
        for layer in self.layers:
            if layer.kind == "relu":
                continue
            if layer.n_in != n:
                raise ValueError(f"layer {layer.kind} expects {layer.n_in} inputs, got {n}")
            n = layer.n_out
        if n != n_classes:
            raise ValueError(f"final layer emits {n} logits for {n_classes} classes")

    @property
    def n_inputs(self) -> int:
        return self.width * self.height * self.channels

    def _check_batch(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_inputs:
            raise ValueError(f"input has {X.shape[1]} features, model expects {self.n_inputs}")
        return X

    def logits(self, X) -> np.ndarray:
        out = self._check_batch(X)
        for layer in self.layers:
            out, _ = layer.forward(out)
        return out

    def forward_batch(self, X) -> np.ndarray:
        """Row-wise softmax probabilities, numerically stabilised."""
        z = self.logits(X)
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def copy(self) -> "Classifier":
        clone = load_model_bytes(save_model_bytes(self))
        clone.name = self.name
        clone.train_accuracy = self.train_accuracy
        clone.test_accuracy = self.test_accuracy
        return clone


def forward(model: Classifier, x) -> np.ndarray:
    """Softmax probability vector (length K) for one image."""
    return model.forward_batch(as_vector(x)[None, :])[0]


def cross_entropy(model: Classifier, x, y: int) -> float:
    """-log p_y, with the probability floored at 1e-12 before the log."""
    p = forward(model, x)
    if not 0 <= y < model.n_classes:
        raise ValueError(f"label {y} outside [0, {model.n_classes})")
    return float(-np.log(max(p[y], PROB_FLOOR)))


def _batch_loss_and_grads(model: Classifier, X, y):
    """Mean cross-entropy over a batch, with input and parameter gradients."""
    X = model._check_batch(X)
    y = np.asarray(y, dtype=np.int64)
    caches = []
    out = X
    for layer in model.layers:
        out, cache = layer.forward(out)
        caches.append(cache)
    z = out - out.max(axis=1, keepdims=True)
    e = np.exp(z)
    probs = e / e.sum(axis=1, keepdims=True)
    batch = X.shape[0]
    py = np.maximum(probs[np.arange(batch), y], PROB_FLOOR)
    loss = float(-np.log(py).mean())
    grad = probs.copy()
    grad[np.arange(batch), y] -= 1.0
    grad /= batch
    param_grads = [None] * len(model.layers)
    for i in range(len(model.layers) - 1, -1, -1):
        grad, pg = model.layers[i].backward(caches[i], grad)
        param_grads[i] = pg
    return loss, grad, param_grads


def input_gradient(model: Classifier, x, y: int) -> np.ndarray:
    """Gradient of the cross-entropy loss at (x, y) with respect to x."""
    if not 0 <= y < model.n_classes:
        raise ValueError(f"label {y} outside [0, {model.n_classes})")
    _, grad, _ = _batch_loss_and_grads(model, as_vector(x)[None, :], [y])
    return grad[0]


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------


@dataclass
class Dataset:
    """Images as rows of X with integer labels and a train/test split mask."""

    X: np.ndarray
    y: np.ndarray
    is_train: np.ndarray
    width: int
    height: int
    channels: int
    n_classes: int

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.is_train = np.asarray(self.is_train, dtype=bool)
        if not (len(self.X) == len(self.y) == len(self.is_train)):
            raise ValueError("X, y, is_train lengths differ")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.n_classes):
            raise ValueError("labels out of range")

    def __len__(self) -> int:
        return len(self.y)

    def image(self, i: int) -> Image:
        return Image(self.X[i], self.width, self.height, self.channels)

    def split(self, train: bool):
        mask = self.is_train if train else ~self.is_train
        return self.X[mask], self.y[mask]


def make_blob_dataset(seed: int, n_classes: int = 10, width: int = 8, height: int = 8,
                      channels: int = 3, train_per_class: int = 200,
                      test_per_class: int = 100, noise_std: float = 0.07,
                      prototype_low: float = 0.455, prototype_high: float = 0.545) -> Dataset:
    """Procedural K-class image set: one random prototype per class plus noise.

    Samples are clipped to [0, 1]. The default geometry keeps prototypes
    about 0.5 apart in L2, which puts typical decision boundaries within a
    few tenths of each test point: close enough for unit-L2-normalised
    iterative steps to cross, far enough that classes stay separable.
    """
    rng = make_rng(seed)
    d = width * height * channels
    prototypes = rng.uniform(prototype_low, prototype_high, size=(n_classes, d))
    rows, labels, tags = [], [], []
    for split_size, tag in ((train_per_class, True), (test_per_class, False)):
        for cls in range(n_classes):
            noise = rng.normal(0.0, noise_std, size=(split_size, d))
            rows.append(np.clip(prototypes[cls] + noise, 0.0, 1.0))
            labels.append(np.full(split_size, cls))
            tags.append(np.full(split_size, tag))
    return Dataset(
        X=np.vstack(rows), y=np.concatenate(labels), is_train=np.concatenate(tags),
        width=width, height=height, channels=channels, n_classes=n_classes,
    )


# ---------------------------------------------------------------------------
# Architectures
# ---------------------------------------------------------------------------


def _init_dense(rng, n_in, n_out):
    scale = np.sqrt(2.0 / n_in)
    return DenseLayer(rng.normal(0.0, scale, size=(n_in, n_out)), np.zeros(n_out))


def linear_classifier(width, height, channels, n_classes, seed, name="linear") -> Classifier:
    """Single affine layer into softmax."""
    rng = make_rng(seed)
    n = width * height * channels
    return Classifier([_init_dense(rng, n, n_classes)], width, height, channels, n_classes, name)


def mlp_classifier(width, height, channels, n_classes, seed, hidden=64, name="mlp") -> Classifier:
    """One hidden rectified layer, then affine into softmax."""
    rng = make_rng(seed)
    n = width * height * channels
    layers = [_init_dense(rng, n, hidden), ReluLayer(), _init_dense(rng, hidden, n_classes)]
    return Classifier(layers, width, height, channels, n_classes, name)


def conv_classifier(width, height, channels, n_classes, seed, filters=8, hidden=48,
                    name="conv") -> Classifier:
    """3x3 convolution + rectifier feeding a small MLP head."""
    rng = make_rng(seed)
    scale = np.sqrt(2.0 / (9 * channels))
    conv = Conv3x3Layer(
        rng.normal(0.0, scale, size=(filters, 9 * channels)), np.zeros(filters),
        in_h=height, in_w=width, in_c=channels,
    )
    layers = [
        conv,
        ReluLayer(),
        _init_dense(rng, conv.n_out, hidden),
        ReluLayer(),
        _init_dense(rng, hidden, n_classes),
    ]
    return Classifier(layers, width, height, channels, n_classes, name)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

BATCH_SIZE = 32


def accuracy(model: Classifier, X, y) -> float:
    if len(y) == 0:
        return 0.0
    preds = model.forward_batch(X).argmax(axis=1)
    return float((preds == np.asarray(y)).mean())


def _sgd_epoch(model, X, y, lr, rng, adversarial_eps=None):
    """One shuffled pass of minibatch SGD; returns the mean batch loss."""
    order = rng.permutation(len(y))
    losses = []
    for start in range(0, len(order), BATCH_SIZE):
        sel = order[start:start + BATCH_SIZE]
        xb, yb = X[sel], y[sel]
        if adversarial_eps is not None:
            from .baselines import fgsm_batch  # late import; baselines depends on models

            xb = np.vstack([xb, fgsm_batch(model, xb, yb, adversarial_eps)])
            yb = np.concatenate([yb, yb])
        loss, _, param_grads = _batch_loss_and_grads(model, xb, yb)
        for layer, grads in zip(model.layers, param_grads):
            layer.apply_update(grads, lr)
        losses.append(loss)
    return float(np.mean(losses))


def train(model: Classifier, dataset: Dataset, epochs: int, learning_rate: float,
          rng: np.random.Generator) -> Classifier:
    """Minibatch SGD on the train split; deterministic given the rng seed.

    Mutates and returns `model`, recording final train/test accuracy and the
    per-epoch mean training loss on `model.loss_history`.
    """
    return _train_impl(model, dataset, epochs, learning_rate, rng, adversarial_eps=None)


def train_adversarial(model: Classifier, dataset: Dataset, epochs: int, learning_rate: float,
                      eps: float, rng: np.random.Generator) -> Classifier:
    """Like train, but every minibatch is augmented with single-step
    gradient-direction adversarial examples of strength eps crafted against
    the current weights."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    return _train_impl(model, dataset, epochs, learning_rate, rng, adversarial_eps=eps)


def _train_impl(model, dataset, epochs, learning_rate, rng, adversarial_eps):
    Xtr, ytr = dataset.split(train=True)
    if len(ytr) == 0:
        raise ValueError("training split is empty")
    history = []
    for _ in range(epochs):
        history.append(_sgd_epoch(model, Xtr, ytr, learning_rate, rng, adversarial_eps))
    Xte, yte = dataset.split(train=False)
    model.loss_history = history
    model.train_accuracy = accuracy(model, Xtr, ytr)
    model.test_accuracy = accuracy(model, Xte, yte) if len(yte) else None
    return model


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def save_model_bytes(model: Classifier) -> bytes:
    parts = [struct.pack("<4sBIIIII", MODEL_MAGIC, MODEL_VERSION, model.width, model.height,
                         model.channels, model.n_classes, len(model.layers))]
    for layer in model.layers:
        tag = _KIND_TAGS[layer.kind]
        if layer.kind == "relu":
            parts.append(struct.pack("<BII", tag, 0, 0))
        elif layer.kind == "dense":
            parts.append(struct.pack("<BII", tag, layer.n_in, layer.n_out))
            parts.append(layer.weight.astype("<f8").tobytes())
            parts.append(layer.bias.astype("<f8").tobytes())
        else:  # conv3x3
            parts.append(struct.pack("<BII", tag, layer.in_c, layer.weight.shape[0]))
            parts.append(layer.weight.astype("<f8").tobytes())
            parts.append(layer.bias.astype("<f8").tobytes())
    return b"".join(parts)


def save_model(path, model: Classifier) -> None:
    with open(path, "wb") as fh:
        fh.write(save_model_bytes(model))


def load_model_bytes(blob: bytes, name: str = "model") -> Classifier:
    if len(blob) < 25:
        raise ModelFormatError("truncated model header")
    magic, version, w, h, c, k, n_layers = struct.unpack_from("<4sBIIIII", blob, 0)
    if magic != MODEL_MAGIC:
        raise ModelFormatError(f"bad magic {magic!r}")
    if version != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version {version}")
    offset = 25
    layers = []
    # conv layers only appear at the input, so their spatial dims come from the header
    spatial_h, spatial_w = h, w
    for i in range(n_layers):
        if offset + 9 > len(blob):
            raise ModelFormatError(f"layer {i}: truncated layer header")
        tag, dim_a, dim_b = struct.unpack_from("<BII", blob, offset)
        offset += 9
        kind = _TAG_KINDS.get(tag)
        if kind is None:
            raise ModelFormatError(f"layer {i}: unknown kind tag {tag}")
        if kind == "relu":
            layers.append(ReluLayer())
            continue
        if kind == "dense":
            n_weights, n_bias = dim_a * dim_b, dim_b
        else:
            n_weights, n_bias = dim_b * 9 * dim_a, dim_b
        need = 8 * (n_weights + n_bias)
        if offset + need > len(blob):
            raise ModelFormatError(f"layer {i} ({kind}): truncated weights")
        weights = np.frombuffer(blob, dtype="<f8", count=n_weights, offset=offset).copy()
        offset += 8 * n_weights
        bias = np.frombuffer(blob, dtype="<f8", count=n_bias, offset=offset).copy()
        offset += 8 * n_bias
        try:
            if kind == "dense":
                layers.append(DenseLayer(weights.reshape(dim_a, dim_b), bias))
            else:
                layers.append(Conv3x3Layer(weights.reshape(dim_b, 9 * dim_a), bias,
                                           in_h=spatial_h, in_w=spatial_w, in_c=dim_a))
        except ValueError as exc:
            raise ModelFormatError(f"layer {i} ({kind}): {exc}") from exc
    if offset != len(blob):
        raise ModelFormatError(f"{len(blob) - offset} trailing bytes after last layer")
    try:
        return Classifier(layers, w, h, c, k, name=name)
    except ValueError as exc:
        raise ModelFormatError(str(exc)) from exc


def load_model(path) -> Classifier:
    from pathlib import Path

    p = Path(path)
    return load_model_bytes(p.read_bytes(), name=p.stem)
