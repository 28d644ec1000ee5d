"""Dense ReLU multilayer perceptron with per-sample gradients.

Parameters flatten in the order ``fc1.weight, fc1.bias, fc2.weight, ...``;
weights are stored ``(out, in)`` row-major, so this is also the WTS1 order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TrainingError
from .tensor_io import WeightStore


@dataclass
class LabeledBatch:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.inputs.shape[0] < 1:
            raise ValueError("empty batch")
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ValueError(f"{self.inputs.shape[0]} inputs but {self.labels.shape[0]} labels")

    def __len__(self):
        return self.labels.shape[0]

    def subset(self, idx) -> "LabeledBatch":
        return LabeledBatch(self.inputs[idx], self.labels[idx])


class MlpNetwork:
    def __init__(self, weights, biases):
        if len(weights) != len(biases) or not weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64).reshape(-1) for b in biases]
        dims = [self.weights[0].shape[1]]
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 2 or w.shape[1] != dims[-1] or b.shape != (w.shape[0],):
                raise ValueError(f"inconsistent layer shapes after dims {dims}")
            dims.append(w.shape[0])
        self.layer_dims = dims

    @classmethod
    def initialize(cls, layer_dims, seed=0) -> "MlpNetwork":
        """Glorot-uniform weights, zero biases."""
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @classmethod
    def from_store(cls, store: WeightStore) -> "MlpNetwork":
        names = store.names
        if len(names) % 2:
            raise ValueError("expected alternating weight/bias tensors")
        weights = [store[names[k]] for k in range(0, len(names), 2)]
        biases = [store[names[k]] for k in range(1, len(names), 2)]
        return cls(weights, biases)

    def to_store(self) -> WeightStore:
        tensors = []
        for layer, (w, b) in enumerate(zip(self.weights, self.biases), start=1):
            tensors.append((f"fc{layer}.weight", w.shape, w))
            tensors.append((f"fc{layer}.bias", b.shape, b))
        return WeightStore(tensors)

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    @property
    def n_classes(self) -> int:
        return self.layer_dims[-1]

    def flat(self) -> np.ndarray:
        return np.concatenate([p.reshape(-1) for w, b in zip(self.weights, self.biases) for p in (w, b)])

    def with_flat(self, vector) -> "MlpNetwork":
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got shape {vector.shape}")
        weights, biases, pos = [], [], 0
        for w, b in zip(self.weights, self.biases):
            weights.append(vector[pos:pos + w.size].reshape(w.shape))
            pos += w.size
            biases.append(vector[pos:pos + b.size].copy())
            pos += b.size
        return MlpNetwork(weights, biases)

    def tensor_ranges(self) -> list[tuple[int, int]]:
        ranges, pos = [], 0
        for w, b in zip(self.weights, self.biases):
            for p in (w, b):
                ranges.append((pos, pos + p.size))
                pos += p.size
        return ranges

    def _forward_batch(self, x):
        """Pre-activations of every layer for a batch ``x`` of shape (M, d0)."""
        if x.shape[1] != self.layer_dims[0]:
            raise ValueError(f"input has {x.shape[1]} features, network expects {self.layer_dims[0]}")
        activations, pre = [x], []
        a = x
        last = len(self.weights) - 1
        for layer, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w.T + b
            pre.append(z)
            a = z if layer == last else np.maximum(z, 0.0)
            activations.append(a)
        return activations, pre


def forward(net: MlpNetwork, inputs) -> np.ndarray:
    """Logits for one input vector or a batch of row vectors."""
    x = np.asarray(inputs, dtype=np.float64)
    single = x.ndim == 1
    activations, _ = net._forward_batch(np.atleast_2d(x))
    return activations[-1][0] if single else activations[-1]


def _log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _check_labels(net, labels):
    if labels.min() < 0 or labels.max() >= net.n_classes:
        raise ValueError(f"labels must lie in [0, {net.n_classes})")


def per_example_losses(net: MlpNetwork, batch: LabeledBatch) -> np.ndarray:
    _check_labels(net, batch.labels)
    logp = _log_softmax(forward(net, batch.inputs))
    return -logp[np.arange(len(batch)), batch.labels]


def sample_loss(net: MlpNetwork, batch: LabeledBatch) -> float:
    """Mean softmax cross-entropy over the batch."""
    return float(np.mean(per_example_losses(net, batch)))


def accuracy(net: MlpNetwork, batch: LabeledBatch) -> float:
    # argmax returns the lowest index among ties
    predicted = np.argmax(forward(net, batch.inputs), axis=1)
    return float(np.mean(predicted == batch.labels))


def per_sample_gradients(net: MlpNetwork, batch: LabeledBatch) -> np.ndarray:
    """(M, N) matrix whose row m is the loss gradient of example m alone."""
    _check_labels(net, batch.labels)
    activations, pre = net._forward_batch(batch.inputs)
    m = len(batch)
    probs = np.exp(_log_softmax(activations[-1]))
    delta = probs
    delta[np.arange(m), batch.labels] -= 1.0

    per_layer = []
    for layer in range(len(net.weights) - 1, -1, -1):
        gw = delta[:, :, None] * activations[layer][:, None, :]
        per_layer.append((gw.reshape(m, -1), delta))
        if layer:
            delta = (delta @ net.weights[layer]) * (pre[layer - 1] > 0)
    return np.concatenate([g for pair in reversed(per_layer) for g in pair], axis=1)


def per_sample_gradient(net: MlpNetwork, inputs, label) -> np.ndarray:
    return per_sample_gradients(net, LabeledBatch(np.atleast_2d(inputs), [label]))[0]


def mean_gradient(net: MlpNetwork, batch: LabeledBatch) -> np.ndarray:
    return per_sample_gradients(net, batch).mean(axis=0)


def gradgen(net: MlpNetwork, batch: LabeledBatch, k: int, seed=0, replace=False) -> np.ndarray:
    """Per-sample gradients of ``k`` examples drawn from ``batch`` by ``seed``."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    if k < 1:
        raise ValueError("k must be positive")
    if k > len(batch) and not replace:
        raise ValueError(f"k={k} exceeds the {len(batch)} available examples; allow sampling with replacement")
    rng = np.random.default_rng(seed)
    order = rng.choice(len(batch), size=k, replace=replace)
    return per_sample_gradients(net, batch.subset(order))


def apply_mask_loss(net: MlpNetwork, mask, batch: LabeledBatch) -> float:
    """Sample loss with the parameters at ``mask`` zeroed; ``net`` is left untouched."""
    n = getattr(mask, "n", net.n_params)
    if n != net.n_params:
        raise ValueError(f"mask is over {n} parameters, network has {net.n_params}")
    w = net.flat()
    w[np.asarray(getattr(mask, "indices", mask), dtype=np.intp)] = 0.0
    return sample_loss(net.with_flat(w), batch)


@dataclass
class TrainHyper:
    epochs: int = 200
    lr: float = 0.05
    batch_size: int = 32
    momentum: float = 0.9


def train_toy(layer_dims, batch: LabeledBatch, hyper: TrainHyper | None = None, seed=0):
    """Mini-batch SGD with momentum from a seeded Glorot initialization.

    Returns ``(network, final_training_loss)``.
    """
    hyper = hyper or TrainHyper()
    if len(batch) == 0:
        raise ValueError("empty dataset")
    net = MlpNetwork.initialize(layer_dims, seed)
    rng = np.random.default_rng(seed + 1)
    w = net.flat()
    velocity = np.zeros_like(w)
    for epoch in range(hyper.epochs):
        order = rng.permutation(len(batch))
        for start in range(0, len(batch), hyper.batch_size):
            mb = batch.subset(order[start:start + hyper.batch_size])
            grad = mean_gradient(net, mb)
            velocity = hyper.momentum * velocity - hyper.lr * grad
            w = w + velocity
            net = net.with_flat(w)
        if not np.all(np.isfinite(w)):
            raise TrainingError(f"training diverged in epoch {epoch}")
    loss = sample_loss(net, batch)
    if not np.isfinite(loss):
        raise TrainingError("training loss is not finite")
    return net, loss


# --- synthetic data -----------------------------------------------------------

def make_blobs(n=400, seed=0, separation=3.0, std=0.5):
    """Two Gaussian clusters in the plane, balanced classes."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    centers = np.array([[-separation / 2, 0.0], [separation / 2, 0.0]])
    x = centers[labels] + std * rng.standard_normal((n, 2))
    return LabeledBatch(x, labels)


def make_rings(n=400, seed=0, radii=(1.0, 2.0), noise=0.2):
    """Two concentric noisy rings, balanced classes."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    angle = rng.uniform(0.0, 2 * np.pi, size=n)
    radius = np.asarray(radii)[labels] + noise * rng.standard_normal(n)
    x = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1)
    return LabeledBatch(x, labels)


DATASETS = {"blobs": make_blobs, "rings": make_rings}


def train_test_split(batch: LabeledBatch, test_fraction=0.25, seed=0):
    order = np.random.default_rng(seed).permutation(len(batch))
    cut = int(round(len(batch) * (1 - test_fraction)))
    return batch.subset(np.sort(order[:cut])), batch.subset(np.sort(order[cut:]))
