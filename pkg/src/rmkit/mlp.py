"""Multilayer-perceptron regression of X(u) from unitary angles.

Plain numpy: ReLU hidden layers, linear output, mean-absolute-error loss and
Adam updates.  Inputs are ``[xi_1, phi_1 / 2pi, ..., xi_N, phi_N / 2pi]``.
"""

from __future__ import annotations

import base64
import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .measurement import outcome_probabilities, sample_counts, x_estimate_counts, x_from_probs
from .states import DenseState
from .unitaries import TWO_PI, sample_haar_batch

PRODUCT_WIDTHS = (200, 100, 10)
GHZ_WIDTHS = (256, 64, 16)


class TrainingError(RuntimeError):
    pass


def angles_to_inputs(xi, phi) -> np.ndarray:
    xi = np.atleast_2d(xi)
    phi = np.atleast_2d(phi)
    out = np.empty((xi.shape[0], 2 * xi.shape[1]))
    out[:, 0::2] = xi
    out[:, 1::2] = np.asarray(phi) / TWO_PI
    return out


@dataclass
class MLPModel:
    """Weights ``W[l]`` have shape ``(width[l], width[l+1])``."""

    layer_widths: tuple
    weights: list
    biases: list

    def __post_init__(self):
        self.layer_widths = tuple(int(w) for w in self.layer_widths)
        if len(self.layer_widths) < 2 or min(self.layer_widths) < 1:
            raise ValueError("need at least input and output widths, all positive")
        if self.layer_widths[-1] != 1:
            raise ValueError("output width must be 1")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != self.layer_widths[l:l + 2] or b.shape != (self.layer_widths[l + 1],):
                raise ValueError(f"layer {l} parameter shapes inconsistent with widths")
        if len(self.weights) != len(self.layer_widths) - 1:
            raise ValueError("number of layers does not match widths")

    @classmethod
    def initialize(cls, layer_widths, rng: np.random.Generator) -> "MLPModel":
        widths = tuple(layer_widths)
        Ws, bs = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            Ws.append(rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
            bs.append(np.zeros(fan_out))
        return cls(widths, Ws, bs)

    @property
    def n_inputs(self) -> int:
        return self.layer_widths[0]

    def parameters(self) -> list:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def forward(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        if X.shape[1] != self.n_inputs:
            raise ValueError(f"input width {X.shape[1]} != {self.n_inputs}")
        h = X
        last = len(self.weights) - 1
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if l < last:
                h = np.maximum(h, 0.0)
        return h[:, 0]

    def loss_and_grads(self, X: np.ndarray, y: np.ndarray):
        """MAE loss and gradients in :meth:`parameters` order; sign(0) is taken as 0."""
        acts = [X]
        h = X
        last = len(self.weights) - 1
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if l < last:
                h = np.maximum(h, 0.0)
            acts.append(h)
        resid = acts[-1][:, 0] - y
        loss = float(np.mean(np.abs(resid)))
        delta = (np.sign(resid) / y.size)[:, None]
        grads = []
        for l in range(last, -1, -1):
            grads.append(delta.sum(axis=0))
            grads.append(acts[l].T @ delta)
            if l > 0:
                delta = (delta @ self.weights[l].T) * (acts[l] > 0)
        return loss, grads[::-1]

    def mae(self, X, y) -> float:
        return float(np.mean(np.abs(self.forward(X) - y)))

    def to_json(self) -> str:
        def blob(a):
            return base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode()

        return json.dumps({
            "format": "rmkit-mlp",
            "layer_widths": list(self.layer_widths),
            "activation": "relu",
            "output_activation": "identity",
            "input_normalization": "xi, phi/(2*pi) interleaved per qubit",
            "dtype": "<f8",
            "weights": [blob(W) for W in self.weights],
            "biases": [blob(b) for b in self.biases],
        })

    @classmethod
    def from_json(cls, text: str) -> "MLPModel":
        d = json.loads(text)
        widths = tuple(d["layer_widths"])

        def unblob(s, shape):
            return np.frombuffer(base64.b64decode(s), dtype="<f8").astype(float).reshape(shape)

        Ws = [unblob(s, (widths[l], widths[l + 1])) for l, s in enumerate(d["weights"])]
        bs = [unblob(s, (widths[l + 1],)) for l, s in enumerate(d["biases"])]
        return cls(widths, Ws, bs)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "MLPModel":
        with open(path) as fh:
            return cls.from_json(fh.read())


def predict(model: MLPModel, angles) -> float:
    x = angles_to_inputs(angles.xi, angles.phi)
    return float(model.forward(x)[0])


@dataclass
class TrainingSet:
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        self.targets = np.asarray(self.targets, dtype=float).reshape(-1)
        if self.inputs.shape[0] != self.targets.size:
            raise ValueError("inputs and targets differ in length")
        if not np.all(np.isfinite(self.targets)):
            raise ValueError("targets must be finite")

    @property
    def n_samples(self) -> int:
        return int(self.targets.size)


def generate_training_set(state: DenseState, n_samples: int, shot_noise: int | None = None,
                          rng: np.random.Generator | None = None) -> TrainingSet:
    """Haar-random angles labelled by exact ``X`` or, with ``shot_noise=N_M``, by simulated X_e."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng() if rng is None else rng
    xi, phi = sample_haar_batch(state.n_qubits, n_samples, rng)
    p = outcome_probabilities(state, xi, phi)
    if shot_noise is None:
        y = x_from_probs(p, state.n_qubits)
    else:
        y = x_estimate_counts(sample_counts(p, shot_noise, rng), state.n_qubits)
    return TrainingSet(angles_to_inputs(xi, phi), y)


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train(data: TrainingSet, layer_widths=PRODUCT_WIDTHS, epochs: int = 500,
          learning_rate: float = 1e-3, batch_size: int = 256, split_fraction: float = 0.8,
          rng: np.random.Generator | None = None):
    """Fit an MLP by minibatch Adam on the MAE.

    ``layer_widths`` lists the hidden widths only; input (2N) and output (1)
    are added.  Returns ``(model, history)`` where ``history`` holds
    ``(epoch, train_mae, test_mae)`` rows.
    """
    if data.n_samples < 2:
        raise ValueError("training set needs at least two samples")
    if not 0.0 < split_fraction < 1.0:
        raise ValueError("split_fraction must lie in (0, 1)")
    rng = np.random.default_rng() if rng is None else rng
    perm = rng.permutation(data.n_samples)
    n_train = min(max(1, int(round(split_fraction * data.n_samples))), data.n_samples - 1)
    tr, te = perm[:n_train], perm[n_train:]
    Xtr, ytr, Xte, yte = data.inputs[tr], data.targets[tr], data.inputs[te], data.targets[te]

    widths = (data.inputs.shape[1],) + tuple(layer_widths) + (1,)
    model = MLPModel.initialize(widths, rng)
    opt = Adam(model.parameters(), lr=learning_rate)
    history = []
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n_train)
        for lo in range(0, n_train, batch_size):
            b = order[lo:lo + batch_size]
            loss, grads = model.loss_and_grads(Xtr[b], ytr[b])
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            opt.step(grads)
        train_mae, test_mae = model.mae(Xtr, ytr), model.mae(Xte, yte)
        if not (math.isfinite(train_mae) and math.isfinite(test_mae)):
            raise TrainingError(f"non-finite loss at epoch {epoch}")
        history.append((epoch, train_mae, test_mae))
    return model, history


def write_history(path, history) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_mae", "test_mae"])
        for row in history:
            w.writerow([row[0], repr(row[1]), repr(row[2])])
