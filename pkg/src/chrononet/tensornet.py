"""Minimal dense feed-forward substrate: layers, Xavier init, analytic
backprop and three full-batch optimizers (SGD+momentum, Adam, D-Adaptation
SGD). Everything is float64 and deterministic for a fixed seed.
"""

import io
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("tanh", "identity")

CHECKPOINT_MAGIC = b"CHRONONET1\n"


class TrainingError(RuntimeError):
    """Raised when optimization goes numerically bad (non-finite values)."""


@dataclass
class DenseLayer:
    """Affine map plus pointwise activation; weights are out x in."""

    weights: np.ndarray
    biases: np.ndarray
    activation: str = "tanh"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.biases = np.asarray(self.biases, dtype=float)
        if self.weights.ndim != 2 or self.biases.shape != (self.weights.shape[0],):
            raise ValueError(
                f"layer shape mismatch: weights {self.weights.shape}, biases {self.biases.shape}"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self):
        return self.weights.shape[1]

    @property
    def out_dim(self):
        return self.weights.shape[0]

    def __call__(self, x):
        pre = x @ self.weights.T + self.biases
        return np.tanh(pre) if self.activation == "tanh" else pre


def xavier_init(in_dim, out_dim, seed, activation="tanh"):
    """Xavier-uniform layer: weights in +/-sqrt(6/(in+out)), zero biases.

    ``seed`` may be an int (or SeedSequence) or an existing Generator; either
    way the draw is deterministic.
    """
    if in_dim < 1 or out_dim < 1:
        raise ValueError(f"layer dims must be >= 1, got {in_dim}x{out_dim}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    limit = np.sqrt(6.0 / (in_dim + out_dim))
    weights = rng.uniform(-limit, limit, size=(out_dim, in_dim))
    return DenseLayer(weights, np.zeros(out_dim), activation)


def forward(layers, x):
    """Run the stack; returns [input, a_1, ..., a_L] (last entry = output)."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != layers[0].in_dim:
        raise ValueError(
            f"input has {x.shape} but first layer expects in_dim={layers[0].in_dim}"
        )
    acts = [x]
    for layer in layers:
        acts.append(layer(acts[-1]))
    return acts


@dataclass
class Gradients:
    """Per-layer weight/bias gradients, shape-congruent with the network."""

    weights: list
    biases: list


def backward(layers, activations, output_gradient):
    """Reverse-accumulate d(loss)/d(weights, biases) from d(loss)/d(output).

    ``activations`` must come from forward() on the same layers. Layers are
    not mutated. tanh' is computed from the stored activation as 1 - a^2.
    """
    delta = np.asarray(output_gradient, dtype=float)
    if delta.shape != activations[-1].shape:
        raise ValueError(
            f"output_gradient shape {delta.shape} != output shape {activations[-1].shape}"
        )
    w_grads = [None] * len(layers)
    b_grads = [None] * len(layers)
    for idx in range(len(layers) - 1, -1, -1):
        layer = layers[idx]
        if layer.activation == "tanh":
            delta = delta * (1.0 - activations[idx + 1] ** 2)
        w_grads[idx] = delta.T @ activations[idx]
        b_grads[idx] = delta.sum(axis=0)
        if idx:
            delta = delta @ layer.weights
    return Gradients(w_grads, b_grads)


def _check_finite(grads):
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise TrainingError("non-finite gradient encountered; aborting training")


class SGDMomentum:
    """v <- mu*v + g; p <- p - lr*v."""

    def __init__(self, params, learning_rate=0.1, momentum=0.85):
        self.params = list(params)
        self.lr = learning_rate
        self.momentum = momentum
        self.velocity = [np.zeros_like(p) for p in self.params]

    def step(self, grads):
        _check_finite(grads)
        for p, v, g in zip(self.params, self.velocity, grads):
            v *= self.momentum
            v += g
            p -= self.lr * v


class Adam:
    """Bias-corrected Adam with (beta1, beta2, eps) = (0.9, 0.999, 1e-8)."""

    def __init__(self, params, learning_rate=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.t = 0

    def step(self, grads):
        _check_finite(grads)
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v, g in zip(self.params, self.m, self.v, grads):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class DAdaptSGD:
    """Learning-rate-free SGD via D-Adaptation.

    Keeps a lower-bound estimate d of the distance to the optimum; the step
    size is d/sqrt(sum of squared gradient norms). d only grows, capped at
    doubling per step.
    """

    def __init__(self, params, d0=1e-6, growth_rate=2.0):
        self.params = list(params)
        self.d = d0
        self.growth_rate = growth_rate
        self.grad_sq_sum = 0.0
        self.numerator = 0.0
        self.s = [np.zeros_like(p) for p in self.params]

    def step(self, grads):
        _check_finite(grads)
        self.grad_sq_sum += sum(float(np.vdot(g, g)) for g in grads)
        if self.grad_sq_sum <= 0.0:
            return
        step_size = self.d / np.sqrt(self.grad_sq_sum)
        self.numerator += step_size * sum(
            float(np.vdot(g, s)) for g, s in zip(grads, self.s)
        )
        for p, s, g in zip(self.params, self.s, grads):
            s += step_size * g
            p -= step_size * g
        s_norm = np.sqrt(sum(float(np.vdot(s, s)) for s in self.s))
        if s_norm > 0.0:
            d_hat = 2.0 * self.numerator / s_norm
            self.d = max(self.d, min(d_hat, self.growth_rate * self.d))


OPTIMIZERS = {"sgd": SGDMomentum, "adam": Adam, "dadapt": DAdaptSGD}


def make_optimizer(kind, params, **cfg):
    try:
        cls = OPTIMIZERS[kind]
    except KeyError:
        raise ValueError(f"unknown optimizer {kind!r} (choose from {sorted(OPTIMIZERS)})") from None
    return cls(params, **cfg)


def layer_params(layers):
    """Flat parameter list [W1, b1, W2, b2, ...] viewing the live arrays."""
    out = []
    for layer in layers:
        out.append(layer.weights)
        out.append(layer.biases)
    return out


def grads_as_list(grads):
    out = []
    for w, b in zip(grads.weights, grads.biases):
        out.append(w)
        out.append(b)
    return out


def save_network(layers, path, seed=None):
    """Serialize layers to a CHRONONET1-tagged checkpoint file."""
    payload = {"n_layers": np.array(len(layers))}
    if seed is not None:
        payload["seed"] = np.array(seed)
    for i, layer in enumerate(layers):
        payload[f"w{i}"] = layer.weights
        payload[f"b{i}"] = layer.biases
        payload[f"act{i}"] = np.array(layer.activation)
    buf = io.BytesIO()
    np.savez(buf, **payload)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(buf.getvalue())


def load_network(path):
    """Inverse of save_network; returns (layers, seed-or-None)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not a chrononet checkpoint (bad magic header)")
        data = np.load(io.BytesIO(fh.read()))
    layers = []
    for i in range(int(data["n_layers"])):
        layers.append(
            DenseLayer(data[f"w{i}"], data[f"b{i}"], str(data[f"act{i}"]))
        )
    seed = int(data["seed"]) if "seed" in data else None
    return layers, seed
