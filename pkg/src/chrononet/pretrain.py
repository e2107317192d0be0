"""Greedy layer-wise pretraining of the encoder stack.

Each stage trains a shallow autoencoder (tanh encoder, identity decoder) on
the previous stage's hidden output, full batch, MSE. The final 2-unit code
layer uses an identity activation so the (s, c) pair feeding atan2 is
unbounded. Initial per-protein cosinor parameters come from the closed-form
fit at the initial phases.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .cosinor import CosinorParams, fit_cosinor_batch
from .tensornet import (
    DenseLayer,
    TrainingError,
    backward,
    forward,
    grads_as_list,
    layer_params,
    make_optimizer,
    xavier_init,
)

TWO_PI = 2.0 * math.pi


@dataclass
class PretrainConfig:
    first_epochs: int = 7
    last_epochs: int = 20
    optimizer: str = "dadapt"
    optimizer_options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.first_epochs < 1 or self.last_epochs < 1:
            raise ValueError("epoch counts must be >= 1")


@dataclass
class EncoderStack:
    layers: list
    layer_sizes: list

    def encode(self, values):
        return forward(self.layers, values)[-1]


@dataclass
class InitialPhaseResult:
    phi0: np.ndarray
    code: np.ndarray


def plan_layer_sizes(n_features):
    """Power-of-two ladder from 2^floor(log2 n) down to 2, at most 6 stages.

    The exponent range is split into near-equal integer drops, larger drops
    first, so e.g. 500 features give [256, 64, 16, 8, 4, 2]. Narrow inputs
    yield a shorter ladder ([16, 8, 4, 2] for 16 features).
    """
    if n_features < 4:
        raise ValueError(f"need at least 4 features, got {n_features}")
    top = int(math.floor(math.log2(n_features)))
    n_stages = min(6, top)
    steps = n_stages - 1
    total_drop = top - 1
    base, rem = divmod(total_drop, steps)
    drops = [base + 1] * rem + [base] * (steps - rem)
    exponents = [top]
    for d in drops:
        exponents.append(exponents[-1] - d)
    return [2**e for e in exponents]


def train_shallow_ae(
    inputs,
    hidden_dim,
    epochs,
    optimizer="dadapt",
    optimizer_options=None,
    seed=0,
    code_activation="tanh",
):
    """Train one encoder/decoder pair on full-batch MSE; decoder is discarded.

    Returns (encoder, hidden_output, loss_history). hidden_dim may equal the
    input dim (width-preserving first stage when n is an exact power of two)
    but never exceed it.
    """
    inputs = np.asarray(inputs, dtype=float)
    m, d = inputs.shape
    if hidden_dim > d:
        raise ValueError(f"hidden_dim {hidden_dim} exceeds input dim {d}")
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    enc_seed, dec_seed = seq.spawn(2)
    encoder = xavier_init(d, hidden_dim, np.random.default_rng(enc_seed), code_activation)
    decoder = xavier_init(hidden_dim, d, np.random.default_rng(dec_seed), "identity")
    layers = [encoder, decoder]
    opt = make_optimizer(optimizer, layer_params(layers), **(optimizer_options or {}))
    history = []
    scale = 1.0 / (m * d)
    for _ in range(epochs):
        acts = forward(layers, inputs)
        err = acts[-1] - inputs
        loss = float((err * err).sum() * scale)
        if not np.isfinite(loss):
            raise TrainingError("autoencoder loss became non-finite")
        history.append(loss)
        grads = backward(layers, acts, 2.0 * scale * err)
        opt.step(grads_as_list(grads))
    return encoder, encoder(inputs), history


def code_to_phases(code):
    """phi = atan2(s, c) mod 2pi for code rows (s, c)."""
    s, c = code[:, 0], code[:, 1]
    dead = (s * s + c * c) < 1e-24
    if dead.any():
        warnings.warn(f"{int(dead.sum())} sample code(s) at the origin; phase set to 0")
    phi = np.arctan2(s, c) % TWO_PI
    phi[phi >= TWO_PI] = 0.0
    return phi


def pretrain_stack(data, cfg=None, seed=0):
    """Run the greedy ladder over a NormalizedMatrix.

    Returns (EncoderStack, InitialPhaseResult, per-stage loss histories).
    All stages use cfg.first_epochs except the last (cfg.last_epochs).
    """
    cfg = cfg or PretrainConfig()
    sizes = plan_layer_sizes(data.n_proteins)
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    stage_seeds = root.spawn(len(sizes))
    current = data.values
    encoders = []
    histories = []
    for k, hidden in enumerate(sizes):
        last = k == len(sizes) - 1
        encoder, current, history = train_shallow_ae(
            current,
            hidden,
            cfg.last_epochs if last else cfg.first_epochs,
            optimizer=cfg.optimizer,
            optimizer_options=cfg.optimizer_options,
            seed=stage_seeds[k],
            code_activation="identity" if last else "tanh",
        )
        encoders.append(encoder)
        histories.append(history)
    code = current
    stack = EncoderStack(encoders, sizes)
    return stack, InitialPhaseResult(code_to_phases(code), code), histories


def initial_cosinor(data, phi0):
    """Closed-form per-protein cosinor seeds at fixed omega=1 (24 h)."""
    L, A, phi, _, _, _ = fit_cosinor_batch(data.values, phi0, omega=1.0)
    return [
        CosinorParams(float(L[j]), float(A[j]), float(phi[j]), 1.0)
        for j in range(data.n_proteins)
    ]
