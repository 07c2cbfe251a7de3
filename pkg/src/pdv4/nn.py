"""Minimal dense feed-forward network with Adam, written on numpy.

Only what the volatility surrogate needs: float64 forward/backward for an
MLP with relu/tanh/linear activations, an RMSE objective, and deterministic
fan-in-scaled initialization from a counter-based stream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError, NumericalError
from .rng import RngStream

_ACTIVATIONS = ("relu", "tanh", "linear")

NET_INPUT_WIDTH = 14  # 10 model parameters + 4 factor values


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths and per-layer activation tags.

    sizes has len(activations)+1 entries; the network maps sizes[0] inputs
    to sizes[-1] outputs.  The surrogate contract pins 14 inputs, 1 output,
    and a linear final layer.
    """

    sizes: tuple[int, ...]
    activations: tuple[str, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        acts = tuple(str(a) for a in self.activations)
        if len(sizes) < 2 or len(acts) != len(sizes) - 1:
            raise InputError("MlpSpec: need one activation per weight layer")
        if any(s < 1 for s in sizes):
            raise InputError("MlpSpec: layer sizes must be positive")
        if any(a not in _ACTIVATIONS for a in acts):
            raise InputError(f"MlpSpec: activations must be among {_ACTIVATIONS}")
        if sizes[0] != NET_INPUT_WIDTH:
            raise InputError(f"MlpSpec: input width must be {NET_INPUT_WIDTH}")
        if sizes[-1] != 1:
            raise InputError("MlpSpec: output width must be 1")
        if acts[-1] != "linear":
            raise InputError("MlpSpec: output activation must be linear")
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "activations", acts)

    @property
    def n_layers(self) -> int:
        return len(self.activations)


def default_mlp_spec() -> MlpSpec:
    """The tuned surrogate architecture."""
    return MlpSpec(
        sizes=(14, 448, 64, 224, 416, 128, 1),
        activations=("tanh", "tanh", "relu", "tanh", "relu", "linear"),
    )


def init_layers(spec: MlpSpec, stream: RngStream) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Symmetric uniform fan-in-scaled weights, zero biases."""
    gen = stream.generator()
    weights, biases = [], []
    for n_in, n_out in zip(spec.sizes[:-1], spec.sizes[1:]):
        limit = 1.0 / np.sqrt(n_in)
        weights.append(gen.uniform(-limit, limit, size=(n_in, n_out)))
        biases.append(np.zeros(n_out))
    return weights, biases


def _apply(act: str, z: np.ndarray) -> np.ndarray:
    if act == "relu":
        return np.maximum(z, 0.0)
    if act == "tanh":
        return np.tanh(z)
    return z


def forward(
    spec: MlpSpec,
    weights: list[np.ndarray],
    biases: list[np.ndarray],
    x: np.ndarray,
) -> np.ndarray:
    """Network output, shape (n,); x is (n, input_width), already standardized."""
    a = np.asarray(x, dtype=float)
    if a.ndim != 2 or a.shape[1] != spec.sizes[0]:
        raise InputError(f"forward: expected (n, {spec.sizes[0]}) inputs")
    for w, b, act in zip(weights, biases, spec.activations):
        a = _apply(act, a @ w + b)
    return a[:, 0]


def rmse_and_gradients(
    spec: MlpSpec,
    weights: list[np.ndarray],
    biases: list[np.ndarray],
    x: np.ndarray,
    y: np.ndarray,
) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Batch RMSE and its exact gradients by backpropagation.

    The objective is the root of the mean square error, so gradient scale
    adapts to the current error level; a perfectly fit batch returns zero
    gradients rather than dividing by zero.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.shape[0]

    acts = [x]
    a = x
    for w, b, act in zip(weights, biases, spec.activations):
        a = _apply(act, a @ w + b)
        acts.append(a)
    resid = acts[-1][:, 0] - y
    mse = float(np.mean(resid * resid))
    rmse = float(np.sqrt(mse))

    grads_w = [np.zeros_like(w) for w in weights]
    grads_b = [np.zeros_like(b) for b in biases]
    if rmse == 0.0:
        return 0.0, grads_w, grads_b

    # d rmse / d output_i = resid_i / (n * rmse)
    delta = (resid / (n * rmse))[:, None]
    for layer in range(spec.n_layers - 1, -1, -1):
        act = spec.activations[layer]
        out = acts[layer + 1]
        if act == "tanh":
            delta = delta * (1.0 - out * out)
        elif act == "relu":
            delta = delta * (out > 0.0)
        grads_w[layer] = acts[layer].T @ delta
        grads_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = delta @ weights[layer].T
    return rmse, grads_w, grads_b


class Adam:
    """Standard Adam with bias correction, updating tensors in place."""

    def __init__(self, weights, biases, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if not lr > 0:
            raise InputError("Adam: learning rate must be positive")
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m_w = [np.zeros_like(w) for w in weights]
        self.v_w = [np.zeros_like(w) for w in weights]
        self.m_b = [np.zeros_like(b) for b in biases]
        self.v_b = [np.zeros_like(b) for b in biases]

    def step(self, weights, biases, grads_w, grads_b) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for tensors, grads, ms, vs in (
            (weights, grads_w, self.m_w, self.v_w),
            (biases, grads_b, self.m_b, self.v_b),
        ):
            for p, g, m, v in zip(tensors, grads, ms, vs):
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * (g * g)
                p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def check_finite(weights, biases, context: str) -> None:
    for arr in (*weights, *biases):
        if not np.all(np.isfinite(arr)):
            raise NumericalError(f"{context}: non-finite network parameters")
