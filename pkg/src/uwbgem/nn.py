"""A small fully connected network with hand-written backpropagation.

Everything runs in float64. ``forward`` accepts a single input vector or a
batch with one example per row; ``backward`` mirrors the shape.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InvalidStateError, ShapeError

ACTIVATIONS = ("relu", "identity")


@dataclass
class Layer:
    weights: np.ndarray  # (out, in)
    biases: np.ndarray  # (out,)
    activation: str = "relu"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 2 or self.biases.shape != (self.weights.shape[0],):
            raise ShapeError("layer needs weights (out, in) and biases (out,)")


@dataclass
class Mlp:
    layers: list
    version: int = field(default=0, compare=False)

    def __post_init__(self):
        if not self.layers:
            raise ValueError("an Mlp needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if b.weights.shape[1] != a.weights.shape[0]:
                raise ShapeError("adjacent layer dimensions do not chain")

    @property
    def input_dim(self) -> int:
        return self.layers[0].weights.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weights.shape[0]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.weights, layer.biases]
        return out

    def copy(self) -> "Mlp":
        return Mlp([Layer(l.weights.copy(), l.biases.copy(), l.activation) for l in self.layers])

    def __eq__(self, other):
        if not isinstance(other, Mlp) or len(self.layers) != len(other.layers):
            return False
        return all(
            a.activation == b.activation
            and np.array_equal(a.weights, b.weights)
            and np.array_equal(a.biases, b.biases)
            for a, b in zip(self.layers, other.layers)
        )


@dataclass
class Gradients:
    weights: list
    biases: list

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @classmethod
    def zeros_like(cls, mlp: Mlp) -> "Gradients":
        return cls([np.zeros_like(l.weights) for l in mlp.layers], [np.zeros_like(l.biases) for l in mlp.layers])


@dataclass
class Cache:
    mlp_id: int
    version: int
    batched: bool
    inputs: list  # input to each layer, (B, in)
    pre: list  # pre-activation of each layer, (B, out)


def init_mlp(sizes: Sequence[int], rng: np.random.Generator, hidden_activation: str = "relu",
             output_activation: str = "identity", zero_output: bool = False) -> Mlp:
    """He-uniform weights, zero biases.

    ``sizes`` lists layer widths including input and output, e.g. ``[152, 64, 32, 2]``.
    """
    if len(sizes) < 2:
        raise ValueError("need at least input and output sizes")
    layers = []
    n = len(sizes) - 1
    for i, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
        last = i == n - 1
        limit = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        if last and zero_output:
            w = np.zeros((fan_out, fan_in))
        layers.append(Layer(w, np.zeros(fan_out), output_activation if last else hidden_activation))
    return Mlp(layers)


def _act(z, kind):
    return np.maximum(z, 0.0) if kind == "relu" else z


def forward(mlp: Mlp, x: np.ndarray):
    """Return ``(output, cache)``; ``x`` is ``(in,)`` or ``(batch, in)``."""
    x = np.asarray(x, dtype=np.float64)
    batched = x.ndim == 2
    a = np.atleast_2d(x)
    if x.ndim not in (1, 2) or a.shape[1] != mlp.input_dim:
        raise ShapeError(f"expected input of length {mlp.input_dim}, got shape {x.shape}")
    inputs, pre = [], []
    for layer in mlp.layers:
        inputs.append(a)
        z = a @ layer.weights.T + layer.biases
        pre.append(z)
        a = _act(z, layer.activation)
    cache = Cache(id(mlp), mlp.version, batched, inputs, pre)
    return (a if batched else a[0]), cache


def backward(mlp: Mlp, cache: Cache, output_grad: np.ndarray):
    """Reverse-mode pass: returns ``(Gradients, input_grad)``.

    Parameter gradients are summed over the batch; ``output_grad`` should
    already carry any 1/batch factor of the loss.
    """
    if cache.mlp_id != id(mlp) or cache.version != mlp.version or len(cache.pre) != len(mlp.layers):
        raise InvalidStateError("cache does not belong to this network state")
    g = np.asarray(output_grad, dtype=np.float64)
    g = g if cache.batched else g[None, :]
    if g.shape != cache.pre[-1].shape:
        raise ShapeError(f"output_grad shape {g.shape} does not match output {cache.pre[-1].shape}")
    dws, dbs = [], []
    for layer, a_in, z in zip(reversed(mlp.layers), reversed(cache.inputs), reversed(cache.pre)):
        if layer.activation == "relu":
            g = g * (z > 0)
        dws.append(g.T @ a_in)
        dbs.append(g.sum(axis=0))
        g = g @ layer.weights
    grads = Gradients(dws[::-1], dbs[::-1])
    return grads, (g if cache.batched else g[0])


def softmax(logits: np.ndarray) -> np.ndarray:
    """Max-subtracted softmax over the last axis."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(probs: np.ndarray, grad_probs: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. logits given the gradient w.r.t. softmax output."""
    return probs * (grad_probs - np.sum(grad_probs * probs, axis=-1, keepdims=True))


# ---------------------------------------------------------------------------
# optimizers

@dataclass
class OptimizerState:
    kind: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: Optional[list] = None
    v: Optional[list] = None
    t: int = 0

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.kind!r}")


def step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: OptimizerState) -> None:
    """Update ``params`` in place from ``grads``; advances ``state``."""
    if len(params) != len(grads) or any(p.shape != g.shape for p, g in zip(params, grads)):
        raise ShapeError("parameters and gradients are not shape-congruent")
    lr = state.learning_rate
    if state.kind == "sgd":
        for p, g in zip(params, grads):
            p -= lr * g
        return
    if state.m is None:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    elif any(m.shape != p.shape for m, p in zip(state.m, params)) or len(state.m) != len(params):
        raise ShapeError("optimizer moments do not match parameters")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def step_mlp(mlp: Mlp, grads: Gradients, state: OptimizerState) -> None:
    step(mlp.parameters(), grads.arrays(), state)
    mlp.version += 1


# ---------------------------------------------------------------------------
# gradient verification

def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def numeric_gradient(f: Callable[[], float], params: Sequence[np.ndarray], eps: float) -> list[np.ndarray]:
    """Central differences of ``f()`` w.r.t. every entry of ``params`` (perturbed in place)."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    out = []
    for p in params:
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            up = f()
            flat[j] = orig - eps
            down = f()
            flat[j] = orig
            gflat[j] = (up - down) / (2.0 * eps)
        out.append(g)
    return out


def grad_check(mlp: Mlp, x: np.ndarray, loss_fn: Callable, eps: float = 1e-5) -> float:
    """Max relative error between backprop and central differences.

    ``loss_fn(output)`` returns ``(loss, dloss/doutput)``.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    out, cache = forward(mlp, x)
    _, g_out = loss_fn(out)
    grads, _ = backward(mlp, cache, g_out)

    def f():
        return loss_fn(forward(mlp, x)[0])[0]

    numeric = numeric_gradient(f, mlp.parameters(), eps)
    return max(relative_error(a, n) for a, n in zip(grads.arrays(), numeric))


# ---------------------------------------------------------------------------
# checkpoints

def mlp_to_dict(mlp: Mlp) -> dict:
    return {
        "layers": [
            {
                "activation": l.activation,
                "shape": list(l.weights.shape),
                "weights": [float(v) for v in l.weights.ravel()],
                "biases": [float(v) for v in l.biases],
            }
            for l in mlp.layers
        ]
    }


def mlp_from_dict(d: dict) -> Mlp:
    layers = []
    for entry in d["layers"]:
        shape = tuple(entry["shape"])
        w = np.array(entry["weights"], dtype=np.float64)
        if w.size != shape[0] * shape[1]:
            raise ShapeError("checkpoint weight count does not match its shape")
        layers.append(Layer(w.reshape(shape), np.array(entry["biases"], dtype=np.float64), entry["activation"]))
    return Mlp(layers)


def save_mlp(mlp: Mlp, path) -> None:
    Path(path).write_text(json.dumps({"format": "uwbgem.mlp/1", **mlp_to_dict(mlp)}))


def load_mlp(path) -> Mlp:
    return mlp_from_dict(json.loads(Path(path).read_text()))
