"""Complementary learner: relay-augmented input transform and a bias-free-output MLP.

Layers follow ``h0 = x``, ``h_l = act(W_{l-1} h_{l-1} + b_l)`` for the hidden
layers and ``out = W_L h_L`` with no output bias. Backprop is written out for
this architecture only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels
from .signals import Trajectory

FORMAT_VERSION = 1
N_FEATURES = 4
DEFAULT_LAYER_SIZES = (4, 30, 30, 1)


class ShapeError(ValueError):
    pass


# activation, derivative expressed through the activation output
_ACTIVATIONS = {
    "tanh": (np.tanh, lambda h, z: 1.0 - np.square(h)),
    "sigmoid": (lambda z: 0.5 * (1.0 + np.tanh(0.5 * z)), lambda h, z: h * (1.0 - h)),
    "relu": (lambda z: np.maximum(z, 0.0), lambda h, z: (z > 0).astype(np.float64)),
    "linear": (lambda z: z, lambda h, z: np.ones_like(z)),
}


@dataclass(frozen=True)
class RelayState:
    last_output: float = 0.0

    def __post_init__(self):
        if self.last_output not in (-1.0, 0.0, 1.0):
            raise ValueError(f"relay state must be -1, 0 or 1, got {self.last_output}")


def relay_step(x: float, state: RelayState, deadband: float = 0.0):
    """Sign with memory: +1 above, -1 below, previous output at zero."""
    x = float(x)
    if not np.isfinite(x):
        raise ValueError(f"non-finite relay input {x}")
    if x > deadband:
        out = 1.0
    elif x < -deadband:
        out = -1.0
    else:
        out = state.last_output
    return out, RelayState(out)


def relay(x, deadband: float = 0.0, initial: float = 0.0) -> np.ndarray:
    return _kernels.relay_scan(np.asarray(x, dtype=np.float64), float(deadband), float(initial))


def transform(traj: Trajectory, deadband: float = 0.0) -> np.ndarray:
    """N x 4 features ``[angle, velocity, acceleration, relay(velocity)]``."""
    return np.column_stack([traj.theta_d, traj.theta_d_dot, traj.theta_d_ddot,
                            relay(traj.theta_d_dot, deadband)])


@dataclass
class Normalization:
    """Affine input scaling; the relay column passes through unchanged."""

    mean: np.ndarray = field(default_factory=lambda: np.zeros(N_FEATURES))
    scale: np.ndarray = field(default_factory=lambda: np.ones(N_FEATURES))

    @classmethod
    def fit(cls, features: np.ndarray) -> "Normalization":
        mean = features.mean(axis=0)
        scale = features.std(axis=0)
        scale[scale < 1e-12] = 1.0
        mean[3], scale[3] = 0.0, 1.0
        return cls(mean, scale)

    def apply(self, features: np.ndarray) -> np.ndarray:
        return (features - self.mean) / self.scale


@dataclass
class MLPParams:
    weights: list  # W0 (n1 x 4) ... WL (1 x nL)
    biases: list   # b1 ... bL, hidden layers only
    activation: str = "tanh"
    norm: Normalization = field(default_factory=Normalization)

    def __post_init__(self):
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.biases) + 1:
            raise ShapeError("need exactly one more weight matrix than bias vectors")
        if self.weights[-1].shape[0] != 1:
            raise ShapeError("output layer must have a single row")
        prev = self.weights[0].shape[1]
        for l, w in enumerate(self.weights):
            if w.ndim != 2 or w.shape[1] != prev:
                raise ShapeError(f"layer {l}: weight shape {w.shape} does not chain from {prev}")
            if l < len(self.biases) and self.biases[l].shape != (w.shape[0],):
                raise ShapeError(f"layer {l}: bias shape {self.biases[l].shape} != ({w.shape[0]},)")
            prev = w.shape[0]

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def flat(self) -> np.ndarray:
        return np.concatenate([w.ravel() for w in self.weights] + [b.ravel() for b in self.biases])

    def with_flat(self, v: np.ndarray) -> "MLPParams":
        ws, bs, i = [], [], 0
        for w in self.weights:
            ws.append(v[i:i + w.size].reshape(w.shape).copy())
            i += w.size
        for b in self.biases:
            bs.append(v[i:i + b.size].copy())
            i += b.size
        return MLPParams(ws, bs, self.activation, self.norm)

    def scaled(self, alpha: float) -> "MLPParams":
        return MLPParams([alpha * w for w in self.weights], [alpha * b for b in self.biases],
                         self.activation, self.norm)

    def copy(self) -> "MLPParams":
        return self.with_flat(self.flat())

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "layer_sizes": self.layer_sizes,
            "activation": self.activation,
            "normalization": {"mean": self.norm.mean.tolist(), "scale": self.norm.scale.tolist()},
            "weights": [w.ravel(order="C").tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MLPParams":
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format_version {d.get('format_version')}")
        sizes = d["layer_sizes"]
        ws = [np.array(w, dtype=np.float64).reshape(sizes[i + 1], sizes[i])
              for i, w in enumerate(d["weights"])]
        bs = [np.array(b, dtype=np.float64) for b in d["biases"]]
        nd = d["normalization"]
        return cls(ws, bs, d["activation"], Normalization(np.array(nd["mean"]), np.array(nd["scale"])))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "MLPParams":
        return cls.from_dict(json.loads(Path(path).read_text()))


def init_params(layer_sizes: Sequence[int] = DEFAULT_LAYER_SIZES, seed: int = 0,
                activation: str = "tanh") -> MLPParams:
    """Glorot-uniform weights, zero biases."""
    sizes = list(layer_sizes)
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ValueError(f"layer sizes must all be >= 1, got {sizes}")
    if sizes[-1] != 1:
        raise ValueError("network output must be scalar")
    rng = np.random.default_rng(seed)
    ws, bs = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        lim = np.sqrt(6.0 / (n_in + n_out))
        ws.append(rng.uniform(-lim, lim, size=(n_out, n_in)))
    for n_out in sizes[1:-1]:
        bs.append(np.zeros(n_out))
    return MLPParams(ws, bs, activation)


def forward_cache(params: MLPParams, xs):
    """Network output plus the per-layer activations ``backward`` can reuse."""
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    if xs.shape[1] != params.weights[0].shape[1]:
        raise ShapeError(f"features have {xs.shape[1]} columns, network expects "
                         f"{params.weights[0].shape[1]}")
    act, _ = _ACTIVATIONS[params.activation]
    h = params.norm.apply(xs)
    hs, zs = [h], []
    for w, b in zip(params.weights[:-1], params.biases):
        z = h @ w.T
        z += b
        h = act(z)
        zs.append(z)
        hs.append(h)
    out = h @ params.weights[-1][0]
    return out, (hs, zs)


def forward_batch(params: MLPParams, xs) -> np.ndarray:
    xs = np.asarray(xs, dtype=np.float64)
    if xs.size == 0:
        return np.zeros(0)
    return forward_cache(params, xs)[0]


def forward(params: MLPParams, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.weights[0].shape[1],):
        raise ShapeError(f"feature vector shape {x.shape} does not match the network input")
    return float(forward_cache(params, x[None, :])[0][0])


def backward(params: MLPParams, xs, cotangent, cache=None) -> MLPParams:
    """Gradient of ``sum_k cotangent[k] * g(xs[k])`` in the same layout as ``params``."""
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    cot = np.asarray(cotangent, dtype=np.float64).ravel()
    if cot.shape[0] != xs.shape[0]:
        raise ShapeError(f"cotangent length {cot.shape[0]} != batch size {xs.shape[0]}")
    _, dact = _ACTIVATIONS[params.activation]
    hs, zs = forward_cache(params, xs)[1] if cache is None else cache
    n_hidden = len(params.biases)
    gw = [None] * (n_hidden + 1)
    gb = [None] * n_hidden
    gw[-1] = (cot @ hs[-1])[None, :]
    delta = np.multiply.outer(cot, params.weights[-1][0])  # dL/dh_L
    for l in range(n_hidden - 1, -1, -1):
        delta *= dact(hs[l + 1], zs[l])  # dL/dz_l
        gw[l] = delta.T @ hs[l]
        gb[l] = delta.sum(axis=0)
        if l > 0:
            delta = delta @ params.weights[l]
    return MLPParams(gw, gb, params.activation, params.norm)
