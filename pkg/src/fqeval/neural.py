"""Constrained ReLU networks: sizing, forward/backward passes, fitting.

The function class is parameterized by depth, max width, a total parameter
budget, an entrywise weight bound, and an output bound. Networks are plain
numpy arrays; training is minibatch gradient descent with projection onto
the weight bound after every step.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, KinkError
from .seeding import substream

Array = np.ndarray


@dataclass(frozen=True)
class NetworkClassParams:
    """Budget describing a class of ReLU networks.

    depth counts affine layers, so there are depth - 1 ReLU applications.
    param_budget caps the total number of weight and bias entries.
    Forward outputs are clamped to [0, output_bound].
    """

    depth: int
    width: int
    param_budget: int
    weight_bound: float
    output_bound: float
    input_dim: int

    def __post_init__(self) -> None:
        if self.depth < 1 or self.width < 1 or self.param_budget < 1 or self.input_dim < 1:
            raise ValueError("depth, width, param_budget, input_dim must be positive")
        if self.weight_bound <= 0 or self.output_bound <= 0:
            raise ValueError("weight_bound and output_bound must be positive")


@dataclass(frozen=True)
class TrainConfig:
    """Minibatch gradient descent settings.

    The step size for epoch e is learning_rate * lr_decay**e; the default
    decay of 1 keeps it constant.
    """

    epochs: int = 20
    batch_size: int = 256
    learning_rate: float = 0.01
    optimizer: str = "momentum"  # "gd" or "momentum"
    momentum: float = 0.9
    lr_decay: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("epochs, batch_size must be >= 1 and learning_rate > 0")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ValueError("lr_decay must lie in (0, 1]")
        if self.optimizer not in ("gd", "momentum"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class ReluNetwork:
    """Dense ReLU network whose entries respect the class weight bound.

    weights[l] has shape (fan_out, fan_in); the final layer has one output.
    ``forward`` clamps to [0, output_bound]; ``raw_forward_batch`` exposes
    the unclamped value, which is what training and gradients use.
    """

    weights: list[Array]
    biases: list[Array]
    params: NetworkClassParams

    def copy(self) -> "ReluNetwork":
        return ReluNetwork(
            [w.copy() for w in self.weights], [b.copy() for b in self.biases], self.params
        )

    @property
    def parameter_count(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def raw_forward_batch(self, X: Array) -> Array:
        a = np.asarray(X, dtype=float)
        if a.ndim != 2 or a.shape[1] != self.params.input_dim:
            raise ValueError(f"inputs have shape {a.shape}, expected (n, {self.params.input_dim})")
        last = len(self.weights) - 1
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            a = a @ W.T + b
            if l < last:
                a = np.maximum(a, 0.0)
        return a[:, 0]

    def forward_batch(self, X: Array) -> Array:
        return np.clip(self.raw_forward_batch(X), 0.0, self.params.output_bound)

    def forward(self, x: Array) -> float:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.params.input_dim,):
            raise ValueError(f"input has shape {x.shape}, expected ({self.params.input_dim},)")
        return float(self.forward_batch(x[None, :])[0])


def forward(net: ReluNetwork, x: Array) -> float:
    """Clamped scalar output of the network at x."""
    return net.forward(x)


def _param_count(input_dim: int, depth: int, w: int) -> int:
    if depth == 1:
        return input_dim + 1
    total = input_dim * w + w
    total += (depth - 2) * (w * w + w)
    total += w + 1
    return total


def _budget_width(params: NetworkClassParams) -> int:
    """Largest hidden width within both the width cap and the budget."""
    if params.depth == 1:
        if _param_count(params.input_dim, 1, 0) > params.param_budget:
            raise ConfigurationError(
                f"budget {params.param_budget} cannot hold an affine map on "
                f"{params.input_dim} inputs"
            )
        return 0
    for w in range(params.width, 0, -1):
        if _param_count(params.input_dim, params.depth, w) <= params.param_budget:
            return w
    raise ConfigurationError(
        f"no architecture with depth {params.depth} on {params.input_dim} inputs "
        f"fits budget {params.param_budget}"
    )


def layer_dims(params: NetworkClassParams) -> list[int]:
    """Layer sizes [input_dim, hidden.., 1] actually used under the budget."""
    w = _budget_width(params)
    return [params.input_dim] + [w] * (params.depth - 1) + [1]


def init_network(params: NetworkClassParams, rng: np.random.Generator) -> ReluNetwork:
    """Scaled-uniform initialization projected onto the weight bound."""
    dims = layer_dims(params)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        a = math.sqrt(6.0 / (fan_in + fan_out))
        W = rng.uniform(-a, a, size=(fan_out, fan_in))
        np.clip(W, -params.weight_bound, params.weight_bound, out=W)
        weights.append(W)
        biases.append(np.zeros(fan_out))
    return ReluNetwork(weights=weights, biases=biases, params=params)


def project_constraints(net: ReluNetwork) -> ReluNetwork:
    """Clip every weight and bias entry into [-weight_bound, weight_bound]."""
    out = net.copy()
    _project_inplace(out)
    return out


def _project_inplace(net: ReluNetwork) -> None:
    tau = net.params.weight_bound
    for W in net.weights:
        np.clip(W, -tau, tau, out=W)
    for b in net.biases:
        np.clip(b, -tau, tau, out=b)


def _forward_cache(net: ReluNetwork, X: Array) -> tuple[Array, list[Array], list[Array]]:
    """Raw outputs plus per-layer activations and pre-activations."""
    activations = [np.asarray(X, dtype=float)]
    pre = []
    a = activations[0]
    last = len(net.weights) - 1
    for l, (W, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ W.T + b
        pre.append(z)
        a = np.maximum(z, 0.0) if l < last else z
        activations.append(a)
    return pre[-1][:, 0], activations, pre


def _weighted_grads(
    net: ReluNetwork, activations: list[Array], pre: list[Array], out_weights: Array
) -> tuple[list[Array], list[Array]]:
    """Gradients of sum_k out_weights[k] * raw(x_k) for every parameter."""
    L = len(net.weights)
    gw: list[Array] = [None] * L  # type: ignore[list-item]
    gb: list[Array] = [None] * L  # type: ignore[list-item]
    delta = out_weights[:, None]  # (n, 1)
    for l in range(L - 1, -1, -1):
        gw[l] = delta.T @ activations[l]
        gb[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ net.weights[l]) * (pre[l - 1] > 0)
    return gw, gb


def fit_least_squares(
    net: ReluNetwork, inputs: Array, targets: Array, cfg: TrainConfig
) -> tuple[ReluNetwork, Array]:
    """Minibatch gradient descent on the mean squared error.

    Regresses the unclamped network output on targets in [0, output_bound];
    the inference-time clamp can then only reduce the error. Weights are
    projected onto the bound after every step. Returns the trained network
    and the full-data MSE recorded after each epoch. When batch_size covers
    the whole dataset no shuffling happens, so the result is invariant to
    the order of the rows.
    """
    X = np.asarray(inputs, dtype=float)
    y = np.asarray(targets, dtype=float)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("inputs must be (n, input_dim) with matching targets")
    if len(X) == 0:
        raise ValueError("cannot fit on empty data")
    V = net.params.output_bound
    if y.min() < -1e-9 or y.max() > V + 1e-9:
        raise ValueError(f"targets must lie in [0, {V}]")
    out = net.copy()
    vel_w = [np.zeros_like(W) for W in out.weights]
    vel_b = [np.zeros_like(b) for b in out.biases]
    n = len(X)
    full_batch = cfg.batch_size >= n
    shuffle_rng = substream(cfg.seed, 0)
    losses = np.empty(cfg.epochs)
    for epoch in range(cfg.epochs):
        lr = cfg.learning_rate * cfg.lr_decay**epoch
        order = np.arange(n) if full_batch else shuffle_rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            preds, acts, pre = _forward_cache(out, X[idx])
            out_w = 2.0 * (preds - y[idx]) / len(idx)
            gw, gb = _weighted_grads(out, acts, pre, out_w)
            for l in range(len(out.weights)):
                if cfg.optimizer == "momentum":
                    vel_w[l] = cfg.momentum * vel_w[l] - lr * gw[l]
                    vel_b[l] = cfg.momentum * vel_b[l] - lr * gb[l]
                    out.weights[l] += vel_w[l]
                    out.biases[l] += vel_b[l]
                else:
                    out.weights[l] -= lr * gw[l]
                    out.biases[l] -= lr * gb[l]
            _project_inplace(out)
        resid = out.raw_forward_batch(X) - y
        losses[epoch] = float(np.mean(resid**2))
    return out, losses


def grad_check(net: ReluNetwork, x: Array, y: float, step: float = 1e-5, kink_tol: float = 1e-3) -> float:
    """Max relative error between analytic and central-difference gradients.

    The loss is the squared error of the raw output at a single point.
    Raises KinkError when any hidden pre-activation is within kink_tol of a
    ReLU kink; callers should resample the point.
    """
    x = np.asarray(x, dtype=float)
    preds, acts, pre = _forward_cache(net, x[None, :])
    for z in pre[:-1]:
        if np.any(np.abs(z) <= kink_tol):
            raise KinkError("evaluation point too close to a ReLU kink")
    out_w = np.array([2.0 * (preds[0] - y)])
    gw, gb = _weighted_grads(net, acts, pre, out_w)

    def loss_with(weights: list[Array], biases: list[Array]) -> float:
        probe = ReluNetwork(weights, biases, net.params)
        f = probe.raw_forward_batch(x[None, :])[0]
        return (f - y) ** 2

    worst = 0.0
    for l in range(len(net.weights)):
        for arr, g in ((net.weights[l], gw[l]), (net.biases[l], gb[l])):
            flat = arr.reshape(-1)
            gflat = g.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                up = loss_with(net.weights, net.biases)
                flat[i] = orig - step
                down = loss_with(net.weights, net.biases)
                flat[i] = orig
                fd = (up - down) / (2.0 * step)
                rel = abs(gflat[i] - fd) / max(1e-8, abs(fd))
                worst = max(worst, rel)
    return worst


def sample_safe_input(
    net: ReluNetwork,
    rng: np.random.Generator,
    low: float = -1.0,
    high: float = 1.0,
    kink_tol: float = 1e-3,
    max_tries: int = 500,
) -> Array:
    """Draw an input whose hidden pre-activations avoid all ReLU kinks."""
    for _ in range(max_tries):
        x = rng.uniform(low, high, size=net.params.input_dim)
        _, _, pre = _forward_cache(net, x[None, :])
        if all(np.all(np.abs(z) > kink_tol) for z in pre[:-1]):
            return x
    raise RuntimeError("could not find a kink-free input")


def schedule_class_params(
    sample_count: int,
    smoothness: float,
    intrinsic_dim: int,
    bound_sup: float,
    horizon: int,
    reach: float,
    input_dim: int,
    c_depth: float = 1.0,
    c_width: float = 1.0,
    c_budget: float = 1.0,
) -> NetworkClassParams:
    """Network class sized from the sample count and problem constants.

    depth ~ log K, width ~ K^(d / (2a + d)), budget ~ width * log K, the
    weight bound is max(B, H, sqrt(d), reach^2), and the output bound is H.
    The c_* constants rescale depth, width, and budget.
    """
    if sample_count < 2:
        raise ValueError(f"sample_count must be >= 2, got {sample_count}")
    if smoothness <= 0 or intrinsic_dim < 1:
        raise ValueError("smoothness must be positive and intrinsic_dim >= 1")
    if min(c_depth, c_width, c_budget) <= 0:
        raise ValueError("schedule constants must be positive")
    log_k = math.log(sample_count)
    growth = sample_count ** (intrinsic_dim / (2.0 * smoothness + intrinsic_dim))
    return NetworkClassParams(
        depth=math.ceil(c_depth * log_k),
        width=math.ceil(c_width * growth),
        param_budget=math.ceil(c_budget * growth * log_k),
        weight_bound=max(bound_sup, float(horizon), math.sqrt(intrinsic_dim), reach**2),
        output_bound=float(horizon),
        input_dim=input_dim,
    )


def widen(params: NetworkClassParams, extra: int = 1) -> NetworkClassParams:
    """Same class with ``extra`` more width units and budget headroom."""
    per_unit = params.input_dim + params.width * max(params.depth - 2, 0) * 2 + 2
    return replace(
        params,
        width=params.width + extra,
        param_budget=params.param_budget + extra * (per_unit + params.width + 2),
    )


_NET_MAGIC = b"FQNN"


def save_network(net: ReluNetwork, path: str | Path) -> None:
    """Checkpoint: header (depth, dims, bounds, budget) then float64 arrays."""
    dims = [net.params.input_dim] + [W.shape[0] for W in net.weights]
    with open(path, "wb") as f:
        f.write(_NET_MAGIC)
        f.write(struct.pack("<qq", len(net.weights), len(dims)))
        f.write(np.asarray(dims, dtype=np.int64).tobytes())
        f.write(
            struct.pack(
                "<ddqq",
                net.params.weight_bound,
                net.params.output_bound,
                net.params.width,
                net.params.param_budget,
            )
        )
        for W, b in zip(net.weights, net.biases):
            f.write(np.ascontiguousarray(W, dtype=np.float64).tobytes())
            f.write(np.ascontiguousarray(b, dtype=np.float64).tobytes())


def load_network(path: str | Path) -> ReluNetwork:
    with open(path, "rb") as f:
        if f.read(4) != _NET_MAGIC:
            raise ValueError(f"not a network checkpoint: {path}")
        depth, ndims = struct.unpack("<qq", f.read(16))
        dims = np.frombuffer(f.read(8 * ndims), dtype=np.int64).tolist()
        tau, V, width, budget = struct.unpack("<ddqq", f.read(32))
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            W = np.frombuffer(f.read(8 * fan_in * fan_out), dtype=np.float64)
            weights.append(W.reshape(fan_out, fan_in).copy())
            biases.append(np.frombuffer(f.read(8 * fan_out), dtype=np.float64).copy())
    params = NetworkClassParams(
        depth=int(depth),
        width=int(width),
        param_budget=int(budget),
        weight_bound=tau,
        output_bound=V,
        input_dim=int(dims[0]),
    )
    return ReluNetwork(weights=weights, biases=biases, params=params)
