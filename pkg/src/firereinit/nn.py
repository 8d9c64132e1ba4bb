"""Minimal feedforward network with hand-written backprop.

Dense weights are stored ``(d_out, d_in)`` and applied as ``H @ W.T + b``.
Hidden layers use ReLU with subgradient 0 at 0. Losses are averaged over the
batch. Hessian-vector products are central differences of gradients taken
with the ReLU gates frozen at the evaluation point, so the product is the
Hessian of the piecewise-linear region the point lies in.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from firereinit.params import CONV, DENSE, Architecture, LayerWeights, NetworkParams
from firereinit.regularizers import RegularizerSpec, regularizer_gradient

LOSS_KINDS = ("cross_entropy", "squared")


def init_network(arch: Architecture, seed: int) -> NetworkParams:
    """He-Gaussian weights (std ``sqrt(2 / fan_in)``), zero biases."""
    rng = np.random.default_rng(seed)
    layers = []
    for spec in arch.layers:
        w = rng.standard_normal(spec.shape) * np.sqrt(2.0 / spec.fan_in)
        b = np.zeros(spec.out_features) if spec.bias else None
        layers.append(LayerWeights(spec.kind, w, b))
    return NetworkParams(arch, layers)


def init_layer(spec, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal(spec.shape) * np.sqrt(2.0 / spec.fan_in)


@dataclass
class ForwardCache:
    """Per-layer inputs ``H[l]`` (``H[0]`` is the batch) and pre-activations ``A[l]``."""

    inputs: list[np.ndarray]
    preacts: list[np.ndarray]
    gates: list[np.ndarray | None]

    @property
    def activations(self) -> list[np.ndarray]:
        """Outputs of every layer with an activation (the hidden features)."""
        return [h for h, g in zip(self.inputs[1:], self.gates) if g is not None]


def _require_dense(params: NetworkParams) -> None:
    for i, lw in enumerate(params.layers):
        if lw.kind == CONV:
            raise ValueError(f"layer {i}: conv layers are not trainable in this network")


def forward(params: NetworkParams, batch, gates: list | None = None) -> tuple[np.ndarray, ForwardCache]:
    """Logits and cached per-layer quantities.

    ``gates`` optionally fixes the ReLU pattern (one boolean array per layer,
    ``None`` for layers without activation) instead of recomputing it.
    """
    _require_dense(params)
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.layers[0].weight.shape[1]:
        raise ValueError(
            f"batch shape {x.shape} does not match input dim {params.layers[0].weight.shape[1]}"
        )
    inputs, preacts, used_gates = [x], [], []
    h = x
    for i, (spec, lw) in enumerate(zip(params.arch.layers, params.layers)):
        a = h @ lw.weight.T
        if lw.bias is not None:
            a = a + lw.bias
        preacts.append(a)
        if spec.activation:
            g = (a > 0) if gates is None else gates[i]
            h = a * g
            used_gates.append(g)
        else:
            h = a
            used_gates.append(None)
        inputs.append(h)
    return h, ForwardCache(inputs, preacts, used_gates)


def _loss_and_dlogits(logits: np.ndarray, labels, loss_kind: str) -> tuple[float, np.ndarray]:
    n, k = logits.shape
    if loss_kind == "cross_entropy":
        y = np.asarray(labels)
        if y.ndim != 1 or y.shape[0] != n:
            raise ValueError(f"cross_entropy needs {n} integer labels, got shape {y.shape}")
        if np.any(y < 0) or np.any(y >= k):
            raise ValueError(f"labels must lie in [0, {k})")
        z = logits - logits.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        idx = np.arange(n)
        loss = -float(np.mean(logp[idx, y]))
        d = np.exp(logp)
        d[idx, y] -= 1.0
        return loss, d / n
    if loss_kind == "squared":
        target = squared_targets(labels, n, k)
        r = logits - target
        return 0.5 * float(np.sum(r * r)) / n, r / n
    raise ValueError(f"unsupported loss kind {loss_kind!r}; choose from {LOSS_KINDS}")


def squared_targets(labels, n: int, k: int) -> np.ndarray:
    """Integer labels become one-hot rows; 2-D float targets pass through."""
    y = np.asarray(labels)
    if y.ndim == 2:
        if y.shape != (n, k):
            raise ValueError(f"targets shape {y.shape} does not match logits {(n, k)}")
        return y.astype(np.float64)
    if y.shape != (n,):
        raise ValueError(f"need {n} labels, got shape {y.shape}")
    if np.any(y < 0) or np.any(y >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    t = np.zeros((n, k))
    t[np.arange(n), y.astype(int)] = 1.0
    return t


def loss(params: NetworkParams, batch, labels, loss_kind: str = "cross_entropy") -> float:
    logits, _ = forward(params, batch)
    return _loss_and_dlogits(logits, labels, loss_kind)[0]


def backward(params: NetworkParams, batch, labels, loss_kind: str = "cross_entropy",
             gates: list | None = None) -> tuple[float, NetworkParams]:
    """Mean loss and its gradient with respect to every weight and bias."""
    logits, cache = forward(params, batch, gates)
    value, d = _loss_and_dlogits(logits, labels, loss_kind)
    grads = [None] * len(params.layers)
    for i in range(len(params.layers) - 1, -1, -1):
        lw = params.layers[i]
        g = cache.gates[i]
        if g is not None:
            d = d * g
        gw = d.T @ cache.inputs[i]
        gb = d.sum(axis=0) if lw.bias is not None else None
        grads[i] = LayerWeights(DENSE, gw, gb)
        if i > 0:
            d = d @ lw.weight
    return value, NetworkParams(params.arch, grads)


def hvp(params: NetworkParams, batch, labels, loss_kind: str, direction: NetworkParams,
        gates: list | None = None) -> NetworkParams:
    """Hessian-vector product by symmetric differences of gradients.

    Step ``h = 1e-4 ||theta|| / ||v||``; gates default to the pattern at
    ``params`` so both gradient evaluations share one linear region.
    """
    theta = params.to_vector()
    v = direction.to_vector()
    if v.size != theta.size:
        raise ValueError("direction does not match parameter shapes")
    v_norm = np.linalg.norm(v)
    if v_norm == 0.0:
        raise ValueError("hvp direction must be nonzero")
    if gates is None:
        gates = forward(params, batch)[1].gates
    t_norm = np.linalg.norm(theta)
    h = 1e-4 * (t_norm if t_norm > 0 else 1.0) / v_norm
    _, gp = backward(params.with_vector(theta + h * v), batch, labels, loss_kind, gates)
    _, gm = backward(params.with_vector(theta - h * v), batch, labels, loss_kind, gates)
    return params.with_vector((gp.to_vector() - gm.to_vector()) / (2.0 * h))


@dataclass
class TrainConfig:
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    warmup_fraction: float = 0.1
    grad_clip: float = 0.5
    batch_size: int = 128
    epochs_per_chunk: int = 50
    seed: int = 0
    regularizer: RegularizerSpec = field(default_factory=RegularizerSpec)
    loss_kind: str = "cross_entropy"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be nonnegative")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs_per_chunk < 1:
            raise ValueError("batch_size and epochs_per_chunk must be positive")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.loss_kind!r}")


@dataclass
class OptimizerState:
    """Adam moments plus the step counter that drives warmup.

    ``total_steps`` is the length of the current chunk's schedule.
    """

    total_steps: int = 1
    step: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None


@dataclass
class StepStats:
    loss: float
    penalty: float
    grad_norm: float
    lr: float


def learning_rate_at(config: TrainConfig, step: int, total_steps: int) -> float:
    """Linear warmup from 0 over the first ``warmup_fraction`` of the schedule."""
    warm = int(np.ceil(config.warmup_fraction * total_steps))
    if warm <= 0 or step >= warm:
        return config.learning_rate
    return config.learning_rate * (step + 1) / warm


def clip_by_global_norm(g: np.ndarray, max_norm: float) -> tuple[np.ndarray, float]:
    norm = float(np.linalg.norm(g))
    if max_norm > 0 and norm > max_norm:
        return g * (max_norm / norm), norm
    return g, norm


def train_step(params: NetworkParams, batch, labels, config: TrainConfig,
               state: OptimizerState, anchor: NetworkParams | None = None
               ) -> tuple[NetworkParams, StepStats]:
    """One optimizer update; ``state`` is advanced in place."""
    value, grad = backward(params, batch, labels, config.loss_kind)
    g = grad.to_vector()
    penalty, rgrad = regularizer_gradient(params, config.regularizer, anchor)
    if rgrad is not None:
        g = g + rgrad.to_vector()
    g, gnorm = clip_by_global_norm(g, config.grad_clip)
    lr = learning_rate_at(config, state.step, state.total_steps)
    theta = params.to_vector()
    if config.optimizer == "sgd":
        theta = theta - lr * g
    else:
        if state.m is None:
            state.m = np.zeros_like(theta)
            state.v = np.zeros_like(theta)
        t = state.step + 1
        state.m = config.beta1 * state.m + (1 - config.beta1) * g
        state.v = config.beta2 * state.v + (1 - config.beta2) * g * g
        m_hat = state.m / (1 - config.beta1 ** t)
        v_hat = state.v / (1 - config.beta2 ** t)
        theta = theta - lr * m_hat / (np.sqrt(v_hat) + config.eps)
    state.step += 1
    return params.with_vector(theta), StepStats(value, penalty, gnorm, lr)


def predict(params: NetworkParams, batch) -> np.ndarray:
    return np.argmax(forward(params, batch)[0], axis=1)


def accuracy(params: NetworkParams, batch, labels) -> float:
    labels = np.asarray(labels)
    if labels.size == 0:
        return float("nan")
    return float(np.mean(predict(params, batch) == labels))
