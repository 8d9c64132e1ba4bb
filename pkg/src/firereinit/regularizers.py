"""Training-time penalties: L2 Init and Parseval regularization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from firereinit.linalg import as_matrix
from firereinit.params import NetworkParams, check_same_architecture

REGULARIZER_KINDS = ("none", "l2_init", "parseval")


@dataclass(frozen=True)
class RegularizerSpec:
    kind: str = "none"
    strength: float = 0.0
    parseval_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in REGULARIZER_KINDS:
            raise ValueError(f"unknown regularizer {self.kind!r}; choose from {REGULARIZER_KINDS}")
        if self.strength < 0:
            raise ValueError("regularizer strength must be nonnegative")
        if self.parseval_scale <= 0:
            raise ValueError("parseval_scale must be positive")


def l2_init_gradient(theta: NetworkParams, theta0: NetworkParams,
                     strength: float) -> tuple[float, NetworkParams]:
    """Penalty ``strength * sum ||W - W0||_F^2`` over weight matrices and its gradient.

    Biases get a zero gradient; the penalty only involves weights.
    """
    check_same_architecture(theta, theta0)
    grad = theta.zeros_like()
    penalty = 0.0
    for g, w, w0 in zip(grad.layers, theta.layers, theta0.layers):
        diff = w.weight - w0.weight
        penalty += float(np.sum(diff * diff))
        g.weight[...] = 2.0 * strength * diff
    return strength * penalty, grad


def parseval_gradient(w, strength: float, s: float = 1.0) -> tuple[float, np.ndarray]:
    """Penalty ``strength * ||W W^T - s I||_F^2`` and its gradient ``4 strength (W W^T - s I) W``."""
    if s <= 0:
        raise ValueError("parseval scale s must be positive")
    w = as_matrix(w, name="w")
    dev = w @ w.T - s * np.eye(w.shape[0])
    return strength * float(np.sum(dev * dev)), 4.0 * strength * (dev @ w)


def regularizer_gradient(params: NetworkParams, spec: RegularizerSpec,
                         anchor: NetworkParams | None = None) -> tuple[float, NetworkParams | None]:
    """Total penalty and gradient for ``spec``; ``(0.0, None)`` when inactive."""
    if spec.kind == "none" or spec.strength == 0.0:
        return 0.0, None
    if spec.kind == "l2_init":
        if anchor is None:
            raise ValueError("l2_init needs the anchor (initial) parameters")
        return l2_init_gradient(params, anchor, spec.strength)
    grad = params.zeros_like()
    total = 0.0
    for g, lw in zip(grad.layers, params.layers):
        mat = lw.weight.reshape(lw.weight.shape[0], -1)
        pen, gw = parseval_gradient(mat, spec.strength, spec.parseval_scale)
        total += pen
        g.weight[...] = gw.reshape(lw.weight.shape)
    return total, grad
