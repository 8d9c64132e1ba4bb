"""Reference reinitializers the orthogonalizing reset is compared against.

Full reset, Shrink & Perturb and ReDo act at chunk boundaries; the L2 Init
and Parseval penalties live in :mod:`firereinit.regularizers` and are
re-exported here.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from firereinit.metrics import empirical_activity_scores
from firereinit.nn import init_layer, init_network
from firereinit.orthogonalize import CUBIC, NsCoefficients, fire_network
from firereinit.params import Architecture, NetworkParams, check_same_architecture
from firereinit.regularizers import (  # noqa: F401  (re-exported)
    RegularizerSpec,
    l2_init_gradient,
    parseval_gradient,
    regularizer_gradient,
)

REINIT_METHODS = ("none", "fire", "full_reset", "shrink_perturb", "redo")


@dataclass(frozen=True)
class ReinitSpec:
    method: str = "none"
    lam: float = 0.8
    iters: int = 10
    tau: float = 0.1
    seed: int = 0
    coeffs: str = "cubic"

    def __post_init__(self):
        if self.method not in REINIT_METHODS:
            raise ValueError(f"unknown reinit method {self.method!r}; choose from {REINIT_METHODS}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if not 0.0 <= self.tau < 1.0:
            raise ValueError("tau must lie in [0, 1)")
        if self.method == "fire" and self.iters < 1:
            raise ValueError("fire needs iters >= 1")
        NsCoefficients.from_name(self.coeffs)


def full_reset(arch: Architecture, seed: int) -> NetworkParams:
    return init_network(arch, seed)


def shrink_perturb(theta: NetworkParams, theta0: NetworkParams, lam: float) -> NetworkParams:
    """``(1 - lam) * theta + lam * theta0`` for every weight and bias."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    check_same_architecture(theta, theta0)
    if lam == 0.0:
        return theta.copy()
    if lam == 1.0:
        return theta0.copy()
    return theta.with_vector((1.0 - lam) * theta.to_vector() + lam * theta0.to_vector())


def redo_reset(params: NetworkParams, activations: Sequence[np.ndarray | None], tau: float,
               seed: int) -> NetworkParams:
    """Recycle hidden units whose empirical activity score is below ``tau``.

    ``activations[l]`` holds layer ``l``'s outputs on a data batch (``None``
    for layers without an activation, which are never recycled). A recycled
    unit gets a fresh He-initialized incoming row and zero bias; its outgoing
    column in the next layer is zeroed so the network output is unchanged by
    the new weights.
    """
    if len(activations) != len(params.layers):
        raise ValueError(
            f"need activation stats for all {len(params.layers)} layers, got {len(activations)}"
        )
    rng = np.random.default_rng(seed)
    out = params.copy()
    for i, spec in enumerate(params.arch.layers):
        acts = activations[i]
        if not spec.activation or i == len(params.layers) - 1:
            continue
        if acts is None:
            raise ValueError(f"layer {i}: missing activation statistics")
        scores = empirical_activity_scores(acts)
        dead = np.flatnonzero(scores < tau)
        if dead.size == 0:
            continue
        fresh = init_layer(spec, rng)
        lw = out.layers[i]
        lw.weight[dead] = fresh[dead]
        if lw.bias is not None:
            lw.bias[dead] = 0.0
        out.layers[i + 1].weight[:, dead] = 0.0
    return out


def apply_reinit(params: NetworkParams, spec: ReinitSpec, event_seed: int,
                 activations: Sequence[np.ndarray | None] | None = None) -> NetworkParams:
    """Dispatch one reinitialization event.

    ``event_seed`` seeds every random draw the method makes, so a chunk
    boundary is reproducible in isolation.
    """
    if spec.method == "none":
        return params.copy()
    if spec.method == "fire":
        return fire_network(params, spec.iters, NsCoefficients.from_name(spec.coeffs))
    if spec.method == "full_reset":
        return full_reset(params.arch, event_seed)
    if spec.method == "shrink_perturb":
        return shrink_perturb(params, init_network(params.arch, event_seed), spec.lam)
    if activations is None:
        raise ValueError("redo needs activation statistics")
    return redo_reset(params, activations, spec.tau, event_seed)


__all__ = [
    "CUBIC",
    "REINIT_METHODS",
    "RegularizerSpec",
    "ReinitSpec",
    "apply_reinit",
    "full_reset",
    "l2_init_gradient",
    "parseval_gradient",
    "redo_reset",
    "regularizer_gradient",
    "shrink_perturb",
]
