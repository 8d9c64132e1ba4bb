"""Newton-Schulz orthogonalization and its per-layer application (FIRE).

The iteration starts from ``X0 = W / ||W||_F`` (all singular values in
``(0, 1]``) and repeatedly applies an odd matrix polynomial whose scalar
version has 1 as an attracting fixed point, pushing every singular value
toward 1 while leaving the singular vectors untouched. The limit is the
orthogonal polar factor, the Frobenius-nearest orthonormal-column matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from firereinit.linalg import as_matrix
from firereinit.params import CONV, DENSE, LayerWeights, NetworkParams

DEFAULT_ITERS = 10
DEFAULT_QUINTIC_ITERS = 5


@dataclass(frozen=True)
class NsCoefficients:
    """Coefficients of ``X <- a X + b X (X^T X) + c X (X^T X)^2``."""

    a: float
    b: float
    c: float = 0.0
    label: str = "custom"

    @classmethod
    def cubic(cls) -> "NsCoefficients":
        return cls(1.5, -0.5, 0.0, "cubic")

    @classmethod
    def quintic(cls) -> "NsCoefficients":
        return cls(2.0, -1.5, 0.5, "quintic")

    @classmethod
    def muon_quintic(cls) -> "NsCoefficients":
        return cls(3.4445, -4.7750, 2.0315, "muon_quintic")

    @classmethod
    def from_name(cls, name: str) -> "NsCoefficients":
        table = {
            "cubic": cls.cubic,
            "quintic": cls.quintic,
            "muon": cls.muon_quintic,
            "muon_quintic": cls.muon_quintic,
        }
        try:
            return table[name]()
        except KeyError:
            raise ValueError(f"unknown coefficient set {name!r}; choose from {sorted(table)}") from None

    def scalar_map(self, x):
        """The polynomial acting on a single singular value."""
        x2 = x * x
        return x * (self.a + self.b * x2 + self.c * x2 * x2)


CUBIC = NsCoefficients.cubic()


def default_iters(coeffs: NsCoefficients) -> int:
    return DEFAULT_ITERS if coeffs.c == 0.0 else DEFAULT_QUINTIC_ITERS


def _ns_tall(x: np.ndarray, iters: int, coeffs: NsCoefficients) -> np.ndarray:
    a, b, c = coeffs.a, coeffs.b, coeffs.c
    for _ in range(iters):
        gram = x.T @ x
        if c == 0.0:
            x = a * x + b * (x @ gram)
        else:
            x = a * x + x @ (b * gram + c * (gram @ gram))
    return x


def newton_schulz(w, iters: int = DEFAULT_ITERS, coeffs: NsCoefficients = CUBIC) -> np.ndarray:
    """Run ``iters`` Newton-Schulz steps from ``w / ||w||_F``.

    Wide inputs are transposed so the Gram matrix is formed on the smaller
    dimension; the result has the shape of ``w`` and orthonormal columns
    (tall) or rows (wide) in the limit.
    """
    x = as_matrix(w, name="w")
    if iters < 0:
        raise ValueError("iters must be nonnegative")
    norm = np.sqrt(np.sum(x * x))
    if norm == 0.0:
        raise ValueError("cannot orthogonalize an all-zero matrix")
    x = x / norm
    if x.shape[0] < x.shape[1]:
        return _ns_tall(x.T, iters, coeffs).T
    return _ns_tall(x, iters, coeffs)


def ns_trajectory(w, iters: int, coeffs: NsCoefficients = CUBIC) -> list[np.ndarray]:
    """Iterates ``[X0, X1, ..., X_iters]`` of :func:`newton_schulz`."""
    out = [newton_schulz(w, 0, coeffs)]
    for _ in range(iters):
        # one more step from the previous iterate, skipping renormalization
        x = out[-1]
        if x.shape[0] < x.shape[1]:
            out.append(_ns_tall(x.T, 1, coeffs).T)
        else:
            out.append(_ns_tall(x, 1, coeffs))
    return out


def dense_scale(d_out: int, d_in: int) -> float:
    return math.sqrt(d_out / d_in)


def conv_scale(c_out: int, c_in: int, k_h: int, k_w: int) -> float:
    return math.sqrt(c_out / c_in) / (k_h * k_w)


def fire_dense(w, iters: int = DEFAULT_ITERS, coeffs: NsCoefficients = CUBIC) -> np.ndarray:
    """Orthogonalize a ``(d_out, d_in)`` weight and rescale by ``sqrt(d_out/d_in)``."""
    x = as_matrix(w, name="w")
    if iters < 1:
        raise ValueError("fire_dense needs at least one iteration")
    d_out, d_in = x.shape
    return dense_scale(d_out, d_in) * newton_schulz(x, iters, coeffs)


def fire_conv(layer: LayerWeights, iters: int = DEFAULT_ITERS,
              coeffs: NsCoefficients = CUBIC) -> LayerWeights:
    """Orthogonalize every spatial slice of a conv kernel independently.

    Each ``(c_out, c_in)`` slice is normalized by its own Frobenius norm. The
    common scale ``sqrt(c_out/c_in) / (k_h k_w)`` is applied afterwards; the
    bias is carried over untouched.
    """
    if layer.kind != CONV:
        raise ValueError(f"fire_conv expects a conv layer, got {layer.kind}")
    if iters < 1:
        raise ValueError("fire_conv needs at least one iteration")
    c_out, c_in, kh, kw = layer.weight.shape
    scale = conv_scale(c_out, c_in, kh, kw)
    out = np.empty_like(layer.weight)
    for (i, j), sl in layer.slices():
        try:
            out[:, :, i, j] = scale * newton_schulz(sl, iters, coeffs)
        except ValueError as exc:
            raise ValueError(f"conv slice ({i}, {j}): {exc}") from exc
    bias = None if layer.bias is None else layer.bias.copy()
    return LayerWeights(CONV, out, bias)


def fire_layer(layer: LayerWeights, iters: int = DEFAULT_ITERS,
               coeffs: NsCoefficients = CUBIC) -> LayerWeights:
    if layer.kind == DENSE:
        bias = None if layer.bias is None else layer.bias.copy()
        return LayerWeights(DENSE, fire_dense(layer.weight, iters, coeffs), bias)
    return fire_conv(layer, iters, coeffs)


def fire_network(params: NetworkParams, iters: int = DEFAULT_ITERS,
                 coeffs: NsCoefficients = CUBIC,
                 layer_mask: Sequence[bool] | None = None) -> NetworkParams:
    """Apply FIRE to the masked layers; everything else is copied verbatim."""
    if layer_mask is None:
        layer_mask = [True] * len(params.layers)
    if len(layer_mask) != len(params.layers):
        raise ValueError(
            f"mask has {len(layer_mask)} entries for {len(params.layers)} layers"
        )
    layers = []
    for idx, (lw, on) in enumerate(zip(params.layers, layer_mask)):
        if not on:
            layers.append(lw.copy())
            continue
        try:
            layers.append(fire_layer(lw, iters, coeffs))
        except ValueError as exc:
            raise ValueError(f"layer {idx}: {exc}") from exc
    return NetworkParams(params.arch, layers)
