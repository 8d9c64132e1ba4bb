"""Parameter containers shared by the network, reinitializers and metrics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

DENSE = "dense"
CONV = "conv"


@dataclass(frozen=True)
class LayerSpec:
    """Shape metadata for one layer.

    Dense weights are ``(d_out, d_in)``; conv kernels are
    ``(c_out, c_in, k_h, k_w)``.
    """

    kind: str
    shape: tuple[int, ...]
    bias: bool = True
    activation: bool = True

    def __post_init__(self):
        if self.kind not in (DENSE, CONV):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        expected = 2 if self.kind == DENSE else 4
        if len(self.shape) != expected or any(int(d) < 1 for d in self.shape):
            raise ValueError(f"invalid {self.kind} shape {self.shape}")

    @property
    def fan_in(self) -> int:
        if self.kind == DENSE:
            return self.shape[1]
        return self.shape[1] * self.shape[2] * self.shape[3]

    @property
    def out_features(self) -> int:
        return self.shape[0]


@dataclass(frozen=True)
class Architecture:
    layers: tuple[LayerSpec, ...]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("architecture needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.kind == DENSE and nxt.kind == DENSE and prev.shape[0] != nxt.shape[1]:
                raise ValueError(
                    f"incompatible dense layers: output {prev.shape[0]} feeds input {nxt.shape[1]}"
                )

    @classmethod
    def mlp(cls, dims: Sequence[int], bias: bool = True, final_activation: bool = False):
        """Fully connected ReLU network ``dims[0] -> ... -> dims[-1]``."""
        dims = [int(d) for d in dims]
        if len(dims) < 2:
            raise ValueError("an MLP needs at least input and output dims")
        n = len(dims) - 1
        return cls(
            tuple(
                LayerSpec(
                    DENSE,
                    (dims[i + 1], dims[i]),
                    bias=bias,
                    activation=(i < n - 1) or final_activation,
                )
                for i in range(n)
            )
        )

    def __len__(self) -> int:
        return len(self.layers)

    def to_dict(self) -> dict:
        return {
            "layers": [
                {"kind": s.kind, "shape": list(s.shape), "bias": s.bias, "activation": s.activation}
                for s in self.layers
            ]
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        return cls(
            tuple(
                LayerSpec(x["kind"], tuple(int(v) for v in x["shape"]), bool(x["bias"]), bool(x["activation"]))
                for x in d["layers"]
            )
        )


@dataclass
class LayerWeights:
    kind: str
    weight: np.ndarray
    bias: np.ndarray | None = None

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        if self.kind == DENSE and self.weight.ndim != 2:
            raise ValueError(f"dense weight must be 2-D, got {self.weight.shape}")
        if self.kind == CONV and self.weight.ndim != 4:
            raise ValueError(f"conv weight must be 4-D, got {self.weight.shape}")
        if self.kind not in (DENSE, CONV):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=np.float64)
            if self.bias.shape != (self.weight.shape[0],):
                raise ValueError(
                    f"bias shape {self.bias.shape} does not match {self.weight.shape[0]} outputs"
                )

    def slices(self) -> Iterable[tuple[tuple[int, int], np.ndarray]]:
        """Spatial slices ``weight[:, :, i, j]`` of a conv kernel."""
        if self.kind != CONV:
            raise ValueError("slices() is only defined for conv layers")
        _, _, kh, kw = self.weight.shape
        for i in range(kh):
            for j in range(kw):
                yield (i, j), self.weight[:, :, i, j]

    def copy(self) -> "LayerWeights":
        return LayerWeights(
            self.kind, self.weight.copy(), None if self.bias is None else self.bias.copy()
        )


@dataclass
class NetworkParams:
    arch: Architecture
    layers: list[LayerWeights] = field(default_factory=list)

    def __post_init__(self):
        if len(self.layers) != len(self.arch):
            raise ValueError(
                f"{len(self.layers)} weight tensors for a {len(self.arch)}-layer architecture"
            )
        for i, (spec, lw) in enumerate(zip(self.arch.layers, self.layers)):
            if spec.kind != lw.kind or tuple(lw.weight.shape) != spec.shape:
                raise ValueError(
                    f"layer {i}: expected {spec.kind}{spec.shape}, got {lw.kind}{lw.weight.shape}"
                )
            if spec.bias != (lw.bias is not None):
                raise ValueError(f"layer {i}: bias presence disagrees with architecture")

    def __len__(self) -> int:
        return len(self.layers)

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.arch, [lw.copy() for lw in self.layers])

    def weights(self) -> list[np.ndarray]:
        return [lw.weight for lw in self.layers]

    def tensors(self) -> list[np.ndarray]:
        """All tensors in a fixed order: weight, then bias, per layer."""
        out = []
        for lw in self.layers:
            out.append(lw.weight)
            if lw.bias is not None:
                out.append(lw.bias)
        return out

    def num_parameters(self) -> int:
        return int(sum(t.size for t in self.tensors()))

    def to_vector(self) -> np.ndarray:
        return np.concatenate([t.ravel() for t in self.tensors()])

    def with_vector(self, vec: np.ndarray) -> "NetworkParams":
        """New params of the same architecture filled from a flat vector."""
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.num_parameters():
            raise ValueError(f"vector has {vec.size} entries, need {self.num_parameters()}")
        layers, pos = [], 0
        for lw in self.layers:
            n = lw.weight.size
            w = vec[pos:pos + n].reshape(lw.weight.shape).copy()
            pos += n
            b = None
            if lw.bias is not None:
                b = vec[pos:pos + lw.bias.size].copy()
                pos += lw.bias.size
            layers.append(LayerWeights(lw.kind, w, b))
        return NetworkParams(self.arch, layers)

    def zeros_like(self) -> "NetworkParams":
        return self.with_vector(np.zeros(self.num_parameters()))


def check_same_architecture(a: NetworkParams, b: NetworkParams) -> None:
    if len(a.layers) != len(b.layers):
        raise ValueError(f"layer count mismatch: {len(a.layers)} vs {len(b.layers)}")
    for i, (x, y) in enumerate(zip(a.layers, b.layers)):
        if x.kind != y.kind or x.weight.shape != y.weight.shape:
            raise ValueError(
                f"layer {i}: architecture mismatch {x.kind}{x.weight.shape} vs {y.kind}{y.weight.shape}"
            )
        if (x.bias is None) != (y.bias is None):
            raise ValueError(f"layer {i}: bias presence mismatch")
