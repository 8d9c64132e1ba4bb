"""Orthogonalizing reinitialization for continual learning.

Weights are pulled to their nearest orthonormal-column matrix with a
Newton-Schulz iteration when new data arrive; the package also carries the
stability (SFE) and plasticity (DfI) measurements, numerical verifiers for the
accompanying bounds, baseline reinitializers and a small experiment harness.
"""

from firereinit.linalg import (
    SvdResult,
    frobenius_norm,
    polar_orthogonal_factor_exact,
    spectral_norm,
    svd_small,
)
from firereinit.orthogonalize import (
    NsCoefficients,
    fire_conv,
    fire_dense,
    fire_network,
    newton_schulz,
)
from firereinit.metrics import dfi, sfe, sfe_network, srank

__all__ = [
    "NsCoefficients",
    "SvdResult",
    "dfi",
    "fire_conv",
    "fire_dense",
    "fire_network",
    "frobenius_norm",
    "newton_schulz",
    "polar_orthogonal_factor_exact",
    "sfe",
    "sfe_network",
    "spectral_norm",
    "srank",
    "svd_small",
]

__version__ = "0.1.0"
