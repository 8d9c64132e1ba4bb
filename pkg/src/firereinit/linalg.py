"""Dense real-matrix kernels.

Matrices are plain 2-D ``float64`` numpy arrays. :func:`svd_small` is a
one-sided Jacobi SVD that serves as the accuracy oracle for everything the
Newton-Schulz path approximates; it is not meant to be fast.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

MAX_SVD_ENTRIES = 1_000_000
RANK_TOL = 1e-10


class MatrixSizeError(ValueError):
    """Input exceeds the desk-scale size limit of the dense kernels."""


class SingularMatrixError(ValueError):
    """Input is numerically rank deficient where full rank is required."""


def as_matrix(m, *, name: str = "matrix") -> np.ndarray:
    """Validate ``m`` as a finite 2-D array and return it as ``float64``."""
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"{name} must have positive dimensions, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains NaN or Inf entries")
    return a


def frobenius_norm(m) -> float:
    a = as_matrix(m)
    peak = float(np.max(np.abs(a))) if a.size else 0.0
    if peak == 0.0:
        return 0.0
    a = a / peak  # keeps the sum of squares clear of underflow and overflow
    return peak * float(np.sqrt(np.sum(a * a)))


class SpectralNorm(NamedTuple):
    value: float
    converged: bool
    iterations: int


def spectral_norm(m, tol: float = 1e-12, max_iter: int = 10_000) -> SpectralNorm:
    """Largest singular value by power iteration on ``m.T @ m``.

    Non-convergence is not an error: the best estimate is returned with
    ``converged=False``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    a = as_matrix(m)
    if not np.any(a):
        return SpectralNorm(0.0, True, 0)
    # work on a / max|a_ij| so the Gram neither underflows nor overflows
    peak = float(np.max(np.abs(a)))
    a = a / peak
    gram = a.T @ a
    # deterministic, dense start vector; avoids landing orthogonal to the top
    # singular vector for structured inputs like diag(3, 1)
    v = np.random.default_rng(0).standard_normal(gram.shape[0]) + 1.0
    v /= np.linalg.norm(v)
    lam = 0.0
    for it in range(1, max_iter + 1):
        w = gram @ v
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            return SpectralNorm(0.0, True, it)
        v = w / norm_w
        new_lam = float(v @ gram @ v)
        if abs(new_lam - lam) <= tol * max(new_lam, np.finfo(float).tiny):
            return SpectralNorm(peak * float(np.sqrt(max(new_lam, 0.0))), True, it)
        lam = new_lam
    return SpectralNorm(peak * float(np.sqrt(max(lam, 0.0))), False, max_iter)


class SvdResult(NamedTuple):
    """Thin SVD ``a = u @ diag(singular_values) @ vt``."""

    u: np.ndarray
    singular_values: np.ndarray
    vt: np.ndarray


def _complete_orthonormal(q: np.ndarray, filled: np.ndarray) -> np.ndarray:
    """Replace columns of ``q`` where ``filled`` is False by an orthonormal completion."""
    n_rows = q.shape[0]
    basis = [q[:, j] for j in range(q.shape[1]) if filled[j]]
    candidates = iter(np.eye(n_rows))
    for j in range(q.shape[1]):
        if filled[j]:
            continue
        for e in candidates:
            v = e.copy()
            for _ in range(2):  # re-orthogonalize once for stability
                for b in basis:
                    v -= (b @ v) * b
            nv = np.linalg.norm(v)
            if nv > 1e-8:
                v /= nv
                q[:, j] = v
                basis.append(v)
                break
    return q


def _jacobi_tall(a: np.ndarray, max_sweeps: int = 100):
    m, n = a.shape
    u = a.copy()
    v = np.eye(n)
    eps = np.finfo(np.float64).eps
    for _ in range(max_sweeps):
        rotated = False
        for i in range(n - 1):
            for j in range(i + 1, n):
                ui, uj = u[:, i], u[:, j]
                alpha = ui @ ui
                beta = uj @ uj
                gamma = ui @ uj
                if gamma == 0.0 or abs(gamma) <= eps * np.sqrt(alpha * beta):
                    continue
                rotated = True
                # t = sign(zeta) / (|zeta| + sqrt(1 + zeta^2)) with zeta = num / den,
                # rewritten so a tiny gamma cannot overflow
                num, den = beta - alpha, 2.0 * gamma
                t = math.copysign(1.0, num) * math.copysign(1.0, den) * abs(den) / (
                    abs(num) + math.hypot(num, den))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                new_i = c * ui - s * uj
                new_j = s * ui + c * uj
                u[:, i], u[:, j] = new_i, new_j
                vi, vj = v[:, i].copy(), v[:, j].copy()
                v[:, i] = c * vi - s * vj
                v[:, j] = s * vi + c * vj
        if not rotated:
            break
    sigma = np.linalg.norm(u, axis=0)
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    u = u[:, order]
    v = v[:, order]
    scale = sigma[0] if sigma.size and sigma[0] > 0 else 1.0
    nonzero = sigma > eps * max(m, n) * scale
    u[:, nonzero] /= sigma[nonzero]
    if not np.all(nonzero):
        u = _complete_orthonormal(u, nonzero)
    return u, sigma, v


def svd_small(m) -> SvdResult:
    """Thin SVD by one-sided (Hestenes) Jacobi rotations.

    The rotations are applied to the taller orientation so the column count
    is ``min(rows, cols)``. Singular values come back nonincreasing.
    """
    a = as_matrix(m)
    if a.size > MAX_SVD_ENTRIES:
        raise MatrixSizeError(
            f"svd_small limited to {MAX_SVD_ENTRIES} entries, got {a.shape}"
        )
    if a.shape[0] >= a.shape[1]:
        u, s, v = _jacobi_tall(a)
        return SvdResult(u, s, v.T)
    u, s, v = _jacobi_tall(a.T)
    return SvdResult(v, s, u.T)


def polar_orthogonal_factor_exact(w) -> np.ndarray:
    """Nearest orthonormal-column matrix to ``w`` in Frobenius norm.

    Computed as ``U @ Vt`` from the thin SVD, which equals
    ``w @ (w.T @ w)^(-1/2)`` for full column rank without squaring the
    condition number.
    """
    a = as_matrix(w, name="w")
    rows, cols = a.shape
    if rows < cols:
        raise ValueError(
            f"polar factor with orthonormal columns needs rows >= cols, got {a.shape}"
        )
    res = svd_small(a)
    s = res.singular_values
    if s[0] == 0.0 or s[-1] < RANK_TOL * s[0]:
        raise SingularMatrixError(
            f"rank-deficient input: sigma_min/sigma_max = "
            f"{(s[-1] / s[0]) if s[0] else 0.0:.3e} < {RANK_TOL}"
        )
    return res.u @ res.vt
