"""Stability (SFE) and plasticity (DfI) measurements plus bound verifiers.

Every ``check_*`` function evaluates one inequality numerically and returns a
:class:`BoundCheck`. Verifiers take weights in the orientation the bounds are
written in: a layer maps ``H -> H @ W`` with ``W`` of shape ``(d_in, d_out)``,
so neurons are columns. Stored dense weights are ``(d_out, d_in)``; pass
``weight.T``. Network-level verifiers handle the transpose themselves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import NamedTuple, Sequence

import numpy as np

from firereinit.linalg import as_matrix, polar_orthogonal_factor_exact, spectral_norm, svd_small
from firereinit.nn import ForwardCache, forward, hvp, squared_targets
from firereinit.params import NetworkParams, check_same_architecture

SLACK = 1e-9
DEFAULT_TAU = 0.025
DEFAULT_DELTA = 0.01
# floor/ceil guard for bounds that land within rounding of an integer
_CEIL_GUARD = 1e-9


def sfe(w, w_tilde) -> float:
    """Squared Frobenius error ``||W - W~||_F^2``."""
    a = np.asarray(w, dtype=np.float64)
    b = np.asarray(w_tilde, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    d = a - b
    return float(np.sum(d * d))


def sfe_network(a: NetworkParams, b: NetworkParams) -> float:
    """Sum of per-layer SFE over weight tensors; biases are not included."""
    check_same_architecture(a, b)
    return float(sum(sfe(x.weight, y.weight) for x, y in zip(a.layers, b.layers)))


def gram_matrix(w, orientation: str = "auto") -> np.ndarray:
    """``W^T W`` (``"columns"``), ``W W^T`` (``"rows"``) or the smaller of the two (``"auto"``)."""
    w = as_matrix(w, name="w")
    if orientation == "auto":
        orientation = "columns" if w.shape[0] >= w.shape[1] else "rows"
    if orientation == "columns":
        return w.T @ w
    if orientation == "rows":
        return w @ w.T
    raise ValueError(f"unknown orientation {orientation!r}")


def dfi(w, orientation: str = "auto") -> float:
    """Deviation from isometry ``||G - I||_F^2`` of the Gram matrix ``G``.

    By default the Gram is formed on the smaller dimension, so a wide matrix
    with orthonormal rows scores 0 just like a tall one with orthonormal
    columns.
    """
    g = gram_matrix(w, orientation)
    g[np.diag_indices_from(g)] -= 1.0
    return float(np.sum(g * g))


def normalized_feature_covariance(h) -> np.ndarray:
    """``H H^T / ||H||_F^2`` (samples are rows)."""
    h = as_matrix(h, name="h")
    n2 = float(np.sum(h * h))
    if n2 == 0.0:
        raise ValueError("features are all zero; normalized covariance undefined")
    return (h @ h.T) / n2


def srank(singular_values, delta: float = DEFAULT_DELTA) -> int:
    """Smallest ``k`` whose top-``k`` singular values hold a ``1 - delta`` share of the total."""
    s = np.asarray(singular_values, dtype=np.float64).ravel()
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    if s.size == 0 or np.any(s < 0):
        raise ValueError("singular values must be a nonempty nonnegative array")
    if np.any(np.diff(s) > 0):
        raise ValueError("singular values must be nonincreasing")
    total = float(s.sum())
    if total <= 0.0:
        raise ValueError("all-zero spectrum has no effective rank")
    ratios = np.cumsum(s) / total
    return int(np.argmax(ratios >= 1.0 - delta)) + 1


def activity_scores_closed_form(w) -> np.ndarray:
    """Neuron activity scores under isotropic Gaussian input.

    For a positively homogeneous activation the expected magnitude of neuron
    ``j`` is proportional to ``||w_j||``, so the score is the column norm over
    the mean column norm.
    """
    w = as_matrix(w, name="w")
    norms = np.linalg.norm(w, axis=0)
    mean = norms.mean()
    if mean == 0.0:
        raise ValueError("all columns are zero; activity scores undefined")
    return norms / mean


def dormant_count(scores, tau: float = DEFAULT_TAU) -> int:
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    return int(np.sum(np.asarray(scores) < tau))


def corollary_dfi_threshold(tau: float = DEFAULT_TAU) -> float:
    """DfI level below which no neuron scores under ``tau``."""
    return ((1.0 - tau * tau) / (1.0 + tau * tau)) ** 2


@dataclass
class BoundCheck:
    """Verdict of one inequality ``measured <= bound``.

    Lower bounds are encoded by negating both sides. A check whose premise
    fails is reported with ``applicable=False``, ``measured=0``,
    ``bound=inf`` rather than as a violation.
    """

    measured: float
    bound: float
    context: str
    applicable: bool = True
    details: dict = field(default_factory=dict)
    slack: float = SLACK

    @property
    def holds(self) -> bool:
        return bool(self.measured <= self.bound + self.slack)

    @classmethod
    def not_applicable(cls, context: str, **details) -> "BoundCheck":
        return cls(0.0, math.inf, context, applicable=False, details=details)


def _ceil(x: float) -> int:
    return int(math.ceil(x - _CEIL_GUARD))


# -- verifiers -----------------------------------------------------------------


def _bias_free_features(params: NetworkParams, z: np.ndarray, upto: int) -> list[np.ndarray]:
    h = z
    out = []
    for spec, lw in zip(params.arch.layers[: upto + 1], params.layers[: upto + 1]):
        h = h @ lw.weight.T
        if spec.activation:
            h = np.maximum(h, 0.0)
        out.append(h)
    return out


def check_theorem1(theta: NetworkParams, theta_tilde: NetworkParams, z, layer: int) -> BoundCheck:
    """Feature-covariance discrepancy at ``layer`` (0-based) bounded by network SFE.

    Features are computed without biases and with the architecture's ReLU or
    identity activations (both 1-Lipschitz). The SFE on the right-hand side
    runs over all layers, which only loosens the bound.
    """
    check_same_architecture(theta, theta_tilde)
    z = as_matrix(z, name="z")
    if not 0 <= layer < len(theta.layers):
        raise IndexError(f"layer {layer} out of range for {len(theta.layers)} layers")
    h = _bias_free_features(theta, z, layer)[-1]
    ht = _bias_free_features(theta_tilde, z, layer)[-1]
    m = min(np.linalg.norm(h), np.linalg.norm(ht))
    if m == 0.0:
        raise ValueError(f"features at layer {layer} vanish (m_l = 0)")
    c = normalized_feature_covariance(h)
    ct = normalized_feature_covariance(ht)
    measured = sfe(c, ct)
    b = np.array([
        max(spectral_norm(x.weight).value, spectral_norm(y.weight).value)
        for x, y in zip(theta.layers[: layer + 1], theta_tilde.layers[: layer + 1])
    ])
    # B_prod^2 * sum_j B_j^-2 written without division so zero layers are harmless
    prod_sq = 0.0
    for j in range(len(b)):
        prod_sq += float(np.prod(np.delete(b, j) ** 2))
    total_sfe = sfe_network(theta, theta_tilde)
    bound = 16.0 * float(np.sum(z * z)) / (m * m) * prod_sq * total_sfe
    return BoundCheck(
        measured, bound, f"feature covariance bound at layer {layer}",
        details={"m": m, "B": b.tolist(), "sfe": total_sfe},
    )


def whiten(x) -> np.ndarray:
    """Center-free batch whitening so that ``Z.T @ Z / n == I``."""
    x = as_matrix(x, name="x")
    n, d = x.shape
    if n < d:
        raise ValueError(f"need at least {d} samples to whiten {d} features, got {n}")
    cov = x.T @ x / n
    evals, evecs = np.linalg.eigh(cov)
    if evals[0] <= 1e-12 * evals[-1]:
        raise ValueError("batch covariance is singular; cannot whiten")
    return x @ (evecs / np.sqrt(evals)) @ evecs.T


def check_theorem3(w, z, delta: float) -> BoundCheck:
    """Effective rank of ``Phi = Z W`` bounded below through ``sqrt(DfI(W))``.

    ``W`` is ``(a, b)`` with ``a >= b``. The general (input-covariance aware)
    bound is used; it coincides with the whitened form when ``Z^T Z / n = I``.
    """
    w = as_matrix(w, name="w")
    z = as_matrix(z, name="z")
    if w.shape[0] < w.shape[1]:
        raise ValueError("the effective-rank bound needs W with at least as many rows as columns")
    if z.shape[1] != w.shape[0]:
        raise ValueError(f"Z has {z.shape[1]} features, W expects {w.shape[0]}")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    eps = math.sqrt(dfi(w, "columns"))
    ctx = f"srank lower bound, delta={delta}"
    if eps >= 1.0:
        return BoundCheck.not_applicable(ctx, eps=eps)
    n = z.shape[0]
    q = polar_orthogonal_factor_exact(w)
    m = q.T @ (z.T @ z / n) @ q
    eta = svd_small((m + m.T) / 2.0).singular_values
    eta = eta[eta > 1e-10 * eta[0]] if eta[0] > 0 else eta[:0]
    d = int(eta.size)
    if d == 0:
        return BoundCheck.not_applicable(ctx, eps=eps, reason="Q^T Sigma_Z Q is zero")
    sv = svd_small(z @ w).singular_values
    sv = sv[:d]
    k = srank(sv, delta)
    rho = math.sqrt((1 + eps) / (1 - eps)) * math.sqrt(eta[0] / eta[-1])
    k_min = _ceil((1 - delta) * d / (delta * rho + (1 - delta)))
    return BoundCheck(
        -float(k), -float(k_min), ctx,
        details={"eps": eps, "d": d, "srank": k, "bound_k": k_min, "eta_ratio": eta[0] / eta[-1]},
    )


def check_theorem4(w) -> BoundCheck:
    """Closed-form activity scores within ``[sqrt((1-e)/(1+e)), sqrt((1+e)/(1-e))]``.

    ``measured`` is the worst excursion outside the interval (``<= 0`` inside).
    """
    w = as_matrix(w, name="w")
    eps = math.sqrt(dfi(w, "columns"))
    ctx = "activity score interval"
    if eps >= 1.0:
        return BoundCheck.not_applicable(ctx, eps=eps)
    s = activity_scores_closed_form(w)
    lo = math.sqrt((1 - eps) / (1 + eps))
    hi = math.sqrt((1 + eps) / (1 - eps))
    worst = float(max(np.max(lo - s), np.max(s - hi)))
    return BoundCheck(worst, 0.0, ctx, details={"eps": eps, "lo": lo, "hi": hi,
                                                "min_score": float(s.min()),
                                                "max_score": float(s.max())})


def check_spectral_lemma(w) -> BoundCheck:
    """Eigenvalues of the Gram used by :func:`dfi` lie in ``[1 - e, 1 + e]``."""
    w = as_matrix(w, name="w")
    eps = math.sqrt(dfi(w))
    mu = svd_small(w).singular_values ** 2
    worst = float(max(np.max((1 - eps) - mu), np.max(mu - (1 + eps))))
    return BoundCheck(worst, 0.0, "Gram eigenvalues within 1 +/- sqrt(DfI)",
                      details={"eps": eps, "mu_min": float(mu.min()), "mu_max": float(mu.max())})


class HessianEstimate(NamedTuple):
    value: float
    converged: bool
    iterations: int


def hessian_sigma_max(params: NetworkParams, batch, labels, loss_kind: str = "cross_entropy",
                      tol: float = 1e-8, max_iter: int = 1000, seed: int = 0) -> HessianEstimate:
    """Spectral norm of the loss Hessian by power iteration on Hessian-vector products.

    The ReLU gates are frozen at ``params``. The estimate is ``||H v||`` for
    the current unit iterate ``v``, which never exceeds the true norm.
    """
    gates = forward(params, batch)[1].gates
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(params.num_parameters())
    v /= np.linalg.norm(v)
    est = 0.0
    for it in range(1, max_iter + 1):
        hv = hvp(params, batch, labels, loss_kind, params.with_vector(v), gates).to_vector()
        new_est = float(np.linalg.norm(hv))
        if new_est == 0.0:
            return HessianEstimate(0.0, True, it)
        v = hv / new_est
        if abs(new_est - est) <= tol * new_est:
            return HessianEstimate(new_est, True, it)
        est = new_est
    return HessianEstimate(est, False, max_iter)


def theorem2_bound(nus: Sequence[float], beta: float, gamma: float) -> float:
    nus = list(nus)
    L = len(nus)
    first = sum(math.prod(nus[j] for j in range(L) if j != k) for k in range(L))
    second = sum(
        math.prod(nus[j] for j in range(L) if j not in (k, l))
        for k, l in combinations(range(L), 2)
    )
    return beta * first + 2.0 * gamma * second


def check_theorem2(params: NetworkParams, z, labels, loss_kind: str = "squared",
                   whiten_tol: float = 1e-8, tol: float = 1e-10, max_iter: int = 5000) -> BoundCheck:
    """Hessian spectral norm bounded by the layerwise ``nu_k = 1 + sqrt(DfI(W_k))``.

    Only the squared loss ``0.5 ||u - y||^2`` is supported, where ``beta = 1``
    and ``gamma`` is the largest per-sample residual norm. The network must be
    bias-free and ``Z^T Z / n`` must equal the identity to ``whiten_tol``.
    """
    if loss_kind != "squared":
        raise ValueError(f"unsupported loss kind for the curvature bound: {loss_kind!r}")
    if any(lw.bias is not None for lw in params.layers):
        raise ValueError("curvature bound is stated for bias-free networks")
    z = as_matrix(z, name="z")
    n = z.shape[0]
    cov = z.T @ z / n
    if np.max(np.abs(cov - np.eye(cov.shape[0]))) > whiten_tol:
        raise ValueError("inputs are not whitened (Z^T Z / n != I)")
    logits, _ = forward(params, z)
    resid = logits - squared_targets(labels, n, logits.shape[1])
    beta = 1.0
    gamma = float(np.max(np.linalg.norm(resid, axis=1)))
    nus = [1.0 + math.sqrt(dfi(lw.weight)) for lw in params.layers]
    bound = theorem2_bound(nus, beta, gamma)
    est = hessian_sigma_max(params, z, labels, "squared", tol=tol, max_iter=max_iter)
    return BoundCheck(est.value, bound, "Hessian norm bound",
                      details={"nu": nus, "beta": beta, "gamma": gamma,
                               "converged": est.converged, "iterations": est.iterations})


# -- aggregate report ------------------------------------------------------------


def empirical_activity_scores(activations: np.ndarray) -> np.ndarray:
    """Mean absolute activation per unit over the mean of those means."""
    a = np.abs(np.asarray(activations, dtype=np.float64)).mean(axis=0)
    mean = a.mean()
    if mean == 0.0:
        return np.zeros_like(a)
    return a / mean


@dataclass
class PlasticityReport:
    dfi: list[float]
    sfe_total: float | None
    srank: list[int]
    activity_scores: list[np.ndarray]
    dormant: list[int]
    hessian_sigma_max: float | None = None

    def rows(self) -> list[dict]:
        out = []
        for i in range(len(self.dfi)):
            out.append({
                "layer": i,
                "dfi": self.dfi[i],
                "srank": self.srank[i],
                "dormant": self.dormant[i],
                "min_score": float(np.min(self.activity_scores[i])),
                "max_score": float(np.max(self.activity_scores[i])),
            })
        return out


def feature_srank(features: np.ndarray, delta: float = DEFAULT_DELTA) -> int:
    s = np.linalg.svd(np.asarray(features, dtype=np.float64), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return srank(s, delta)


def plasticity_report(params: NetworkParams, batch=None, reference: NetworkParams | None = None,
                      delta: float = DEFAULT_DELTA, tau: float = DEFAULT_TAU,
                      cache: ForwardCache | None = None) -> PlasticityReport:
    """Per-layer DfI, srank, activity scores and dormant counts.

    With a batch, srank and scores come from each layer's outputs on it;
    without one they fall back to the weights (weight singular values and the
    closed-form Gaussian-input scores).
    """
    dfis = [dfi(lw.weight.reshape(lw.weight.shape[0], -1)) for lw in params.layers]
    sfe_total = None if reference is None else sfe_network(params, reference)
    if cache is None and batch is not None:
        cache = forward(params, batch)[1]
    sranks, scores = [], []
    for i, lw in enumerate(params.layers):
        if cache is not None:
            feats = cache.inputs[i + 1]
            sranks.append(feature_srank(feats, delta))
            scores.append(empirical_activity_scores(feats))
        else:
            mat = lw.weight.reshape(lw.weight.shape[0], -1)
            sranks.append(srank(np.linalg.svd(mat, compute_uv=False), delta))
            scores.append(activity_scores_closed_form(mat.T))
    dormant = [dormant_count(s, tau) for s in scores]
    return PlasticityReport(dfis, sfe_total, sranks, scores, dormant)
