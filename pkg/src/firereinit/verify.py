"""Randomized verifier suites for the stability/plasticity bounds.

Each suite draws seeded random instances satisfying a bound's premises,
evaluates the corresponding ``check_*`` function and counts violations.
The ``verify`` CLI subcommand and the acceptance tests both run these.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from firereinit import metrics
from firereinit.nn import init_network
from firereinit.params import Architecture, LayerWeights, NetworkParams


@dataclass
class SuiteResult:
    name: str
    cases: int = 0
    violations: int = 0
    not_applicable: int = 0
    worst_gap: float = -math.inf
    seconds: float = 0.0
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.violations == 0 and self.cases > 0

    def record(self, check: metrics.BoundCheck, label: str) -> None:
        self.cases += 1
        if not check.applicable:
            self.not_applicable += 1
            return
        gap = check.measured - check.bound
        self.worst_gap = max(self.worst_gap, gap)
        if not check.holds:
            self.violations += 1
            if len(self.failures) < 5:
                self.failures.append((label, check.measured, check.bound, check.details))

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status}  {self.name:<24} cases={self.cases:<4d} violations={self.violations:<3d} "
                f"n/a={self.not_applicable:<3d} worst(measured-bound)={self.worst_gap:+.3e} "
                f"time={self.seconds:.2f}s")


def random_orthonormal(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((rows, cols)))
    return q * np.sign(np.diag(r))


def random_near_isometry(rng: np.random.Generator, rows: int, cols: int,
                         dfi_max: float = 0.98, axis_aligned: bool = False) -> np.ndarray:
    """Random ``(rows, cols)`` matrix, ``rows >= cols``, with column-Gram DfI below ``dfi_max``.

    The Gram is ``V diag(1 + t) V^T`` with ``||t||^2 = dfi`` drawn in
    ``(0, dfi_max]``. ``axis_aligned`` takes ``V = I`` so all the deviation
    lands on individual column norms, the worst case for activity scores.
    """
    if rows < cols:
        raise ValueError("need rows >= cols")
    t = rng.standard_normal(cols)
    t /= np.linalg.norm(t)
    t *= math.sqrt(rng.uniform(0.0, dfi_max))
    t = np.maximum(t, -1.0 + 1e-6)
    u = random_orthonormal(rng, rows, cols)
    v = np.eye(cols) if axis_aligned else random_orthonormal(rng, cols, cols)
    return u @ np.diag(np.sqrt(1.0 + t)) @ v.T


def _random_bias_free_mlp(rng: np.random.Generator, depth: int, max_width: int) -> NetworkParams:
    dims = [int(d) for d in rng.integers(1, max_width + 1, size=depth + 1)]
    arch = Architecture.mlp(dims, bias=False)
    params = init_network(arch, int(rng.integers(2**31)))
    # vary scales so spectral norms are not all near the He default
    for lw in params.layers:
        lw.weight *= rng.uniform(0.3, 2.0)
    return params


def suite_theorem1(cases: int = 200, seed: int = 0) -> SuiteResult:
    res = SuiteResult("feature-covariance (T1)")
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    made = 0
    while made < cases:
        depth = int(rng.integers(2, 4))
        theta = _random_bias_free_mlp(rng, depth, 16)
        mode = made % 3
        layers = []
        for lw in theta.layers:
            if mode == 0:
                w = lw.weight + 1e-6 * rng.standard_normal(lw.weight.shape)
            elif mode == 1:
                w = lw.weight + rng.uniform(0.01, 1.0) * rng.standard_normal(lw.weight.shape)
            else:
                w = rng.standard_normal(lw.weight.shape) * rng.uniform(0.2, 2.0)
            layers.append(LayerWeights(lw.kind, w))
        theta_t = NetworkParams(theta.arch, layers)
        n = int(rng.integers(2, 20))
        z = rng.standard_normal((n, theta.layers[0].weight.shape[1]))
        layer = int(rng.integers(0, depth))
        try:
            chk = metrics.check_theorem1(theta, theta_t, z, layer)
        except ValueError:
            continue  # dead ReLU layer: premise m_l > 0 fails, redraw
        res.record(chk, f"case {made}")
        made += 1
    res.seconds = time.perf_counter() - start
    return res


def suite_theorem3(cases: int = 500, seed: int = 0) -> SuiteResult:
    res = SuiteResult("effective rank (T3)")
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    for i in range(cases):
        b = int(rng.integers(1, 13))
        a = int(rng.integers(b, 17))
        w = random_near_isometry(rng, a, b, axis_aligned=bool(i % 4 == 0))
        n = int(rng.integers(a, 3 * a + 8))
        z = rng.standard_normal((n, a)) * rng.uniform(0.1, 3.0, size=a)
        if i % 2 == 0:
            z = metrics.whiten(z)
        delta = float(rng.uniform(0.01, 0.6))
        res.record(metrics.check_theorem3(w, z, delta), f"case {i}")
    res.seconds = time.perf_counter() - start
    return res


def suite_theorem4(cases: int = 500, seed: int = 0) -> SuiteResult:
    res = SuiteResult("activity score (T4)")
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    for i in range(cases):
        b = int(rng.integers(1, 17))
        a = int(rng.integers(b, 25))
        w = random_near_isometry(rng, a, b, axis_aligned=bool(i % 2 == 0))
        res.record(metrics.check_theorem4(w), f"case {i}")
    res.seconds = time.perf_counter() - start
    return res


def suite_lemma(cases: int = 500, seed: int = 0) -> SuiteResult:
    res = SuiteResult("spectral lemma")
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    for i in range(cases):
        rows, cols = (int(x) for x in rng.integers(1, 17, size=2))
        w = rng.standard_normal((rows, cols)) * rng.uniform(0.05, 2.0)
        if i % 3 == 0:
            w = random_near_isometry(rng, max(rows, cols), min(rows, cols))
        res.record(metrics.check_spectral_lemma(w), f"case {i}")
    res.seconds = time.perf_counter() - start
    return res


def suite_corollary(cases: int = 500, seed: int = 0, tau: float = metrics.DEFAULT_TAU,
                    dfi_level: float = 0.9975) -> SuiteResult:
    """Matrices with DfI at most ``dfi_level`` must have no ``tau``-dormant unit.

    ``measured`` is the dormant count, ``bound`` is 0.
    """
    res = SuiteResult("dormancy corollary")
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    for i in range(cases):
        b = int(rng.integers(1, 33))
        a = int(rng.integers(b, 41))
        w = random_near_isometry(rng, a, b, dfi_max=dfi_level, axis_aligned=bool(i % 2 == 0))
        if i % 5 == 0:
            # push to the DfI ceiling with all deviation on a single shrunk column
            g = np.ones(b)
            g[0] = 1.0 - math.sqrt(dfi_level)
            w = random_orthonormal(rng, a, b) * np.sqrt(g)
        d = metrics.dfi(w, "columns")
        if d > dfi_level + 1e-12:
            raise AssertionError(f"generator produced DfI {d} above {dfi_level}")
        count = metrics.dormant_count(metrics.activity_scores_closed_form(w), tau)
        res.record(metrics.BoundCheck(float(count), 0.0, "dormant count", slack=0.0,
                                      details={"dfi": d}), f"case {i}")
    res.seconds = time.perf_counter() - start
    return res


def suite_theorem2(cases: int = 100, seed: int = 0) -> SuiteResult:
    res = SuiteResult("Hessian norm (T2)")
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    for i in range(cases):
        dims = [int(d) for d in rng.integers(1, 9, size=3)]
        arch = Architecture.mlp(dims, bias=False)
        params = init_network(arch, int(rng.integers(2**31)))
        for lw in params.layers:
            lw.weight *= rng.uniform(0.3, 1.5)
        n = int(rng.integers(dims[0] + 4, 4 * dims[0] + 16))
        z = metrics.whiten(rng.standard_normal((n, dims[0])))
        y = rng.standard_normal((n, dims[-1]))
        res.record(metrics.check_theorem2(params, z, y, "squared"), f"case {i}")
    res.seconds = time.perf_counter() - start
    return res


SUITES = {
    "theorem1": suite_theorem1,
    "theorem2": suite_theorem2,
    "theorem3": suite_theorem3,
    "theorem4": suite_theorem4,
    "lemma": suite_lemma,
    "corollary": suite_corollary,
}


def run_all(seed: int = 0, scale: float = 1.0) -> list[SuiteResult]:
    """Run every suite; ``scale`` shrinks case counts for quick smoke runs."""
    counts = {"theorem1": 200, "theorem2": 100, "theorem3": 500,
              "theorem4": 500, "lemma": 500, "corollary": 500}
    return [fn(max(1, int(counts[name] * scale)), seed) for name, fn in SUITES.items()]
