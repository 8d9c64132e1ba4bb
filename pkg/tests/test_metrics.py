import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import explicit_hessian, output_jacobian

from firereinit import metrics
from firereinit.metrics import (
    BoundCheck,
    activity_scores_closed_form,
    check_spectral_lemma,
    check_theorem1,
    check_theorem2,
    check_theorem3,
    check_theorem4,
    corollary_dfi_threshold,
    dfi,
    dormant_count,
    empirical_activity_scores,
    hessian_sigma_max,
    normalized_feature_covariance,
    plasticity_report,
    sfe,
    sfe_network,
    srank,
    theorem2_bound,
    whiten,
)
from firereinit.nn import forward, init_network
from firereinit.orthogonalize import fire_network
from firereinit.params import Architecture, LayerWeights, NetworkParams


def random_orthonormal(rng, rows, cols):
    q, r = np.linalg.qr(rng.standard_normal((rows, cols)))
    return q * np.sign(np.diag(r))


class TestSfe:
    def test_self(self):
        w = np.random.default_rng(0).standard_normal((3, 4))
        assert sfe(w, w) == 0.0

    def test_identity_vs_zero(self):
        assert sfe(np.eye(2), np.zeros((2, 2))) == 2.0

    def test_matches_scalar_loop(self):
        rng = np.random.default_rng(6)
        a, b = rng.standard_normal((8, 8)), rng.standard_normal((8, 8))
        total = 0.0
        for i in range(8):
            for j in range(8):
                total += (a[i, j] - b[i, j]) ** 2
        assert sfe(a, b) == pytest.approx(total, rel=1e-13)

    def test_symmetric(self):
        rng = np.random.default_rng(1)
        a, b = rng.standard_normal((4, 2)), rng.standard_normal((4, 2))
        assert sfe(a, b) == sfe(b, a)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            sfe(np.eye(2), np.eye(3))


class TestSfeNetwork:
    def test_self(self):
        p = init_network(Architecture.mlp([3, 4, 2]), 0)
        assert sfe_network(p, p) == 0.0

    def test_additive_over_layers(self):
        p = init_network(Architecture.mlp([3, 4, 2]), 0)
        q = p.copy()
        q.layers[1].weight += 0.5
        q.layers[1].bias += 10.0  # biases are excluded
        assert sfe_network(p, q) == pytest.approx(sfe(p.layers[1].weight, q.layers[1].weight))

    def test_against_fire(self):
        p = init_network(Architecture.mlp([6, 8, 3]), 2)
        v = sfe_network(p, fire_network(p, 10))
        assert 0 < v < math.inf

    def test_architecture_mismatch(self):
        with pytest.raises(ValueError):
            sfe_network(init_network(Architecture.mlp([3, 4]), 0), init_network(Architecture.mlp([3, 5]), 0))


class TestDfi:
    def test_identity(self):
        assert dfi(np.eye(5)) == 0.0

    def test_scaled_identity(self):
        assert dfi(2 * np.eye(2)) == pytest.approx(18.0)

    def test_diagonal(self):
        assert dfi(np.diag([1.0, 0.5])) == pytest.approx(0.5625)

    def test_wide_uses_smaller_gram(self):
        q = random_orthonormal(np.random.default_rng(0), 6, 3)
        assert dfi(q.T) == pytest.approx(0.0, abs=1e-24)
        assert dfi(q.T, "columns") == pytest.approx(3.0)

    def test_orientation_checked(self):
        with pytest.raises(ValueError):
            dfi(np.eye(2), "diagonal")

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(1, 8), st.integers(1, 8))
    def test_zero_iff_orthonormal(self, seed, a, b):
        rows, cols = max(a, b), min(a, b)
        q = random_orthonormal(np.random.default_rng(seed), rows, cols)
        assert dfi(q) <= 1e-20
        assert dfi(1.1 * q) > 0


class TestFeatureCovariance:
    def test_single_row(self):
        c = normalized_feature_covariance(np.array([[1.0, 2.0, 3.0]]))
        np.testing.assert_allclose(c, [[1.0]])

    def test_orthogonal_rows(self):
        h = 2.0 * random_orthonormal(np.random.default_rng(1), 5, 3).T
        np.testing.assert_allclose(normalized_feature_covariance(h), np.eye(3) / 3, atol=1e-15)

    def test_trace_one(self):
        c = normalized_feature_covariance(np.random.default_rng(8).standard_normal((10, 6)))
        assert np.trace(c) == pytest.approx(1.0, abs=1e-10)
        np.testing.assert_allclose(c, c.T)
        assert np.linalg.eigvalsh(c).min() >= -1e-12

    def test_zero(self):
        with pytest.raises(ValueError):
            normalized_feature_covariance(np.zeros((3, 2)))


class TestSrank:
    def test_flat(self):
        assert srank([1, 1, 1, 1], 0.1) == 4

    def test_dominant(self):
        assert srank([10, 1, 1], 0.25) == 1

    def test_bruteforce_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            s = np.sort(rng.exponential(size=int(rng.integers(1, 20))))[::-1]
            delta = float(rng.uniform(0.01, 0.9))
            expect = next(k for k in range(1, s.size + 1) if s[:k].sum() / s.sum() >= 1 - delta)
            assert srank(s, delta) == expect

    def test_errors(self):
        with pytest.raises(ValueError):
            srank([0.0, 0.0], 0.1)
        with pytest.raises(ValueError):
            srank([1.0, 2.0], 0.1)
        with pytest.raises(ValueError):
            srank([1.0], 1.0)


class TestBoundCheck:
    def test_slack(self):
        assert BoundCheck(1.0 + 5e-10, 1.0, "x").holds
        assert not BoundCheck(1.0 + 2e-9, 1.0, "x").holds

    def test_not_applicable(self):
        c = BoundCheck.not_applicable("x", eps=2.0)
        assert not c.applicable and c.holds


class TestTheorem1:
    def net(self, seed=0):
        return init_network(Architecture.mlp([5, 7, 6, 3], bias=False), seed)

    def test_identical(self):
        p = self.net()
        z = np.random.default_rng(0).standard_normal((9, 5))
        c = check_theorem1(p, p.copy(), z, 2)
        assert c.measured == 0.0 and c.bound == 0.0 and c.holds

    def test_small_perturbation(self):
        p = self.net()
        rng = np.random.default_rng(1)
        q = p.copy()
        q.layers[1].weight += 1e-6 * rng.standard_normal(q.layers[1].weight.shape)
        z = rng.standard_normal((9, 5))
        for layer in range(3):
            c = check_theorem1(p, q, z, layer)
            assert c.holds and c.measured <= c.bound

    def test_layer_out_of_range(self):
        p = self.net()
        with pytest.raises(IndexError):
            check_theorem1(p, p, np.ones((2, 5)), 3)

    def test_dead_features(self):
        p = self.net()
        p.layers[0].weight[:] = 0.0
        with pytest.raises(ValueError):
            check_theorem1(p, p, np.ones((2, 5)), 1)


class TestTheorem3:
    def test_orthonormal_whitened_equality(self):
        rng = np.random.default_rng(0)
        w = random_orthonormal(rng, 8, 5)
        z = whiten(rng.standard_normal((40, 8)))
        delta = 0.1
        c = check_theorem3(w, z, delta)
        expect = math.ceil((1 - delta) * 5 - 1e-9)
        assert c.details["eps"] == pytest.approx(0.0, abs=1e-7)
        assert c.details["bound_k"] == expect
        assert c.details["srank"] == expect
        assert c.holds and c.measured == c.bound

    def test_diagonal_near_isometry(self):
        rng = np.random.default_rng(2)
        w = np.diag(rng.uniform(0.9, 1.1, size=4))
        z = whiten(rng.standard_normal((30, 4)))
        assert check_theorem3(w, z, 0.1).holds

    def test_not_applicable(self):
        w = 3.0 * np.eye(3)
        z = whiten(np.random.default_rng(0).standard_normal((10, 3)))
        assert not check_theorem3(w, z, 0.1).applicable

    def test_whiten_identity(self):
        z = whiten(np.random.default_rng(3).standard_normal((20, 4)) * [1, 2, 3, 4])
        np.testing.assert_allclose(z.T @ z / 20, np.eye(4), atol=1e-12)

    def test_whiten_needs_samples(self):
        with pytest.raises(ValueError):
            whiten(np.ones((2, 3)))


class TestActivityScores:
    def test_identity(self):
        np.testing.assert_allclose(activity_scores_closed_form(np.eye(4)), 1.0)

    def test_column_norms(self):
        w = np.diag([1.0, 1.0, 2.0])
        np.testing.assert_allclose(activity_scores_closed_form(w), [0.75, 0.75, 1.5])

    def test_mean_one(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            s = activity_scores_closed_form(rng.standard_normal((6, 9)))
            assert s.mean() == pytest.approx(1.0, abs=1e-10)
            assert np.all(s >= 0)

    def test_zero_matrix(self):
        with pytest.raises(ValueError):
            activity_scores_closed_form(np.zeros((3, 3)))

    def test_monte_carlo(self):
        rng = np.random.default_rng(12)
        w = rng.standard_normal((16, 8))
        acc = np.zeros(8)
        n, chunk = 1_000_000, 100_000
        for _ in range(n // chunk):
            z = rng.standard_normal((chunk, 16))
            acc += np.maximum(z @ w, 0.0).sum(axis=0)
        mc = acc / n
        np.testing.assert_allclose(activity_scores_closed_form(w), mc / mc.mean(), rtol=0.01)

    def test_empirical_scores(self):
        acts = np.array([[0.0, 2.0], [0.0, 2.0]])
        np.testing.assert_allclose(empirical_activity_scores(acts), [0.0, 2.0])
        np.testing.assert_array_equal(empirical_activity_scores(np.zeros((2, 3))), 0.0)


class TestTheorem4AndDormancy:
    def test_orthonormal(self):
        c = check_theorem4(random_orthonormal(np.random.default_rng(0), 6, 4))
        assert c.holds
        assert c.details["lo"] == pytest.approx(1.0, abs=1e-6)

    def test_diagonal(self):
        c = check_theorem4(np.diag([1.05, 0.95]))
        eps = math.sqrt((1.05 ** 2 - 1) ** 2 + (0.95 ** 2 - 1) ** 2)
        assert c.details["eps"] == pytest.approx(eps)
        assert c.holds

    def test_not_applicable(self):
        assert not check_theorem4(2 * np.eye(2)).applicable

    def test_dormant_examples(self):
        assert dormant_count(np.ones(5), 0.025) == 0
        assert dormant_count([0.01, 0.5, 1.49], 0.025) == 1
        assert dormant_count([0.025], 0.025) == 0  # strict inequality

    def test_dormant_tau_range(self):
        with pytest.raises(ValueError):
            dormant_count([1.0], 0.0)

    def test_corollary_threshold(self):
        assert corollary_dfi_threshold(0.025) == pytest.approx(((1 - 0.025 ** 2) / (1 + 0.025 ** 2)) ** 2)
        assert corollary_dfi_threshold(0.025) == pytest.approx(0.9975, abs=1e-4)

    def test_corollary_edge_case(self):
        # one shrunk column carrying all the deviation, just under the threshold
        thr = corollary_dfi_threshold(0.025)
        g = np.ones(10)
        g[0] = 1 - math.sqrt(thr) + 1e-12
        w = random_orthonormal(np.random.default_rng(5), 12, 10) * np.sqrt(g)
        assert dfi(w, "columns") <= thr
        assert dormant_count(activity_scores_closed_form(w), 0.025) == 0


class TestLemma:
    def test_examples(self):
        assert check_spectral_lemma(np.eye(3)).holds
        assert check_spectral_lemma(np.diag([1.2, 0.7, 1.0])).holds
        rng = np.random.default_rng(0)
        for _ in range(20):
            assert check_spectral_lemma(rng.standard_normal((5, 3))).holds


class TestTheorem2:
    def test_single_layer_formula(self):
        assert theorem2_bound([1.0], 1.0, 5.0) == 1.0

    def test_two_orthonormal_layers(self):
        assert theorem2_bound([1.0, 1.0], 1.0, 3.0) == 2.0 + 2.0 * 3.0

    def test_three_layers(self):
        nus = [2.0, 3.0, 5.0]
        expect = (15 + 10 + 6) + 2 * 0.5 * (5 + 3 + 2)
        assert theorem2_bound(nus, 1.0, 0.5) == pytest.approx(expect)

    def test_random_net_holds(self):
        rng = np.random.default_rng(3)
        p = init_network(Architecture.mlp([4, 6, 3], bias=False), 3)
        z = whiten(rng.standard_normal((20, 4)))
        y = rng.standard_normal((20, 3))
        c = check_theorem2(p, z, y, "squared")
        assert c.holds
        assert c.details["converged"]

    def test_rejects_cross_entropy(self):
        p = init_network(Architecture.mlp([2, 2], bias=False), 0)
        with pytest.raises(ValueError):
            check_theorem2(p, np.eye(2), np.array([0, 1]), "cross_entropy")

    def test_rejects_biases(self):
        p = init_network(Architecture.mlp([2, 2]), 0)
        with pytest.raises(ValueError):
            check_theorem2(p, whiten(np.random.default_rng(0).standard_normal((5, 2))),
                           np.zeros((5, 2)))

    def test_rejects_unwhitened(self):
        p = init_network(Architecture.mlp([2, 2], bias=False), 0)
        with pytest.raises(ValueError):
            check_theorem2(p, 3 * np.eye(2), np.zeros((2, 2)))


class TestHessianSigmaMax:
    def test_linear_whitened_squared(self):
        # Hessian is Sigma_Z kron I, so its top eigenvalue is 1 for whitened inputs
        rng = np.random.default_rng(0)
        p = init_network(Architecture.mlp([2, 2], bias=False), 0)
        z = whiten(rng.standard_normal((12, 2)))
        y = rng.standard_normal((12, 2))
        est = hessian_sigma_max(p, z, y, "squared", tol=1e-12)
        assert est.value == pytest.approx(1.0, rel=1e-6)
        h = explicit_hessian(p, z, y, "squared")
        np.testing.assert_allclose(h, np.kron(np.eye(2), z.T @ z / 12), atol=1e-12)

    def test_interpolating_point_gauss_newton(self):
        rng = np.random.default_rng(1)
        p = init_network(Architecture.mlp([3, 5, 2], bias=False), 4)
        z = rng.standard_normal((6, 3))
        y = forward(p, z)[0]
        j = output_jacobian(p, z)
        gn = j.T @ j / 6
        top = np.max(np.linalg.eigvalsh(gn))
        est = hessian_sigma_max(p, z, y, "squared", tol=1e-12, max_iter=20000)
        assert est.value == pytest.approx(top, rel=1e-5)

    def test_layer_scaling_consistent_with_oracle(self):
        rng = np.random.default_rng(2)
        p = init_network(Architecture.mlp([3, 4, 2], bias=False), 5)
        z = rng.standard_normal((8, 3))
        y = rng.integers(0, 2, size=8)
        for c in (0.5, 1.0, 3.0):
            q = p.copy()
            q.layers[0].weight *= c
            h = explicit_hessian(q, z, y, "cross_entropy")
            top = np.max(np.abs(np.linalg.eigvalsh((h + h.T) / 2)))
            est = hessian_sigma_max(q, z, y, "cross_entropy", tol=1e-12, max_iter=20000)
            assert est.value == pytest.approx(top, rel=1e-4)

    def test_never_overestimates(self):
        rng = np.random.default_rng(3)
        p = init_network(Architecture.mlp([3, 4, 2], bias=False), 6)
        z = rng.standard_normal((8, 3))
        y = rng.integers(0, 2, size=8)
        h = explicit_hessian(p, z, y, "cross_entropy")
        top = np.max(np.abs(np.linalg.eigvalsh((h + h.T) / 2)))
        est = hessian_sigma_max(p, z, y, "cross_entropy", max_iter=3)
        assert est.value <= top * (1 + 1e-6)


class TestPlasticityReport:
    def test_lengths_and_values(self):
        p = init_network(Architecture.mlp([4, 6, 5, 3]), 0)
        x = np.random.default_rng(0).standard_normal((50, 4))
        rep = plasticity_report(p, x, reference=p)
        assert len(rep.dfi) == len(rep.srank) == len(rep.dormant) == len(rep.activity_scores) == 3
        assert rep.sfe_total == 0.0
        assert rep.dfi[0] == pytest.approx(dfi(p.layers[0].weight))
        rows = rep.rows()
        assert [r["layer"] for r in rows] == [0, 1, 2]

    def test_weight_only_mode(self):
        p = fire_network(init_network(Architecture.mlp([6, 6, 6]), 1), 30)
        rep = plasticity_report(p)
        assert rep.sfe_total is None
        assert rep.srank == [6, 6]
        assert rep.dormant == [0, 0]
        assert max(rep.dfi) < 1e-8

    def test_dead_unit_counts_as_dormant(self):
        p = init_network(Architecture.mlp([4, 6, 3]), 2)
        p.layers[0].weight[2] = 0.0
        x = np.random.default_rng(1).standard_normal((100, 4))
        rep = plasticity_report(p, x)
        assert rep.dormant[0] >= 1
