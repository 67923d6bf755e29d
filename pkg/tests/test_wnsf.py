import numpy as np
import pytest

from oracles import random_stable_theta, true_stacked_fir

from cascadeid.errors import (
    IdentifiabilityError,
    InstabilityError,
    ParameterError,
)
from cascadeid.fir import FirEstimate, estimate_fir, fir_covariance
from cascadeid.lti import OrderSpec, filt
from cascadeid.netsim import (
    CascadeModel,
    DataRecord,
    InputSpec,
    ThetaVector,
    generate_dataset,
    white_noise,
)
from cascadeid.wnsf import (
    Variant,
    WnsfConfig,
    build_q_cascade,
    build_q_siso,
    build_t_cascade,
    residual_covariance,
    step2_ls,
    step3_wls,
    wnsf_identify,
    wnsf_siso,
)


def noise_free(model):
    return CascadeModel(g1=model.g1, g2=model.g2, g3=model.g3)


class TestBuildQSiso:
    def test_annihilates_true_parameters(self, model):
        from cascadeid.lti import impulse_response

        n = 60
        g = impulse_response(model.g2, n)
        theta = ThetaVector.from_transfer_functions([model.g2])
        resid = g - build_q_siso(g, model.g2.orders) @ theta.values
        assert np.max(np.abs(resid)) <= 1e-12  # relation is exact row by row

    def test_pure_fir_model_recovers_g(self):
        rng = np.random.default_rng(0)
        g = rng.normal(size=10)
        orders = OrderSpec(n_b=4, n_f=0, n_k=0)
        q = build_q_siso(g, orders)
        theta = step2_ls(q, g, orders)
        np.testing.assert_allclose(theta.values, g[:4], atol=1e-12)

    def test_unit_impulse_layout(self):
        g = np.zeros(6)
        g[0] = 1.0
        q = build_q_siso(g, OrderSpec(n_b=1, n_f=1, n_k=0))
        expected_f = -np.array([0, 1, 0, 0, 0, 0.0])
        expected_b = np.array([1, 0, 0, 0, 0, 0.0])
        np.testing.assert_array_equal(q[:, 0], expected_f)
        np.testing.assert_array_equal(q[:, 1], expected_b)


class TestBuildQCascade:
    def test_annihilates_truth_both_variants(self, model, theta_true):
        g = true_stacked_fir(model, 60)
        for variant in Variant:
            resid = g - build_q_cascade(g, model.orders, variant) @ theta_true.values
            assert np.max(np.abs(resid)) <= 1e-5, variant

    def test_dimensions(self, model):
        q = build_q_cascade(np.zeros(160), model.orders, Variant.WNSF1)
        assert q.shape == (160, 13)

    def test_zero_g_leaves_delay_identity_only(self, model):
        q = build_q_cascade(np.zeros(160), model.orders, Variant.WNSF1)
        # only the second row block (numerator identity of module 2) is nonzero
        assert q[:40].any() == False
        assert q[80:].any() == False
        sub = q[40:80, 4:8]
        np.testing.assert_array_equal(sub[:, :2], np.zeros((40, 2)))
        assert sub[0, 2] == 1.0 and sub[1, 3] == 1.0

    def test_affine_in_g(self, model):
        rng = np.random.default_rng(1)
        ga, gb = rng.normal(size=(2, 120))
        alpha = 0.3
        for variant in Variant:
            mix = build_q_cascade(alpha * ga + (1 - alpha) * gb, model.orders, variant)
            combo = alpha * build_q_cascade(ga, model.orders, variant) + (
                1 - alpha
            ) * build_q_cascade(gb, model.orders, variant)
            np.testing.assert_allclose(mix, combo, atol=1e-14)


class TestBuildTCascade:
    def test_zero_theta_structure(self, model):
        theta = ThetaVector(np.zeros(13), model.orders)
        for variant in Variant:
            t = build_t_cascade(theta, 10, variant)
            np.testing.assert_array_equal(t, np.eye(40))

    def test_unit_determinant(self, model):
        rng = np.random.default_rng(2)
        theta = ThetaVector(rng.normal(size=13), model.orders)
        for variant in Variant:
            sign, logdet = np.linalg.slogdet(build_t_cascade(theta, 25, variant))
            assert sign == 1.0
            assert abs(logdet) < 1e-10

    def test_linearization_identity(self, model):
        rng = np.random.default_rng(3)
        n = 30
        for _ in range(10):
            theta = ThetaVector(rng.normal(size=13), model.orders)
            ga, gb = rng.normal(size=(2, 4 * n))
            for variant in Variant:
                ra = ga - build_q_cascade(ga, model.orders, variant) @ theta.values
                rb = gb - build_q_cascade(gb, model.orders, variant) @ theta.values
                t = build_t_cascade(theta, n, variant)
                err = np.max(np.abs(ra - rb - t @ (ga - gb)))
                assert err <= 1e-12 * np.max(np.abs(ga - gb))


class TestStep2:
    def test_noiseless_recovery(self, model, theta_true):
        data = generate_dataset(noise_free(model), 20000, seed=8)
        est = estimate_fir(data, 60)
        q = build_q_cascade(est.g_hat, model.orders, Variant.WNSF1)
        theta = step2_ls(q, est.g_hat, model.orders)
        assert np.max(np.abs(theta.values - theta_true.values)) <= 1e-4

    def test_orthonormal_regressor(self):
        rng = np.random.default_rng(4)
        q, _ = np.linalg.qr(rng.normal(size=(20, 4)))
        g = rng.normal(size=20)
        orders = OrderSpec(n_b=2, n_f=2, n_k=0)
        theta = step2_ls(q, g, orders)
        np.testing.assert_allclose(theta.values, q.T @ g, atol=1e-12)

    def test_duplicated_column_rejected(self):
        rng = np.random.default_rng(5)
        base = rng.normal(size=(20, 3))
        q = np.column_stack([base, base[:, 1]])
        with pytest.raises(IdentifiabilityError, match="rank"):
            step2_ls(q, rng.normal(size=20), OrderSpec(n_b=2, n_f=2, n_k=0))


class TestResidualCovariance:
    def test_zero_at_truth_on_noiseless_data(self, model, theta_true):
        data = generate_dataset(noise_free(model), 2000, seed=9)
        lam = residual_covariance(data, theta_true)
        assert np.max(np.abs(np.diag(lam))) <= 1e-10
        assert lam[0, 1] == 0.0 and lam[1, 0] == 0.0

    def test_recovers_noise_variances(self, model, theta_true):
        data = generate_dataset(model, 60000, seed=10)
        lam = residual_covariance(data, theta_true)
        np.testing.assert_allclose(np.diag(lam), [2.0, 3.0], rtol=0.05)

    def test_zero_output_zero_gain(self, model):
        n = 100
        data = DataRecord(
            u1=white_noise(n, 1.0, 0), u2=white_noise(n, 1.0, 1), y1=np.zeros(n), y2=np.zeros(n)
        )
        zero_gain = ThetaVector(
            np.concatenate([[0, 0, 0, 0], [0, 0, 0, 0], [0, 0, 0, 0, 0.0]]),
            model.orders,
        )
        lam = residual_covariance(data, zero_gain)
        np.testing.assert_array_equal(lam, np.zeros((2, 2)))

    def test_unstable_theta_rejected(self, model, theta_true):
        data = generate_dataset(model, 500, seed=11)
        bad = theta_true.with_values(theta_true.values * np.where(
            np.arange(13) == 0, -2.0, 1.0
        ))
        with pytest.raises(InstabilityError):
            residual_covariance(data, bad)


class TestStep3:
    def _setup(self, model, n=20, n_samples=2000, seed=12):
        data = generate_dataset(model, n_samples, seed=seed)
        est = estimate_fir(data, n)
        q = build_q_cascade(est.g_hat, model.orders, Variant.WNSF1)
        theta_ls = step2_ls(q, est.g_hat, model.orders)
        return data, est, q, theta_ls

    def test_identity_weighting_reduces_to_step2(self, model):
        data, est, q, theta_ls = self._setup(model)
        n4 = 4 * est.n
        ident = FirEstimate(g_hat=est.g_hat, info=np.eye(n4), n=est.n)
        p = fir_covariance(ident, (1.0, 1.0))
        theta = step3_wls(q, est.g_hat, np.eye(n4), p, model.orders)
        np.testing.assert_allclose(theta.values, theta_ls.values, rtol=1e-8, atol=1e-10)

    def test_noiseless_recovery(self, model, theta_true):
        data = generate_dataset(noise_free(model), 20000, seed=8)
        est = estimate_fir(data, 60)
        q = build_q_cascade(est.g_hat, model.orders, Variant.WNSF1)
        theta_ls = step2_ls(q, est.g_hat, model.orders)
        t = build_t_cascade(theta_ls, 60, Variant.WNSF1)
        p = fir_covariance(est, (1.0, 1.0))
        theta = step3_wls(q, est.g_hat, t, p, model.orders)
        assert np.max(np.abs(theta.values - theta_true.values)) <= 1e-4

    def test_weighted_normal_equations_hold(self, model):
        data, est, q, theta_ls = self._setup(model)
        t = build_t_cascade(theta_ls, est.n, Variant.WNSF1)
        lam = np.diag(residual_covariance(data, theta_ls))
        p = fir_covariance(est, lam)
        theta = step3_wls(q, est.g_hat, t, p, model.orders)
        # independent dense reconstruction of the weighting
        w = np.linalg.inv(t @ p.dense() @ t.T)
        resid = q.T @ w @ (est.g_hat - q @ theta.values)
        scale = np.linalg.norm(q.T @ w @ est.g_hat)
        assert np.linalg.norm(resid) <= 1e-9 * scale

    def test_weighting_scale_invariance(self, model):
        data, est, q, theta_ls = self._setup(model)
        t = build_t_cascade(theta_ls, est.n, Variant.WNSF1)
        a = step3_wls(q, est.g_hat, t, fir_covariance(est, (2.0, 3.0)), model.orders)
        b = step3_wls(
            q, est.g_hat, t, fir_covariance(est, (2.0 * 7, 3.0 * 7)), model.orders
        )
        np.testing.assert_allclose(a.values, b.values, atol=1e-10)


class TestWnsfIdentify:
    def test_noiseless_recovery_and_variant_agreement(self, model, theta_true):
        # at FIR order 60 the truncation tail is small enough for the two
        # linearizations to agree far beyond the recovery accuracy itself
        data = generate_dataset(noise_free(model), 20000, seed=14)
        cfg1 = WnsfConfig(n_grid=(60,), variant=Variant.WNSF1)
        cfg3 = WnsfConfig(n_grid=(60,), variant=Variant.WNSF3)
        rep1 = wnsf_identify(data, model.orders, cfg1)
        rep3 = wnsf_identify(data, model.orders, cfg3)
        assert np.max(np.abs(rep1.theta.values - theta_true.values)) <= 1e-4
        assert np.max(np.abs(rep1.theta.values - rep3.theta.values)) <= 1e-8

    def test_deterministic_report(self, model):
        data = generate_dataset(model, 1500, seed=15)
        cfg = WnsfConfig(n_grid=(20, 30))
        a = wnsf_identify(data, model.orders, cfg)
        b = wnsf_identify(data, model.orders, cfg)
        np.testing.assert_array_equal(a.theta.values, b.theta.values)
        assert a.chosen_n == b.chosen_n
        assert a.per_order == b.per_order
        assert a.converged == b.converged

    def test_order_selection_prefers_lower_criterion(self, model):
        data = generate_dataset(model, 4000, seed=16)
        rep = wnsf_identify(data, model.orders, WnsfConfig(n_grid=(20, 30, 40)))
        costs = [d.cost for d in rep.per_order]
        chosen = [d.n for d in rep.per_order][int(np.argmin(costs))]
        assert rep.chosen_n == chosen

    def test_rejects_tiny_fir_order(self, model):
        data = generate_dataset(model, 500, seed=17)
        with pytest.raises(ParameterError):
            wnsf_identify(data, model.orders, WnsfConfig(n_grid=(3,)))

    def test_iteration_cap_respected(self, model):
        data = generate_dataset(model, 700, seed=18)
        rep = wnsf_identify(data, model.orders, WnsfConfig(n_grid=(20,), max_iter=2))
        assert all(d.iterations <= 2 for d in rep.per_order)


class TestWnsfSiso:
    def _dataset(self, model, n_samples, seed, noise=1.0):
        u = filt(InputSpec().shaping, white_noise(n_samples, 1.0, (seed, 50)))
        y = filt(model.g1, u)
        if noise > 0:
            y = y + white_noise(n_samples, noise, (seed, 51))
        return u, y

    def test_noiseless_recovery(self, model):
        u, y = self._dataset(model, 8000, seed=19, noise=0.0)
        rep = wnsf_siso(u, y, model.g1.orders, WnsfConfig(n_grid=(40,)))
        truth = ThetaVector.from_transfer_functions([model.g1])
        assert np.max(np.abs(rep.theta.values - truth.values)) <= 1e-6

    def test_monte_carlo_bias(self, model):
        # consistency: estimated bias within 3 empirical standard errors
        truth = ThetaVector.from_transfer_functions([model.g1])
        estimates = []
        for run in range(200):
            u, y = self._dataset(model, 10000, seed=(100, run))
            rep = wnsf_siso(u, y, model.g1.orders, WnsfConfig(n_grid=(30,)))
            estimates.append(rep.theta.values)
        estimates = np.array(estimates)
        bias = estimates.mean(axis=0) - truth.values
        stderr = estimates.std(axis=0, ddof=1) / np.sqrt(len(estimates))
        assert np.all(np.abs(bias) <= 3 * stderr)

    def test_chooses_order_by_criterion(self, model):
        u, y = self._dataset(model, 4000, seed=20)
        rep = wnsf_siso(u, y, model.g1.orders, WnsfConfig(n_grid=(20, 30)))
        assert rep.chosen_n in (20, 30)
        assert rep.converged


class TestRandomStructures:
    def test_linearization_identity_random_orders(self):
        # identity holds for heterogeneous orders and delays, both variants
        rng = np.random.default_rng(21)
        orders = (
            OrderSpec(n_b=3, n_f=1, n_k=2),
            OrderSpec(n_b=1, n_f=3, n_k=0),
            OrderSpec(n_b=2, n_f=2, n_k=1),
        )
        n = 25
        for _ in range(5):
            theta = random_stable_theta(rng, orders)
            ga, gb = rng.normal(size=(2, 4 * n))
            for variant in Variant:
                ra = ga - build_q_cascade(ga, orders, variant) @ theta.values
                rb = gb - build_q_cascade(gb, orders, variant) @ theta.values
                t = build_t_cascade(theta, n, variant)
                err = np.max(np.abs(ra - rb - t @ (ga - gb)))
                assert err <= 1e-12 * np.max(np.abs(ga - gb))

    def test_null_space_consistency_random_model(self):
        rng = np.random.default_rng(22)
        orders = (
            OrderSpec(n_b=2, n_f=2, n_k=1),
            OrderSpec(n_b=2, n_f=2, n_k=0),
            OrderSpec(n_b=3, n_f=2, n_k=0),
        )
        theta = random_stable_theta(rng, orders)
        m = CascadeModel.from_theta(theta)
        g = true_stacked_fir(m, 50)
        for variant in Variant:
            resid = g - build_q_cascade(g, orders, variant) @ theta.values
            assert np.max(np.abs(resid)) <= 1e-10 * max(np.max(np.abs(g)), 1.0)
