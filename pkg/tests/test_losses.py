import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.optimize import minimize_scalar
from scipy.special import comb

from nclasso import (DesignSpec, ModelSpec, NoiseSpec, empirical_risk,
                     empirical_risk_grad, link_eval, loss_constants,
                     loss_value, true_risk_oracle, tukey_rho, tukey_rho_deriv,
                     tukey_deriv_sup)
from nclasso.losses import loss_deriv

from conftest import fd_risk_gradient, make_instance

T0 = 4.685


class TestTukeyRho:
    def test_zero(self):
        assert tukey_rho(0.0, T0) == 0.0

    def test_saturates_beyond_cutoff(self):
        assert tukey_rho(5.0, T0) == 1.0
        assert tukey_rho(-100.0, T0) == 1.0

    def test_half_cutoff_closed_form(self):
        # 1 - (1 - 1/4)^3 = 37/64
        assert tukey_rho(T0 / 2, T0) == pytest.approx(37.0 / 64.0, abs=1e-15)

    def test_range_and_monotone_in_abs(self):
        t = np.linspace(0, 2 * T0, 2001)
        vals = tukey_rho(t, T0)
        assert np.all((vals >= 0) & (vals <= 1))
        assert np.all(np.diff(vals) >= 0)

    @given(st.floats(-50, 50), st.floats(0.1, 20))
    @settings(max_examples=200, deadline=None)
    def test_even(self, t, t0):
        assert tukey_rho(-t, t0) == tukey_rho(t, t0)

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            tukey_rho(np.nan, T0)
        with pytest.raises(ValueError):
            tukey_rho(np.inf, T0)
        with pytest.raises(ValueError):
            tukey_rho(1.0, 0.0)
        with pytest.raises(ValueError):
            tukey_rho(1.0, -1.0)


class TestTukeyRhoDeriv:
    def test_zero_points(self):
        assert tukey_rho_deriv(0.0, T0) == 0.0
        assert tukey_rho_deriv(T0, T0) == 0.0
        assert tukey_rho_deriv(2 * T0, T0) == 0.0

    def test_max_location_and_value(self):
        peak = tukey_rho_deriv(T0 / math.sqrt(5), T0)
        assert peak == pytest.approx(tukey_deriv_sup(T0), rel=1e-14)
        # brute-force maximization agrees to 1e-10
        grid = np.linspace(0, T0, 200_001)
        rough = grid[np.argmax(tukey_rho_deriv(grid, T0))]
        res = minimize_scalar(lambda t: -tukey_rho_deriv(t, T0),
                              bounds=(rough - 1e-3, rough + 1e-3), method="bounded",
                              options={"xatol": 1e-13})
        assert -res.fun == pytest.approx(tukey_deriv_sup(T0), abs=1e-10)

    def test_matches_fd_of_rho(self):
        ts = np.linspace(-1.2 * T0, 1.2 * T0, 57)
        h = 1e-6
        fd = (tukey_rho(ts + h, T0) - tukey_rho(ts - h, T0)) / (2 * h)
        np.testing.assert_allclose(tukey_rho_deriv(ts, T0), fd, atol=5e-9)

    @given(st.floats(-50, 50), st.floats(0.1, 20))
    @settings(max_examples=200, deadline=None)
    def test_odd_and_signed(self, t, t0):
        assert tukey_rho_deriv(-t, t0) == -tukey_rho_deriv(t, t0)
        if t >= 0:
            assert tukey_rho_deriv(t, t0) >= 0

    def test_bounded_by_sup(self):
        t = np.linspace(-2 * T0, 2 * T0, 100_001)
        assert np.max(np.abs(tukey_rho_deriv(t, T0))) <= tukey_deriv_sup(T0) + 1e-15


class TestLinkEval:
    def test_logistic_center(self):
        assert link_eval("logistic", 0.0) == (0.5, 0.25)

    def test_tanh_center(self):
        assert link_eval("tanh", 0.0) == (0.0, 1.0)

    def test_logistic_large_t_high_precision(self):
        import mpmath
        mpmath.mp.dps = 40
        ref = 1 / (1 + mpmath.e ** (-10))
        value, deriv = link_eval("logistic", 10.0)
        assert value == pytest.approx(float(ref), rel=1e-14)
        assert deriv == pytest.approx(float(ref * (1 - ref)), rel=1e-12)
        assert 0 < deriv < 1e-4 < value < 1

    def test_ranges_and_positive_derivs(self):
        # stay inside the float64-representable range (tanh saturates ~19)
        for kind, lo, hi, width in (("logistic", 0, 1, 30), ("tanh", -1, 1, 18)):
            t = np.linspace(-width, width, 1001)
            value, deriv = link_eval(kind, t)
            assert np.all((value > lo) & (value < hi))
            assert np.all(deriv > 0)
        for kind in ("logistic", "tanh"):
            value, _ = link_eval(kind, np.linspace(-8, 8, 1001))
            assert np.all(np.diff(value) > 0)

    def test_invalid(self):
        with pytest.raises(ValueError):
            link_eval("probit", 0.0)
        with pytest.raises(ValueError):
            link_eval("logistic", np.nan)


class TestLossConstants:
    def test_robust_constants(self):
        consts = loss_constants(ModelSpec.robust(np.array([1.0]), t0=T0))
        assert consts.m_rho == max(1.0, (96 / (25 * math.sqrt(5))) / T0) == 1.0
        assert consts.lipschitz_l == consts.m_rho
        # small cutoff pushes sup|rho'| above 1
        consts_small = loss_constants(ModelSpec.robust(np.array([1.0]), t0=0.1))
        assert consts_small.m_rho == pytest.approx((96 / (25 * math.sqrt(5))) / 0.1)

    def test_binary_constants(self):
        consts = loss_constants(ModelSpec.binary(np.array([1.0])))
        assert consts.m_sigma == 0.25
        assert consts.lipschitz_l == 0.75

    def test_nls_constants(self):
        consts = loss_constants(ModelSpec.nls(np.array([1.0])))
        assert consts.m_f == 1.0
        assert consts.lipschitz_l == 4.0


class TestModelSpec:
    def test_rejects_zero_theta0(self):
        with pytest.raises(ValueError):
            ModelSpec.robust(np.zeros(4))

    def test_rejects_binary_tanh(self):
        with pytest.raises(ValueError):
            ModelSpec.binary(np.array([1.0]), link="tanh")

    def test_rejects_bad_hyperparameters(self):
        with pytest.raises(ValueError):
            ModelSpec.robust(np.array([1.0]), t0=-1.0)
        with pytest.raises(ValueError):
            ModelSpec.nls(np.array([1.0]), noise_sd=-0.5)

    def test_sparsity_bounds(self):
        model = ModelSpec.robust(np.array([0.0, 2.0, 0.0]))
        assert model.s0 == 1
        assert model.d == 3


class TestLossValue:
    def test_robust_zero_residual(self):
        model = ModelSpec.robust(np.array([1.0]))
        assert loss_value(model, 3.0, 3.0) == 0.0

    def test_binary_center(self):
        model = ModelSpec.binary(np.array([1.0]))
        assert loss_value(model, 0.0, 1.0) == 0.25

    def test_nls_center(self):
        model = ModelSpec.nls(np.array([1.0]))
        assert loss_value(model, 0.0, 0.0) == 0.0

    def test_binary_rejects_nonbinary_response(self):
        model = ModelSpec.binary(np.array([1.0]))
        with pytest.raises(ValueError):
            loss_value(model, 0.0, 0.5)

    def test_nonnegative_and_bounded(self, rng):
        t = rng.normal(size=10_000) * 3
        robust = ModelSpec.robust(np.array([1.0]))
        vals = loss_value(robust, t, rng.normal(size=t.size) * 5)
        assert np.all(vals >= 0) and np.all(vals <= loss_constants(robust).m_rho)
        binary = ModelSpec.binary(np.array([1.0]))
        vals = loss_value(binary, t, (rng.random(t.size) < 0.5).astype(float))
        assert np.all(vals >= 0) and np.all(vals <= 1.0)


class TestLipschitz:
    """Assumption-5(iii)-style bounds, exactly as stated, on 1e4 random pairs."""

    N = 10_000

    def test_robust(self, rng):
        model = ModelSpec.robust(np.array([1.0]), t0=T0)
        lip = loss_constants(model).lipschitz_l
        t, tp = rng.normal(size=(2, self.N)) * 8
        y = rng.normal(size=self.N) * 8
        gap = np.abs(loss_value(model, t, y) - loss_value(model, tp, y))
        assert np.all(gap <= lip * np.abs(t - tp) + 1e-12)

    def test_binary(self, rng):
        model = ModelSpec.binary(np.array([1.0]))
        lip = loss_constants(model).lipschitz_l
        t, tp = rng.normal(size=(2, self.N)) * 8
        y = (rng.random(self.N) < 0.5).astype(float)
        gap = np.abs(loss_value(model, t, y) - loss_value(model, tp, y))
        assert np.all(gap <= lip * np.abs(t - tp) + 1e-12)

    def test_nls_decomposition_term(self, rng):
        # the bounded term (f(t) - f(y~))^2 with y~ = an index value
        model = ModelSpec.nls(np.array([1.0]))
        lip = loss_constants(model).lipschitz_l
        t, tp, ytilde = rng.normal(size=(3, self.N)) * 8
        f_y = np.tanh(ytilde)
        gap = np.abs((np.tanh(t) - f_y) ** 2 - (np.tanh(tp) - f_y) ** 2)
        assert np.all(gap <= lip * np.abs(t - tp) + 1e-12)
        assert np.all((np.tanh(t) - f_y) ** 2 <= 4.0)


class TestEmpiricalRisk:
    def test_single_row_zero(self):
        model = ModelSpec.robust(np.array([2.0, 0.0]))
        x = np.array([[1.0, 1.0]])
        y = x @ np.array([0.5, -0.5])
        assert empirical_risk(model, (x, y), np.array([0.5, -0.5])) == 0.0

    def test_two_residuals_by_hand(self):
        # residuals (0, 2) at t0=1: (rho(0) + rho(2)) / 2 = (0 + 1)/2
        model = ModelSpec.robust(np.array([1.0]), t0=1.0)
        x = np.array([[1.0], [1.0]])
        theta = np.array([1.0])
        y = np.array([1.0, 3.0])
        assert empirical_risk(model, (x, y), theta) == 0.5

    def test_noiseless_zero_at_truth(self):
        for kind in ("robust", "nls"):
            model, data = make_instance(kind, noise_sd=0.0, nls_sd=0.0, seed=3)
            assert empirical_risk(model, data, model.theta0) == 0.0

    def test_dimension_mismatch(self):
        model, data = make_instance("robust", d=8)
        with pytest.raises(ValueError):
            empirical_risk(model, data, np.zeros(9))
        with pytest.raises(ValueError):
            empirical_risk_grad(model, data, np.zeros(7))


class TestEmpiricalRiskGrad:
    def test_zero_residuals_give_zero_gradient(self):
        model, data = make_instance("robust", noise_sd=0.0, seed=5)
        grad = empirical_risk_grad(model, data, model.theta0)
        np.testing.assert_array_equal(grad, np.zeros(model.d))

    def test_binary_hand_example(self):
        # n=1, x=(1,0), theta=0, y=1: grad = -2 * 0.25 * (1 - 0.5) * x
        model = ModelSpec.binary(np.array([1.0, 0.0]))
        x = np.array([[1.0, 0.0]])
        y = np.array([1.0])
        grad = empirical_risk_grad(model, (x, y), np.zeros(2))
        np.testing.assert_allclose(grad, [-0.25, 0.0], atol=1e-16)

    @pytest.mark.parametrize("kind", ["robust", "binary", "nls"])
    def test_finite_difference_agreement(self, kind, rng):
        model, data = make_instance(kind, n=60, d=6, seed=11)
        for _ in range(10):
            theta = rng.normal(size=6)
            analytic = empirical_risk_grad(model, data, theta)
            numeric = fd_risk_gradient(model, data, theta)
            denom = max(np.linalg.norm(analytic), 1e-8)
            assert np.linalg.norm(analytic - numeric) / denom <= 1e-6

    def test_loss_deriv_matches_value_fd(self, rng):
        for kind in ("robust", "binary", "nls"):
            model, _ = make_instance(kind, seed=2)
            t = rng.normal(size=200) * 4
            y = ((rng.random(200) < 0.5).astype(float) if kind == "binary"
                 else rng.normal(size=200) * 2)
            h = 1e-6
            fd = (loss_value(model, t + h, y) - loss_value(model, t - h, y)) / (2 * h)
            np.testing.assert_allclose(loss_deriv(model, t, y), fd, atol=1e-8)


class TestTrueRiskOracle:
    def test_nls_at_truth_matches_noise_variance(self):
        model, _ = make_instance("nls", d=10, s0=4, nls_sd=0.5, seed=21)
        est, se = true_risk_oracle(model, DesignSpec(d=10), model.theta0,
                                   200_000, 77)
        assert abs(est - 0.25) <= 4 * se

    def test_robust_at_truth_matches_quadrature(self):
        model, _ = make_instance("robust", d=10, s0=4, seed=22)
        noise = NoiseSpec.gaussian(1.0)
        # independent oracle: 1-d quadrature of rho against the gaussian density
        inner, _ = quad(lambda e: tukey_rho(e, T0) * math.exp(-e * e / 2)
                        / math.sqrt(2 * math.pi), -T0, T0, epsabs=1e-12)
        tail = 2 * 0.5 * math.erfc(T0 / math.sqrt(2))
        expected = inner + tail
        est, se = true_risk_oracle(model, DesignSpec(d=10), model.theta0,
                                   200_000, 78, noise=noise)
        assert abs(est - expected) <= 4 * se

    def test_binary_at_truth_matches_enumeration(self):
        # X^T theta0 = mag * (sum of s0 signs): enumerate the binomial exactly
        d, s0, mag = 12, 3, 0.7
        model, _ = make_instance("binary", d=d, s0=s0, magnitude=mag, seed=23)
        expected = 0.0
        for k in range(s0 + 1):
            v = mag * (2 * k - s0)
            p = comb(s0, k, exact=True) / 2.0**s0
            sig = 1 / (1 + math.exp(-v))
            expected += p * sig * (1 - sig)
        est, se = true_risk_oracle(model, DesignSpec(d=d), model.theta0,
                                   200_000, 79)
        assert abs(est - expected) <= 4 * se

    def test_reproducible_and_validates(self):
        model, _ = make_instance("binary", d=6, seed=24)
        a = true_risk_oracle(model, DesignSpec(d=6), model.theta0, 1000, 5)
        b = true_risk_oracle(model, DesignSpec(d=6), model.theta0, 1000, 5)
        assert a == b
        with pytest.raises(ValueError):
            true_risk_oracle(model, DesignSpec(d=6), model.theta0, 99, 5)
        robust = ModelSpec.robust(np.ones(6))
        with pytest.raises(ValueError):
            true_risk_oracle(robust, DesignSpec(d=6), np.ones(6), 1000, 5)
