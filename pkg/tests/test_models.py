import math

import numpy as np
import pytest

from doseadapt.models import (
    DoseResponseModel,
    MedGradientError,
    MedSpec,
    ParameterBounds,
    Shape,
    eval_mean,
    eval_shape,
    gradient,
    med,
    med_gradient,
)

SPEC = MedSpec(delta=200.0, dose_range=(0.0, 50.0))
TABLE1 = {
    "beta": DoseResponseModel(Shape.SCALED_BETA, (100, 300), (0.43, 0.6), scal=60.0),
    "emax1": DoseResponseModel(Shape.EMAX, (100, 420), (20,)),
    "emax2": DoseResponseModel(Shape.EMAX, (100, 330), (5,)),
    "logistic1": DoseResponseModel(Shape.LOGISTIC, (98, 302), (17.5, 3.3)),
    "logistic2": DoseResponseModel(Shape.LOGISTIC, (92, 615), (50, 11.5)),
}
TRUE_MED = {"beta": 5.21, "emax1": 18.18, "emax2": 7.69, "logistic1": 19.82, "logistic2": 42.28}


def random_model(rng, shape):
    th0 = rng.uniform(50, 150)
    th1 = rng.uniform(100, 700)
    if shape is Shape.EMAX:
        nl = (rng.uniform(1, 60),)
    elif shape is Shape.LOGISTIC:
        nl = (rng.uniform(2, 60), rng.uniform(1, 20))
    elif shape is Shape.SCALED_BETA:
        nl = (rng.uniform(0.5, 4), rng.uniform(0.5, 4))
    else:
        nl = ()
        th1 = rng.uniform(1, 10)
    return DoseResponseModel(shape, (th0, th1), nl)


def fd_gradient(model, d, step=1e-6):
    """Central finite differences of eval_mean with respect to theta."""
    theta = model.theta()
    out = np.empty(theta.size)
    for i in range(theta.size):
        h = step * max(1.0, abs(theta[i]))
        up, dn = theta.copy(), theta.copy()
        up[i] += h
        dn[i] -= h
        out[i] = (eval_mean(model.replace_theta(up), d) -
                  eval_mean(model.replace_theta(dn), d)) / (2 * h)
    return out


class TestEval:
    def test_emax_at_zero(self):
        assert eval_mean(DoseResponseModel(Shape.EMAX, (100, 420), (20,)), 0.0) == 100.0

    def test_emax_hand_value(self):
        assert eval_mean(TABLE1["emax2"], 5.0) == pytest.approx(100 + 330 * 5 / 10)

    def test_beta_at_zero(self):
        assert eval_mean(TABLE1["beta"], 0.0) == 100.0

    def test_emax_shape_midpoint(self):
        assert eval_shape(TABLE1["emax1"], 20.0) == pytest.approx(0.5)

    def test_linear_shape_is_identity(self):
        m = DoseResponseModel(Shape.LINEAR, (100, 6))
        assert eval_shape(m, 50.0) == pytest.approx(50.0)

    def test_logistic_shape_midpoint(self):
        assert eval_shape(TABLE1["logistic1"], 17.5) == pytest.approx(0.5)

    def test_beta_peak_is_one(self):
        m = TABLE1["beta"]
        a, b = m.theta_nonlinear
        assert eval_shape(m, 60.0 * a / (a + b)) == pytest.approx(1.0)

    def test_decomposition_identity(self):
        rng = np.random.default_rng(7)
        doses = np.linspace(0, 50, 23)
        for shape in Shape:
            for _ in range(20):
                m = random_model(rng, shape)
                np.testing.assert_allclose(
                    eval_mean(m, doses),
                    m.theta0 + m.theta1 * eval_shape(m, doses),
                    rtol=0, atol=1e-12)

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            eval_mean(TABLE1["emax1"], -1.0)
        with pytest.raises(ValueError):
            eval_mean(TABLE1["beta"], 61.0)

    def test_validation(self):
        with pytest.raises(ValueError):
            DoseResponseModel(Shape.EMAX, (100, 420), (-3,))
        with pytest.raises(ValueError):
            DoseResponseModel(Shape.LOGISTIC, (100, 420), (17.5,))
        with pytest.raises(ValueError):
            ParameterBounds((1.0,), (0.5,))


class TestGradient:
    def test_intercept_component_is_one(self):
        rng = np.random.default_rng(11)
        for shape in Shape:
            m = random_model(rng, shape)
            g = gradient(m, np.array([0.0, 3.0, 27.0]))
            np.testing.assert_array_equal(g[:, 0], 1.0)

    def test_emax_closed_form(self):
        m = TABLE1["emax1"]
        d = 7.0
        g = gradient(m, d)
        assert g[2] == pytest.approx(-420 * d / (20 + d) ** 2, rel=1e-12)

    @pytest.mark.parametrize("shape", list(Shape))
    def test_matches_finite_differences(self, shape):
        rng = np.random.default_rng(hash(shape) % 2**32)
        for _ in range(100):
            m = random_model(rng, shape)
            d = rng.uniform(0.2, 49.8)
            g = gradient(m, d)
            g_fd = fd_gradient(m, d)
            # norm-relative: componentwise ratios are meaningless where the
            # FD oracle's own truncation noise exceeds a vanishing component
            assert np.max(np.abs(g - g_fd)) / np.max(np.abs(g_fd)) < 1e-6


class TestMed:
    @pytest.mark.parametrize("name", sorted(TABLE1))
    def test_table1_values(self, name):
        spec = MedSpec(delta=200.0, dose_range=(0.0, 50.0), placebo_ref=100.0)
        assert med(TABLE1[name], spec) == pytest.approx(TRUE_MED[name], abs=0.01)

    def test_emax_closed_form(self):
        # threshold f(0) + delta coincides with the table value here
        assert med(TABLE1["emax1"], SPEC) == pytest.approx(20 * (200 / 420) / (1 - 200 / 420))

    def test_nonexistent_when_ceiling_too_low(self):
        m = DoseResponseModel(Shape.EMAX, (100, 150), (20,))
        assert med(m, SPEC) is None

    def test_monotone_consistency(self):
        rng = np.random.default_rng(23)
        for shape in (Shape.EMAX, Shape.LOGISTIC, Shape.LINEAR):
            for _ in range(50):
                m = random_model(rng, shape)
                spec = MedSpec(delta=rng.uniform(20, 300), dose_range=(0.0, 50.0))
                b = med(m, spec)
                if b is None or b <= 1e-6 or b >= 50 - 1e-6:
                    continue
                base = eval_mean(m, 0.0)
                assert eval_mean(m, b + 1e-7) - base > spec.delta - 1e-6
                assert eval_mean(m, b - 1e-4) - base < spec.delta

    def test_beta_first_entry_point(self):
        m = TABLE1["beta"]
        b = med(m, SPEC)
        assert b == pytest.approx(5.21, abs=0.01)
        # ascending branch: crossing from below
        assert eval_mean(m, b - 1e-4) - eval_mean(m, 0.0) < 200.0
        assert eval_mean(m, b + 1e-4) - eval_mean(m, 0.0) > 200.0

    def test_scale_equivariance(self):
        c = 2.5
        pairs = [
            (TABLE1["emax1"], DoseResponseModel(Shape.EMAX, (100, 420), (20 * c,))),
            (TABLE1["logistic1"],
             DoseResponseModel(Shape.LOGISTIC, (98, 302), (17.5 * c, 3.3 * c))),
            (TABLE1["beta"],
             DoseResponseModel(Shape.SCALED_BETA, (100, 300), (0.43, 0.6), scal=60.0 * c)),
            (DoseResponseModel(Shape.LINEAR, (100, 6)),
             DoseResponseModel(Shape.LINEAR, (100, 6 / c))),
        ]
        for base, scaled in pairs:
            spec2 = MedSpec(delta=200.0, dose_range=(0.0, 50.0 * c))
            b1 = med(base, SPEC)
            b2 = med(scaled, spec2)
            assert b2 == pytest.approx(c * b1, rel=1e-7)


class TestMedGradient:
    def fd_med(self, model, spec, step=1e-5):
        theta = model.theta()
        out = np.empty(theta.size)
        for i in range(theta.size):
            h = step * max(1.0, abs(theta[i]))
            up, dn = theta.copy(), theta.copy()
            up[i] += h
            dn[i] -= h
            b_up = med(model.replace_theta(up), spec)
            b_dn = med(model.replace_theta(dn), spec)
            assert b_up is not None and b_dn is not None
            out[i] = (b_up - b_dn) / (2 * h)
        return out

    def test_intercept_invariance(self):
        for name in TABLE1:
            g = med_gradient(TABLE1[name], SPEC)
            assert g[0] == 0.0

    @pytest.mark.parametrize("name", sorted(TABLE1))
    def test_matches_finite_differences(self, name):
        g = med_gradient(TABLE1[name], SPEC)
        g_fd = self.fd_med(TABLE1[name], SPEC)
        assert np.max(np.abs(g - g_fd)) / np.max(np.abs(g_fd)) < 1e-5

    def test_randomized_against_finite_differences(self):
        rng = np.random.default_rng(31)
        checked = 0
        for shape in (Shape.EMAX, Shape.LOGISTIC, Shape.SCALED_BETA, Shape.LINEAR):
            while True:
                m = random_model(rng, shape)
                b = med(m, SPEC)
                if b is None or not 0.5 < b < 49.5:
                    continue
                g = med_gradient(m, SPEC)
                g_fd = self.fd_med(m, SPEC)
                assert np.max(np.abs(g - g_fd)) / np.max(np.abs(g_fd)) < 1e-5
                checked += 1
                break
        assert checked == 4

    def test_signals_nonexistent(self):
        m = DoseResponseModel(Shape.EMAX, (100, 150), (20,))
        with pytest.raises(MedGradientError):
            med_gradient(m, SPEC)
