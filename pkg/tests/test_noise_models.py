import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from scorekf import Family, NoiseModel, check_dissipativity, fisher_information
from scorekf.noise_models import (
    NoiseDomainError,
    check_observation_assumptions,
)

from .conftest import ALL_MODELS


def fd_log_density(model, x, h=1e-6):
    """-(d/dx) log h by central differences."""
    return -(model.log_density(x + h) - model.log_density(x - h)) / (2 * h)


class TestScore:
    def test_gaussian_identity(self):
        assert NoiseModel.gaussian().score(1.5) == 1.5

    def test_logistic_symmetric_zero(self):
        assert NoiseModel.logistic().score(0.0) == 0.0

    def test_student_t_matches_finite_difference(self):
        m = NoiseModel.student_t(5)
        # independent closed form: t_5 with scale sqrt(3/5)
        dens = lambda x: stats.t.logpdf(x, 5, scale=math.sqrt(3 / 5))
        oracle = -(dens(2.0 + 1e-6) - dens(2.0 - 1e-6)) / 2e-6
        assert m.score(2.0) == pytest.approx(oracle, rel=1e-7)

    def test_score_matches_log_density_derivative(self, model):
        xs = np.linspace(-4, 4, 17)
        np.testing.assert_allclose(model.score(xs), fd_log_density(model, xs), atol=1e-6)

    @pytest.mark.parametrize("bad", [np.inf, -np.inf, np.nan])
    def test_non_finite_input_rejected(self, model, bad):
        with pytest.raises(NoiseDomainError):
            model.score(bad)

    def test_array_shape_preserved(self, model):
        x = np.linspace(-1, 1, 6).reshape(2, 3)
        assert model.score(x).shape == (2, 3)


class TestScoreDeriv:
    def test_gaussian(self):
        g = NoiseModel.gaussian()
        assert g.score_deriv(3.7, 1) == 1.0
        assert g.score_deriv(-2.0, 2) == 0.0

    def test_logistic_order1_at_zero(self):
        m = NoiseModel.logistic()
        fd = (m.score(1e-5) - m.score(-1e-5)) / 2e-5
        assert m.score_deriv(0.0, 1) == pytest.approx(fd, abs=1e-6)

    @pytest.mark.parametrize("order", [1, 2])
    def test_agrees_with_finite_differences(self, model, order):
        xs = np.linspace(-3.3, 3.7, 20)
        h = 1e-4
        f = model.score if order == 1 else (lambda t: model.score_deriv(t, 1))
        fd = (f(xs + h) - f(xs - h)) / (2 * h)
        got = model.score_deriv(xs, order)
        np.testing.assert_allclose(got, fd, rtol=1e-5, atol=1e-7)

    @pytest.mark.parametrize("order", [0, 3, "1"])
    def test_bad_order(self, order):
        with pytest.raises(ValueError):
            NoiseModel.logistic().score_deriv(0.0, order)


class TestFisherInformation:
    def test_gaussian_exact(self):
        assert fisher_information(NoiseModel.gaussian()) == 1.0

    def test_logistic_closed_form_and_quadrature(self):
        m = NoiseModel.logistic()
        assert fisher_information(m) == pytest.approx(math.pi**2 / 9, rel=1e-14)
        assert fisher_information(m, "quadrature") == pytest.approx(math.pi**2 / 9, abs=1e-8)

    def test_student_t5(self):
        m = NoiseModel.student_t(5)
        assert fisher_information(m) == pytest.approx(1.25, rel=1e-14)
        assert fisher_information(m, "quadrature") == pytest.approx(1.25, abs=1e-8)

    def test_cramer_rao_inequality(self, model):
        # Var(v) I(v) >= 1 with equality only for the Gaussian
        I = fisher_information(model)
        if model.is_gaussian:
            assert I == 1.0
        else:
            assert I > 1.0 + 1e-3

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            fisher_information(NoiseModel.gaussian(), "simpson")

    def test_monte_carlo_agreement(self, model):
        v = model.sample(10**6, 7)
        phi2 = model.score(v) ** 2
        dphi = model.score_deriv(v, 1)
        I = model.fisher_info
        se2 = phi2.std() / 1e3
        se1 = dphi.std() / 1e3
        assert abs(phi2.mean() - I) <= 3 * se2
        assert abs(dphi.mean() - I) <= 3 * se1


class TestModelInvariants:
    def test_unit_variance(self, model):
        assert model.variance() == pytest.approx(1.0, abs=1e-8)

    def test_assumption_contract(self, model):
        rep = check_observation_assumptions(model)
        assert rep.unit_variance and rep.score_centered and rep.information_identity
        assert rep.density_positive and rep.finite_fourth_moment and rep.bounded_phi2
        assert rep.ok

    def test_student_t_sup_norm_is_numeric(self):
        m = NoiseModel.student_t(5)
        assert m.sup_norm_is_numeric
        assert math.isfinite(m.score_sup_norm_2nd)
        assert not NoiseModel.logistic().sup_norm_is_numeric

    def test_logistic_sup_norm_matches_grid(self):
        m = NoiseModel.logistic()
        grid = np.linspace(-10, 10, 200_001)
        assert m.score_sup_norm_2nd == pytest.approx(np.abs(m.score_deriv(grid, 2)).max(), rel=1e-8)

    @pytest.mark.parametrize("dof", [4, 3, 5.5, 2])
    def test_student_t_requires_integer_dof_above_four(self, dof):
        with pytest.raises(ValueError):
            NoiseModel.student_t(dof)

    def test_mixture_is_standardized(self):
        m = NoiseModel.mixture([0.2, 0.8], [-1.0, 3.0], [0.5, 1.0])
        w, mu, sg = map(np.asarray, (m.weights, m.means, m.sigmas))
        assert np.dot(w, mu) == pytest.approx(0.0, abs=1e-14)
        assert np.dot(w, mu**2 + sg**2) == pytest.approx(1.0, rel=1e-14)

    def test_config_roundtrip(self, model):
        back = NoiseModel.from_config(model.to_config())
        assert back.to_config() == model.to_config()
        xs = np.linspace(-5, 5, 41)
        np.testing.assert_array_equal(back.log_density(xs), model.log_density(xs))
        assert back.fisher_info == model.fisher_info

    def test_config_keys(self):
        m = NoiseModel.from_config({"family": "student_t", "dof": 5})
        assert m.family is Family.STUDENT_T and m.dof == 5
        with pytest.raises(ValueError):
            NoiseModel.from_config({"family": "student_t"})
        with pytest.raises(ValueError):
            NoiseModel.from_config({"family": "laplace"})

    def test_poincare_table(self):
        assert NoiseModel.gaussian().poincare_finite
        assert NoiseModel.logistic().poincare_finite
        assert not NoiseModel.student_t(5).poincare_finite


class TestSample:
    def test_gaussian_moments(self):
        v = NoiseModel.gaussian().sample(10**6, 1)
        assert abs(v.mean()) < 4 / 1e3
        assert v.var() == pytest.approx(1.0, rel=0.01)

    def test_student_t_fourth_moment(self):
        m = NoiseModel.student_t(5)
        assert m.fourth_moment() == pytest.approx(9.0)
        v = m.sample(10**6, 2)
        m4 = np.mean(v**4)
        assert np.isfinite(m4)
        # heavy tails: E v^8 is infinite so allow a generous band
        assert m4 == pytest.approx(9.0, rel=0.25)

    def test_closed_form_fourth_moment_matches_quadrature(self, model):
        if model.family is Family.STUDENT_T:
            pytest.skip("t_5 fourth moment converges too slowly for quadrature tolerance")
        assert model.expect(lambda t: t**4) == pytest.approx(model.fourth_moment(), rel=1e-7)

    def test_empty(self, model):
        assert model.sample(0, 3).shape == (0,)

    def test_deterministic(self, model):
        np.testing.assert_array_equal(model.sample(50, 9), model.sample(50, 9))


class TestDissipativity:
    def test_gaussian_linear_drift(self):
        rep = check_dissipativity(NoiseModel.gaussian())
        assert rep.zeta_hat == pytest.approx(1.0, abs=0.05)
        assert rep.passed and rep.pass_

    def test_logistic_passes(self):
        rep = check_dissipativity(NoiseModel.logistic())
        assert rep.zeta_hat > 0 and rep.passed

    def test_student_t_fails(self):
        rep = check_dissipativity(NoiseModel.student_t(5))
        assert not rep.passed
        # redescending score: drift/y decays faster than for a bounded score
        assert rep.tail_slope < -1.5

    def test_zero_grid_points(self):
        with pytest.raises(ValueError):
            check_dissipativity(NoiseModel.gaussian(), grid_points=0)

    def test_growth_bound_holds(self, model):
        rep = check_dissipativity(model, mc_samples=2000)
        y = np.linspace(-50, 50, 1001)
        assert np.all(np.abs(model.score(y)) <= rep.growth_A + rep.growth_B * np.abs(y) + 1e-12)


@settings(max_examples=40, deadline=None)
@given(x=st.floats(-50, 50), name=st.sampled_from(sorted(ALL_MODELS)))
def test_score_odd_for_symmetric_models(x, name):
    m = ALL_MODELS[name]
    assert m.score(-x) == pytest.approx(-m.score(x), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(x=st.floats(-1e6, 1e6), name=st.sampled_from(sorted(ALL_MODELS)))
def test_score_finite_everywhere(x, name):
    assert math.isfinite(ALL_MODELS[name].score(x))
