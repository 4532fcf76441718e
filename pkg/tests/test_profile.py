import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dnls_decay._dopri import StepLimitError
from dnls_decay.nonlinearity import NuPolynomial
from dnls_decay.profile import (
    ProfileError,
    ProfileField,
    RemainderSpec,
    closed_form_A,
    gaussian_profile,
    integrate_beta,
    integrate_pq,
    japan,
    lorentzian_profile,
    modulus_law,
    tracking_harness,
    verify_tracking,
)

WEAK = NuPolynomial.from_imag(0, 0, -1)
STRICT = NuPolynomial.from_imag(-1)
T_GRID = np.geomspace(1, 1e6, 25)


def ones(n=5):
    return ProfileField(np.linspace(-1, 1, n), np.ones(n))


class TestIntegrateBeta:
    def test_real_mu_keeps_modulus(self):
        th = gaussian_profile(np.linspace(-4, 4, 17), eps=0.5)
        nu = NuPolynomial(re_part=(1.0, 0.3, -0.2))
        out = integrate_beta(th, nu, None, T_GRID)
        for b in out:
            np.testing.assert_allclose(np.abs(b.values), np.abs(th.values), rtol=1e-9)
        # and the phase actually rotates
        assert np.max(np.abs(out[-1].values - th.values)) > 0.01

    def test_separable_oracle(self):
        out = integrate_beta(ones(), STRICT, None, T_GRID)
        for t, b in zip(T_GRID, out):
            np.testing.assert_allclose(np.abs(b.values) ** 2, 1 / (1 + 2 * np.log(t)), rtol=1e-9)

    def test_monotone_dissipation(self):
        xi = np.linspace(-5, 5, 41)
        out = integrate_beta(gaussian_profile(xi, 0.3), NuPolynomial((0.5, 0, 1), (-0.2, 0.1, -1)), None, T_GRID)
        mods = np.array([np.abs(b.values) for b in out])
        assert np.all(np.diff(mods, axis=0) <= 1e-12)

    def test_grid_checks(self):
        with pytest.raises(ProfileError):
            integrate_beta(ones(), WEAK, None, [2.0, 3.0])
        with pytest.raises(ProfileError):
            integrate_beta(ones(), WEAK, None, [1.0, 3.0, 2.0])
        with pytest.raises(ProfileError):
            integrate_beta(ones(), NuPolynomial.from_imag(0.1), None, [1.0, 2.0])

    def test_step_limit(self):
        with pytest.raises(StepLimitError):
            integrate_beta(ones(), STRICT, None, [1.0, 1e6], max_steps=3)

    def test_threads_do_not_change_result(self):
        th = gaussian_profile(np.linspace(-5, 5, 40), 0.2)
        rho = RemainderSpec(0.2, 0.008)
        a = integrate_beta(th, WEAK, rho, T_GRID)
        b = integrate_beta(th, WEAK, rho, T_GRID, workers=3)
        # rows are independent; only the batching (hence BLAS summation order) differs
        for x, y in zip(a, b):
            np.testing.assert_allclose(x.values, y.values, rtol=1e-13, atol=1e-17)


class TestIntegratePQ:
    def test_exact_Q(self):
        out = integrate_pq(ones(), STRICT, None, T_GRID)
        for t, s in zip(T_GRID, out):
            np.testing.assert_allclose(s.Q, 1 + 2 * np.log(t), rtol=1e-9)
            np.testing.assert_allclose(np.abs(s.P), 1.0, rtol=1e-10)

    def test_real_mu(self):
        out = integrate_pq(ones(), NuPolynomial(re_part=(2.0,)), None, T_GRID)
        assert all(np.all(s.Q == 1.0) for s in out)
        np.testing.assert_allclose(np.abs(out[-1].P), 1.0, rtol=1e-10)

    def test_agrees_with_beta_and_Q_grows(self):
        xi = np.linspace(-8, 8, 33)
        th = gaussian_profile(xi, 0.1)
        rho = RemainderSpec(0.2, 1e-3)
        nu = NuPolynomial((0.3, 0, 0.5), (0, 0, -1))
        betas = integrate_beta(th, nu, rho, T_GRID)
        pqs = integrate_pq(th, nu, rho, T_GRID)
        for b, s in zip(betas, pqs):
            np.testing.assert_allclose(s.beta, b.values, atol=1e-9 * 0.1)
        Q = np.array([s.Q for s in pqs])
        assert np.all(np.diff(Q, axis=0) >= -1e-14) and np.all(Q >= 1.0)


class TestClosedForm:
    def test_pure_phase(self):
        th = gaussian_profile(np.linspace(-3, 3, 13), 0.7)
        nu = NuPolynomial(re_part=(1.5, 0, 0.5))
        A = closed_form_A(th, 0.0, nu, 2.5)
        expected = th.values * np.exp(-1j * np.abs(th.values) ** 2 * nu.real(th.xi_grid) * 2.5)
        np.testing.assert_allclose(A.values, expected, rtol=1e-14)

    def test_separable(self):
        for tau in (0.0, 1.0, 10.0, 1e4):
            A = closed_form_A(ones(), 0.0, STRICT, tau)
            np.testing.assert_allclose(np.abs(A.values) ** 2, 1 / (1 + 2 * tau), rtol=1e-14)

    def test_finite_difference_residual(self):
        rng = np.random.default_rng(11)
        xi = np.linspace(-3, 3, 9)
        th = ProfileField(xi, rng.normal(size=9) + 1j * rng.normal(size=9))
        nu = NuPolynomial(tuple(rng.normal(size=3)), (-0.4, 0.2, -0.7))
        Lam = rng.uniform(-0.05, 0.3, size=9)
        tau, h = 1.7, 1e-4
        A = closed_form_A(th, Lam, nu, tau).values
        dA = (closed_form_A(th, Lam, nu, tau + h).values - closed_form_A(th, Lam, nu, tau - h).values) / (2 * h)
        resid = 1j * dA - nu(xi) * np.abs(A) ** 2 * A
        assert np.max(np.abs(resid)) <= 1e-6 * np.max(np.abs(A) ** 3 * np.abs(nu(xi)))

    def test_radicand_guard(self):
        with pytest.raises(ProfileError):
            closed_form_A(ones(), 0.0, NuPolynomial.from_imag(1.0), 10.0)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 3.0), st.floats(0.0, 3.0), st.floats(-2, 2), st.floats(0.01, 2.0))
def test_modulus_law(c, p0, xi0, amp):
    xi = np.linspace(-6, 6, 31)
    nu = NuPolynomial((1.0, 0.5), (-p0 - c * xi0 ** 2, 2 * c * xi0, -c))
    th = gaussian_profile(xi, amp, width=1.5)
    out = integrate_beta(th, nu, None, T_GRID)
    for t, b in zip(T_GRID, out):
        law = modulus_law(th, nu, np.log(t))
        keep = law > 1e-280
        np.testing.assert_allclose(np.abs(b.values[keep]) ** 2, law[keep], rtol=1e-8)


class TestRemainder:
    def test_envelope_saturation(self):
        rho = RemainderSpec(0.2, 2.0)
        xi = np.linspace(-3, 3, 7)
        np.testing.assert_allclose(np.abs(rho(10.0, xi)), 2.0 / ((1 + xi ** 2) * 10 ** 1.2))
        assert rho.envelope_ratio(xi, [1, 10, 100]) == pytest.approx(1.0)

    def test_scaled_form(self):
        rho = RemainderSpec(0.15, 0.3, omega=0.7)
        xi = np.array([0.0, 2.0])
        tau = 1.3
        np.testing.assert_allclose(rho.scaled(tau, xi), np.exp(tau) * rho(np.exp(tau), xi), rtol=1e-13)

    @pytest.mark.parametrize("kappa", [0.0, 0.25, -0.1])
    def test_kappa_range(self, kappa):
        with pytest.raises(ProfileError):
            RemainderSpec(kappa, 1.0)


class TestHarness:
    xi = np.linspace(-10, 10, 41)
    t_eval = np.geomspace(1, 1e6, 31)

    def test_zero_forcing_is_integrator_error(self):
        th = gaussian_profile(self.xi, 0.1)
        rep = tracking_harness(th, WEAK, RemainderSpec.zero(), self.t_eval, 0.05, 0.1, rtol=1e-10)
        raw = max(np.max(np.abs(b.values - A.values)) for b, A in zip(rep.beta_run, rep.A_run))
        assert raw <= 10 * 1e-10 * 0.1
        assert rep.tail_bound == 0.0

    def test_saturating_forcing_has_no_growth(self):
        eps = 0.1
        rep = tracking_harness(gaussian_profile(self.xi, eps), WEAK, RemainderSpec(0.2, eps ** 3),
                               self.t_eval, 0.05, eps)
        assert rep.passed and rep.envelope_ok
        late = rep.weighted_sup[rep.t >= 1e2]
        assert np.all(np.diff(late) <= 1e-9 * late[:-1])
        assert rep.tail_bound < 1e-8

    def test_A0_proximity_does_not_grow(self):
        gaps = []
        for eps in (0.1, 0.05, 0.025):
            rep = tracking_harness(gaussian_profile(self.xi, eps), WEAK, RemainderSpec(0.2, eps ** 3),
                                   self.t_eval[:7], 0.05, eps)
            gaps.append(rep.A0_gap_weighted)
        assert max(gaps) <= 1.2 * min(gaps)
        assert gaps[-1] <= gaps[0] * 1.05

    def test_envelope_violation_flagged_first(self):
        bad = RemainderSpec(0.2, 1e-3, shape=lambda t, x: 10e-3 / (t ** 1.2 * (1 + x ** 2)))
        rep = tracking_harness(lorentzian_profile(self.xi, 0.1), WEAK, bad, self.t_eval, 0.05, 0.1)
        assert not rep.envelope_ok and not rep.passed
        assert rep.envelope_ratio == pytest.approx(10.0)
        assert rep.beta_run == []

    def test_verify_checks_inputs(self):
        b = [ProfileField(self.xi, np.zeros(41), time=1.0, time_kind="t")]
        A = [ProfileField(self.xi[:-1], np.zeros(40), time=0.0)]
        with pytest.raises(ProfileError):
            verify_tracking(b, A, 0.2, 0.05, 0.1)
        with pytest.raises(ProfileError):
            verify_tracking(b, b, 0.2, 0.3, 0.1)


def test_lorentzian_sits_on_envelope():
    pf = lorentzian_profile(np.linspace(-20, 20, 81), 0.2)
    assert pf.envelope_constant(0.2) == pytest.approx(1.0)
    assert np.all(japan(pf.xi_grid) ** 2 * np.abs(pf.values) <= 0.2 * (1 + 1e-15))
