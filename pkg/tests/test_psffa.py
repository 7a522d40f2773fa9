import math
from functools import partial

import numpy as np
import pytest
from hypothesis import given, strategies as st

from platoon_edca.psffa import (
    ExactKlbInverter,
    KlbFitCache,
    KlbFitError,
    SaturationError,
    fit_klb_polynomial,
    klb_invert_exact,
    klb_length,
    pk_invert,
    pk_length,
    psffa_rate,
    psffa_step,
    rk4_step,
    steady_state_length,
)


class TestPk:
    def test_examples(self):
        assert pk_length(0.0, 1.0) == 0.0
        assert pk_length(0.5, 1.0) == pytest.approx(1.0)
        assert pk_length(0.5, 0.0) == pytest.approx(0.75)

    @given(st.floats(0, 0.98))
    def test_mm1_oracle(self, rho):
        assert pk_length(rho, 1.0) == pytest.approx(rho / (1 - rho), rel=1e-12)

    def test_saturation(self):
        with pytest.raises(SaturationError):
            pk_length(1.0, 0.5)

    def test_inverse_examples(self):
        assert pk_invert(0.0, 0.3) == 0.0
        assert pk_invert(1.0, 1.0) == pytest.approx(0.5, rel=1e-15)
        assert pk_invert(1.0, 0.0) == pytest.approx(2 - math.sqrt(2), rel=1e-14)

    @given(st.floats(0, 0.99), st.sampled_from([0.0, 0.5, 1.0, 2.0]))
    def test_round_trip(self, rho, c2):
        assert abs(pk_invert(pk_length(rho, c2), c2) - rho) < 1e-9

    @given(st.floats(0, 1e6), st.floats(0, 5))
    def test_inverse_in_unit_interval(self, L, c2):
        assert 0.0 <= pk_invert(L, c2) < 1.0

    @given(st.floats(0, 50), st.floats(0.5, 1.5))
    def test_agrees_with_textbook_form_away_from_one(self, L, c2):
        if abs(c2 - 1) < 1e-3:
            return
        textbook = (L + 1 - math.sqrt(L * L + 2 * c2 * L + 1)) / (1 - c2)
        assert pk_invert(L, c2) == pytest.approx(textbook, rel=1e-6, abs=1e-12)


class TestKlb:
    def test_example(self):
        assert klb_length(0.5, 1.0) == pytest.approx(0.5 + 0.25 * math.exp(-2 / 3), rel=1e-14)
        assert round(klb_length(0.5, 1.0), 5) == 0.62835

    def test_light_load_limit(self):
        assert klb_length(0.0, 0.5) == 0.0
        assert klb_length(1e-4, 0.5) == 1e-4

    def test_pole(self):
        assert klb_length(1 - 1e-9, 0.5) > 1e7
        with pytest.raises(SaturationError):
            klb_length(1.0, 0.5)

    @given(st.floats(1e-4, 0.99), st.floats(0.01, 5))
    def test_exact_inverse(self, rho, c2):
        assert klb_invert_exact(float(klb_length(rho, c2)), c2) == pytest.approx(rho, rel=1e-9)


class TestKlbFit:
    def test_residual_and_example(self):
        c2 = 0.016
        fit = fit_klb_polynomial(c2)
        assert fit.max_residual < 1e-3
        assert fit.degree == 6 and len(fit.coefficients) == 7
        assert fit(float(klb_length(0.5, c2))) == pytest.approx(0.5, abs=1e-3)
        assert abs(fit(0.0)) <= 1e-3

    def test_unscaled_coefficients_reproduce_fit(self):
        fit = fit_klb_polynomial(0.02)
        L = 0.3 * fit.l_max
        assert np.polyval(fit.coefficients[::-1], L) == pytest.approx(fit(L), rel=1e-9)

    def test_monotone_against_bisection_inverse(self):
        fit = fit_klb_polynomial(0.02)
        Ls = np.linspace(0, fit.l_max, 500)
        vals = np.array([fit(L) for L in Ls])
        assert np.all(np.diff(vals) >= -1e-12)
        exact = np.array([klb_invert_exact(L, 0.02) for L in Ls])
        assert np.max(np.abs(vals - exact)) < 1e-3

    def test_failure_suggests_higher_degree(self):
        with pytest.raises(KlbFitError, match="degree"):
            fit_klb_polynomial(1.0, degree=3)

    def test_grid_too_coarse(self):
        with pytest.raises(ValueError):
            fit_klb_polynomial(0.1, n_grid=50)

    def test_beyond_fitted_range_uses_exact_inverse(self):
        fit = fit_klb_polynomial(0.02)
        L = 10 * fit.l_max
        assert fit(L) == klb_invert_exact(L, 0.02)

    @given(st.floats(0.005, 3.0))
    def test_cache_always_gives_valid_inverter(self, c2):
        inv = KlbFitCache().get(c2)
        for rho in (1e-3, 0.2, 0.6, 0.95):
            r = inv(float(klb_length(rho, inv.c2)))
            assert 0.0 <= r < 1.0
            assert r == pytest.approx(rho, abs=1e-3)

    def test_cache_memoises_by_quantised_c2(self):
        cache = KlbFitCache()
        a = cache.get(0.0501)
        assert cache.get(0.0504) is a
        assert cache.get(0.052) is not a
        assert len(cache) == 2

    def test_cache_widens_when_default_fit_fails(self):
        with pytest.raises(KlbFitError):
            fit_klb_polynomial(0.03)
        inv = KlbFitCache().get(0.03)
        assert inv(float(klb_length(0.5, 0.03))) == pytest.approx(0.5, abs=1e-3)

    def test_cache_falls_back_to_exact(self):
        assert isinstance(KlbFitCache().get(10.0), ExactKlbInverter)


def test_rk4_fifth_order_local_error():
    # y' = -y from y = 1: local error of classical RK4 is h^5/120 to leading order
    h = 0.01
    err = abs(rk4_step(lambda y: -y, 1.0, h) - math.exp(-h))
    assert err == pytest.approx(h ** 5 / 120, rel=0.05)
    one = rk4_step(lambda y: -y, 1.0, h)
    two = rk4_step(lambda y: -y, rk4_step(lambda y: -y, 1.0, h / 2), h / 2)
    assert abs(one - two) < 1e-10


MU = 1 / 125e-6  # service rate at the reference scale
INV0 = partial(pk_invert, c2=0.06)


class TestStep:
    def test_equilibrium_is_fixed(self):
        L = steady_state_length(20.0, MU, 0.06, 0, INV0)
        L1, ldot = psffa_step(L, 20.0, MU, INV0, 0.01)
        assert L1 == L and ldot == 0.0

    def test_pure_drain(self):
        L1, ldot = psffa_step(0.5, 0.0, MU, INV0, 1e-5)
        assert L1 < 0.5 and ldot < 0

    def test_step_halving(self):
        start = 0.01
        L_full, _ = psffa_step(start, 20.0, MU, INV0, 0.01)
        L_half, _ = psffa_step(start, 20.0, MU, INV0, 0.005)
        L_half, _ = psffa_step(L_half, 20.0, MU, INV0, 0.005)
        assert abs(L_full - L_half) < 1e-10

    def test_never_negative(self):
        L, _ = psffa_step(1e-9, 0.0, MU, INV0, 0.01)
        assert L >= 0.0

    @pytest.mark.parametrize("start", [0.0, 0.2])
    def test_monotone_convergence_from_either_side(self, start):
        target = steady_state_length(20.0, MU, 0.06, 0, INV0)
        L, path = start, [start]
        for _ in range(200):
            L, _ = psffa_step(L, 20.0, MU, INV0, 1e-3)
            path.append(L)
        d = np.diff(path)
        assert np.all(d >= -1e-15) if start < target else np.all(d <= 1e-15)
        assert path[-1] == pytest.approx(target, rel=1e-9)

    def test_klb_inverter_drives_ac1(self):
        inv = KlbFitCache().get(0.1)
        target = steady_state_length(20.0, MU, 0.1, 1, inv)
        L, _ = psffa_step(0.0, 20.0, MU, inv, 0.01)
        assert L == pytest.approx(target, rel=1e-9)


class TestSteadyState:
    def test_examples(self):
        assert steady_state_length(0.0, 10.0, 1.0, 0) == 0.0
        assert steady_state_length(5.0, 10.0, 1.0, 0) == pytest.approx(1.0)

    def test_no_steady_state(self):
        with pytest.raises(SaturationError):
            steady_state_length(10.0, 10.0, 1.0, 0)

    def test_rest_point_of_step(self):
        inv = KlbFitCache().get(0.05)
        L = steady_state_length(20.0, MU, 0.05, 1, inv)
        assert psffa_rate(L, 20.0, MU, inv) == pytest.approx(0.0, abs=1e-9)
        assert L == pytest.approx(float(klb_length(20.0 / MU, 0.05)), rel=1e-3)
