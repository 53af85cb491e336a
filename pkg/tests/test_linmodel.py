import numpy as np
import pytest
from numpy.testing import assert_allclose

from glucoloop.linmodel import (ContinuousModel, InsulinSensitivityProfile,
                                IS_COEFF, IS_COL, IS_ROW, N_STATES, build_A,
                                discretize, kis_at, split_A, zoh)


def taylor_expm(a, order=4, target_norm=1e-3):
    """Independent scaling-and-squaring reference: Taylor series of e^A on a
    scaled matrix, then repeated squaring."""
    s = 0
    while np.abs(a / 2**s).sum() > target_norm:
        s += 1
    m = a / 2**s
    term = np.eye(a.shape[0])
    out = np.eye(a.shape[0])
    for k in range(1, order + 1):
        term = term @ m / k
        out = out + term
    for _ in range(s):
        out = out @ out
    return out


class TestBuildA:
    def test_published_entries(self):
        a = build_A(1.0)
        assert a[IS_ROW, IS_COL] == -0.025
        assert a[0, 0] == -0.70
        assert a[1, 5] == 5.11
        assert a[0, 10] == 0.024
        assert a[11, 11] == -0.0077

    def test_scaling(self):
        assert build_A(1.2)[IS_ROW, IS_COL] == pytest.approx(-0.030)
        # k -> 0 limit zeroes only the sensitivity entry
        tiny = build_A(1e-12)
        assert tiny[IS_ROW, IS_COL] == pytest.approx(0.0, abs=1e-13)
        ref = build_A(1.0)
        tiny[IS_ROW, IS_COL] = ref[IS_ROW, IS_COL]
        assert_allclose(tiny, ref)

    def test_single_entry_differs(self, rng):
        ref = build_A(1.0)
        for k in rng.uniform(0.05, 3.0, 25):
            if abs(k - 1.0) < 1e-9:
                continue
            diff = build_A(k) != ref
            assert diff.sum() == 1
            assert diff[IS_ROW, IS_COL]

    @pytest.mark.parametrize("bad", [0.0, -0.5, np.nan, np.inf])
    def test_domain_errors(self, bad):
        with pytest.raises(ValueError):
            build_A(bad)


class TestSplitA:
    def test_nominal_is_zero(self):
        _, a_kis = split_A(1.0)
        assert_allclose(a_kis, 0.0)

    @pytest.mark.parametrize("k,expected", [(1.3, -0.0075), (0.7, 0.0075)])
    def test_deviation_entry(self, k, expected):
        a_hat, a_kis = split_A(k)
        assert a_kis[IS_ROW, IS_COL] == pytest.approx(expected)
        assert np.count_nonzero(a_kis) == 1
        assert_allclose(a_hat + a_kis, build_A(k), rtol=0, atol=0)

    def test_exact_recombination(self, rng):
        # bitwise identity holds on the physiological range (Sterbenz)
        for k in rng.uniform(0.5, 2.0, 20):
            a_hat, a_kis = split_A(k)
            assert np.array_equal(a_hat + a_kis, build_A(k))


class TestDiscretize:
    def test_scalar_closed_form(self):
        # xdot = -0.1 x + u, Ts = 5: Ad = e^-0.5, Bd = (1 - e^-0.5)/0.1
        ad, bd = zoh(np.array([[-0.1]]), np.array([[1.0]]), 5.0)
        assert ad[0, 0] == pytest.approx(np.exp(-0.5), abs=1e-12)
        assert bd[0, 0] == pytest.approx((1 - np.exp(-0.5)) / 0.1, abs=1e-12)

    def test_full_model_against_taylor_reference(self, cont_model):
        disc = discretize(cont_model, 5.0)
        ref = taylor_expm(cont_model.A * 5.0)
        assert np.abs(disc.Ad - ref).max() < 1e-9

    def test_zoh_limit(self, cont_model):
        disc = discretize(cont_model, 1e-8)
        assert np.abs(disc.Ad - np.eye(N_STATES)).max() < 1e-7
        assert np.abs(disc.Bd).max() < 1e-7

    def test_semigroup(self, cont_model):
        d1 = discretize(cont_model, 5.0)
        d2 = discretize(cont_model, 10.0)
        assert np.abs(d2.Ad - d1.Ad @ d1.Ad).max() < 1e-9

    def test_disturbance_column(self, cont_model, disc_model):
        # joint ZOH of the unit disturbance input: dominated by the entry row,
        # with the in-sample leakage into the coupled states
        assert disc_model.Bd_kis[IS_ROW] == pytest.approx(3.9173114, abs=1e-6)
        assert abs(disc_model.Bd_kis[8]) < 1e-12  # insulin chain untouched
        # matches direct quadrature of expm(A s) e_row over the sample
        from scipy.integrate import simpson
        s_grid = np.linspace(0.0, 5.0, 501)
        col = np.array([taylor_expm(cont_model.A * s)[:, IS_ROW] for s in s_grid])
        quad = simpson(col, x=s_grid, axis=0)
        assert np.abs(disc_model.Bd_kis - quad).max() < 1e-9

    def test_meal_column_present(self, disc_model):
        assert disc_model.Bd_meal[11] > 0.0

    @pytest.mark.parametrize("bad", [0.0, -1.0, np.nan])
    def test_bad_sample_time(self, cont_model, bad):
        with pytest.raises(ValueError):
            discretize(cont_model, bad)


class TestOutputRow:
    def test_selects_glucose_state(self, cont_model):
        for i in range(N_STATES):
            e = np.zeros(N_STATES)
            e[i] = 1.0
            assert cont_model.C @ e == (1.0 if i == 0 else 0.0)


class TestSensitivityProfile:
    def test_constant(self):
        prof = InsulinSensitivityProfile.constant()
        assert kis_at(prof, 0.0) == 1.0
        assert kis_at(prof, 12345.6) == 1.0

    def test_sinusoid_peak(self):
        prof = InsulinSensitivityProfile.sinusoid(0.3, phase=0.0)
        assert kis_at(prof, 360.0) == pytest.approx(1.3)
        assert kis_at(prof, 0.0) == pytest.approx(1.0)

    def test_periodicity(self, rng):
        prof = InsulinSensitivityProfile.sinusoid(0.25, phase=100.0)
        for t in rng.uniform(0, 5000, 20):
            assert kis_at(prof, t) == pytest.approx(kis_at(prof, t + 1440.0), abs=1e-9)

    def test_piecewise_linear(self):
        prof = InsulinSensitivityProfile(
            kind="piecewise-linear",
            breakpoints=((0.0, 1.0), (720.0, 1.4)))
        assert kis_at(prof, 0.0) == pytest.approx(1.0)
        assert kis_at(prof, 360.0) == pytest.approx(1.2)
        assert kis_at(prof, 720.0) == pytest.approx(1.4)
        # wraps back toward the first breakpoint
        assert kis_at(prof, 1080.0) == pytest.approx(1.2)
        assert kis_at(prof, 1440.0) == pytest.approx(1.0)

    def test_positivity_guard(self):
        with pytest.raises(ValueError):
            InsulinSensitivityProfile.sinusoid(1.0)
        with pytest.raises(ValueError):
            InsulinSensitivityProfile(kind="piecewise-linear",
                                      breakpoints=((0.0, -0.5),))

    def test_vectorized(self):
        prof = InsulinSensitivityProfile.sinusoid(0.3)
        ts = np.array([0.0, 360.0, 720.0])
        assert_allclose(kis_at(prof, ts), [1.0, 1.3, 1.0], atol=1e-12)
