import numpy as np
import pytest
from numpy.testing import assert_allclose

from glucoloop.linmodel import ContinuousModel, InsulinSensitivityProfile
from glucoloop.plant import (Meal, PatientParams, Plant, PlantState,
                             basal_insulin_state, meal_rate)


@pytest.fixture(scope="module")
def model():
    return ContinuousModel.nominal(meal_gain=0.065)


def run_hours(plant, state, hours, u=0.0, dt=5.0):
    for _ in range(int(hours * 60 / dt)):
        state = plant.step(state, u, dt)
    return state


class TestBasalState:
    def test_insulin_chain_equilibrium(self):
        xb = basal_insulin_state(20.4)
        # chain is at rest: A x + B u = 0 on the insulin rows
        from glucoloop.linmodel import build_A, _B_INSULIN
        resid = build_A(1.0) @ xb + _B_INSULIN * 20.4
        assert np.abs(resid[4:10]).max() < 1e-12
        assert xb[4] == pytest.approx(16.6665, abs=1e-3)
        assert_allclose(xb[[0, 1, 2, 3, 10, 11]], 0.0)


class TestStep:
    def test_equilibrium_preserved(self, model):
        plant = Plant(model, PatientParams(cgm_noise_sd=0.0),
                      InsulinSensitivityProfile.constant(), seed=0)
        state = run_hours(plant, PlantState.initial(), 24.0)
        assert np.abs(state.x).max() < 1e-9
        assert plant.measure(state) == pytest.approx(122.0, abs=1e-9)

    def test_high_sensitivity_drops_glucose(self, model):
        # at rest, raised sensitivity acts through the basal insulin level
        prof = InsulinSensitivityProfile(kind="piecewise-linear",
                                         breakpoints=((0.0, 1.3),))
        params = PatientParams(cgm_noise_sd=0.0)
        plant = Plant(model, params, prof, seed=0)
        state = run_hours(plant, PlantState.initial(), 6.0)
        assert state.x[0] < -1.0
        # dense-step reference agrees on the trajectory, not just the sign
        fine = Plant(model, PatientParams(cgm_noise_sd=0.0, integrator_step=0.05),
                     prof, seed=0)
        ref = run_hours(fine, PlantState.initial(), 6.0)
        assert np.abs(state.x - ref.x).max() < 1e-6

    def test_step_halving_convergence(self, model):
        prof = InsulinSensitivityProfile.sinusoid(0.3)
        meals = (Meal(start=300.0, grams=60.0),)
        finals = []
        for h in (0.5, 0.25):
            plant = Plant(model, PatientParams(cgm_noise_sd=0.0, integrator_step=h),
                          prof, seed=0)
            state = PlantState.initial(meals)
            for _ in range(288):  # 24 h
                state = plant.step(state, 2.0, 5.0)
            finals.append(state.x)
        assert np.abs(finals[0] - finals[1]).max() < 1e-6

    def test_negative_insulin_rejected(self, model):
        plant = Plant(model, PatientParams(), InsulinSensitivityProfile.constant())
        with pytest.raises(ValueError):
            plant.step(PlantState.initial(), -25.0, 5.0)

    def test_bad_dt(self, model):
        plant = Plant(model, PatientParams(), InsulinSensitivityProfile.constant())
        with pytest.raises(ValueError):
            plant.step(PlantState.initial(), 0.0, 0.0)

    def test_insulin_lowers_glucose(self, model):
        plant = Plant(model, PatientParams(cgm_noise_sd=0.0),
                      InsulinSensitivityProfile.constant(), seed=0)
        state = run_hours(plant, PlantState.initial(), 8.0, u=10.0)
        assert state.x[0] < -10.0

    def test_perturbation_mode_changes_dynamics(self, model):
        params = PatientParams(cgm_noise_sd=0.0)
        prof = InsulinSensitivityProfile.constant()
        nominal = Plant(model, params, prof, seed=0)
        perturbed = Plant(model, params, prof, seed=0,
                          perturb_scale=0.1, perturb_seed=7)
        s_n = run_hours(nominal, PlantState.initial(), 4.0, u=5.0)
        s_p = run_hours(perturbed, PlantState.initial(), 4.0, u=5.0)
        assert np.abs(s_n.x - s_p.x).max() > 1e-3


class TestMeasure:
    def test_noise_free_values(self, model):
        params = PatientParams(cgm_noise_sd=0.0)
        plant = Plant(model, params, InsulinSensitivityProfile.constant())
        assert plant.measure(PlantState.initial()) == 122.0
        x = np.zeros(12)
        x[0] = 30.0
        assert plant.measure(PlantState(t=0.0, x=x)) == 152.0

    def test_noise_sd_monte_carlo(self, model):
        params = PatientParams(cgm_noise_sd=2.0)
        plant = Plant(model, params, InsulinSensitivityProfile.constant(), seed=42)
        state = PlantState.initial()
        draws = np.array([plant.measure(state) for _ in range(10000)])
        assert abs(draws.std() - 2.0) / 2.0 < 0.05
        assert draws.mean() == pytest.approx(122.0, abs=0.1)

    def test_deterministic_per_seed(self, model):
        params = PatientParams(cgm_noise_sd=2.0)
        a = Plant(model, params, InsulinSensitivityProfile.constant(), seed=5)
        b = Plant(model, params, InsulinSensitivityProfile.constant(), seed=5)
        state = PlantState.initial()
        assert [a.measure(state) for _ in range(10)] == \
               [b.measure(state) for _ in range(10)]


class TestMealRate:
    def test_no_meals(self):
        assert meal_rate(PlantState.initial(), 100.0) == 0.0

    def test_rectangular_pulse(self):
        state = PlantState.initial((Meal(start=60.0, grams=60.0, duration=15.0),))
        assert meal_rate(state, 59.9) == 0.0
        assert meal_rate(state, 60.0) == pytest.approx(4000.0)
        assert meal_rate(state, 74.9) == pytest.approx(4000.0)
        assert meal_rate(state, 75.0) == 0.0

    def test_mass_conservation(self):
        meals = (Meal(start=30.0, grams=45.0, duration=15.0),
                 Meal(start=200.0, grams=80.0, duration=20.0))
        state = PlantState.initial(meals)
        # rectangular pulses on a grid aligned with the pulse edges
        h = 0.5
        grid = np.arange(0.0, 400.0, h)
        mass = sum(meal_rate(state, t) * h for t in grid)
        assert mass == pytest.approx((45.0 + 80.0) * 1000.0, abs=1e-9)

    def test_expired_meals_pruned(self, model):
        plant = Plant(model, PatientParams(cgm_noise_sd=0.0),
                      InsulinSensitivityProfile.constant())
        state = PlantState.initial((Meal(start=0.0, grams=10.0, duration=15.0),))
        state = plant.step(state, 0.0, 20.0)
        assert state.pending_meals == ()
