"""Surrogate virtual patient: the 12-state model driven with the true k_IS(t).

The plant integrates the same linear model the controller uses, but with the
time-varying sensitivity applied to the absolute remote-insulin level
(deviation state + basal level), so a sensitivity change moves glucose even
at basal rest.  Meals force the last gastro-intestinal state as rectangular
CHO pulses; the CGM adds i.i.d. Gaussian noise on top of the glucose state.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _core
from .linmodel import ContinuousModel, InsulinSensitivityProfile, N_STATES, kis_at


def basal_insulin_state(u_basal: float) -> np.ndarray:
    """Linearization point: insulin-route equilibrium at the basal infusion.

    Only the insulin-side states (5..10) are nonzero; the glucose and gut
    states sit at their reference (deviation zero).  Component ``IS_COL`` of
    this vector is what couples the circadian sensitivity into the plant at
    rest.
    """
    from .linmodel import build_A, _B_INSULIN

    a = build_A(1.0)
    idx = [4, 5, 6, 7, 8, 9]  # states 5..10, 0-based
    sub = a[np.ix_(idx, idx)]
    rhs = -_B_INSULIN[idx] * u_basal
    x = np.zeros(N_STATES)
    x[idx] = np.linalg.solve(sub, rhs)
    return x


@dataclass(frozen=True)
class Meal:
    """One carbohydrate intake delivered as a rectangular pulse."""

    start: float            # min
    grams: float            # g CHO
    duration: float = 15.0  # min
    announced: bool = True

    @property
    def rate(self) -> float:
        """Delivery rate in mg CHO/min."""
        return self.grams * 1000.0 / self.duration

    @property
    def end(self) -> float:
        return self.start + self.duration


@dataclass(frozen=True)
class PatientParams:
    fasting_glucose: float = 122.0   # mg/dl
    u_basal: float = 20.4            # mU/min
    x_basal: np.ndarray | None = None  # linearization point; derived if None
    cgm_noise_sd: float = 2.0        # mg/dl
    cgm_period: float = 5.0          # min
    integrator_step: float = 0.5     # min; fastest model pole is ~ -3.1/min

    def __post_init__(self):
        if self.u_basal <= 0.0:
            raise ValueError("u_basal must be positive")
        if self.cgm_period <= 0.0:
            raise ValueError("cgm_period must be positive")
        if self.integrator_step > self.cgm_period:
            raise ValueError("integrator_step must not exceed cgm_period")
        if self.cgm_noise_sd < 0.0:
            raise ValueError("cgm_noise_sd must be non-negative")
        if self.x_basal is None:
            object.__setattr__(self, "x_basal", basal_insulin_state(self.u_basal))


@dataclass(frozen=True)
class PlantState:
    t: float
    x: np.ndarray
    pending_meals: tuple = ()

    @classmethod
    def initial(cls, meals=()) -> "PlantState":
        return cls(t=0.0, x=np.zeros(N_STATES), pending_meals=tuple(meals))


def meal_rate(state: PlantState, t: float) -> float:
    """Total CHO delivery rate (mg/min) of the meals active at time t."""
    return sum(m.rate for m in state.pending_meals if m.start <= t < m.end)


class Plant:
    """Integrates PlantState forward and produces CGM readings.

    Stepping is deterministic; only measure() consumes the seeded noise
    stream, so trajectories are reproducible per (scenario, seed).
    """

    def __init__(self, model: ContinuousModel, params: PatientParams,
                 profile: InsulinSensitivityProfile, seed: int = 0,
                 perturb_scale: float = 0.0, perturb_seed: int = 0):
        self.model = model
        self.params = params
        self.profile = profile
        self._rng = np.random.default_rng(seed)
        a = np.array(model.A, dtype=float)
        if perturb_scale != 0.0:
            # model-mismatch mode: multiplicative jitter on the nonzero entries
            prng = np.random.default_rng(perturb_seed)
            mask = a != 0.0
            a[mask] *= 1.0 + perturb_scale * prng.uniform(-1.0, 1.0, mask.sum())
        self._a = np.ascontiguousarray(a)
        self._x_basal_col = float(params.x_basal[model.is_col])

    def step(self, state: PlantState, u: float, dt: float) -> PlantState:
        """Advance the plant by dt minutes under insulin deviation u (mU/min)."""
        if not dt > 0.0:
            raise ValueError("dt must be positive")
        if u + self.params.u_basal < 0.0:
            raise ValueError(
                f"total insulin would be negative: {u + self.params.u_basal:.3f} mU/min")
        nsub = max(1, math.ceil(dt / self.params.integrator_step - 1e-12))
        h = dt / nsub
        grid = state.t + 0.5 * h * np.arange(2 * nsub + 1)
        kis = np.asarray(kis_at(self.profile, grid), dtype=float)
        # one rate per substep, sampled at the midpoint: the pulse is constant
        # inside a substep whenever its edges sit on the substep grid
        rates = np.array([meal_rate(state, state.t + (j + 0.5) * h)
                          for j in range(nsub)])
        forcing = self.model.B_insulin * u
        x_new = _core.rk4_path(self._a, forcing, self.model.B_meal, rates,
                               self.model.is_row, self.model.is_col,
                               self.model.is_coeff, self._x_basal_col,
                               kis, h, state.x)
        t_new = state.t + dt
        remaining = tuple(m for m in state.pending_meals if m.end > t_new)
        return PlantState(t=t_new, x=x_new, pending_meals=remaining)

    def measure(self, state: PlantState) -> float:
        """CGM reading in mg/dl: fasting level + glucose deviation + noise."""
        noise = 0.0
        if self.params.cgm_noise_sd > 0.0:
            noise = self.params.cgm_noise_sd * self._rng.standard_normal()
        return self.params.fasting_glucose + float(self.model.C @ state.x) + noise

    def true_glucose(self, state: PlantState) -> float:
        return self.params.fasting_glucose + float(self.model.C @ state.x)
