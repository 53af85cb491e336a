"""12-state linear insulin-glucose model with a time-varying insulin-sensitivity entry.

The continuous-time matrices are fixed model constants.  Exactly one entry of
the A matrix scales with the insulin sensitivity k_IS; everything downstream
(disturbance extraction, preview MPC) leans on that structure, so the entry's
position is exported as ``IS_ROW``/``IS_COL`` (0-based).
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

N_STATES = 12

# Position (0-based) and nominal value of the k_IS-scaled entry: row 4,
# column 5 in 1-based terms, i.e. the remote-insulin action on state 4.
IS_ROW = 3
IS_COL = 4
IS_COEFF = -0.025  # 1/min

# Gut-to-glucose transfer coefficient (row 1, column 11; 1/min).  Used to
# convert the last-but-one gastro-intestinal state into a glucose
# appearance rate.
GUT_RATE_COEFF = 0.024

_A_NOMINAL = np.array([
    [-0.70,   0.32,  0.38,  0.0,   0.0,     0.0,   0.0,   0.0,  0.0,    0.0,    0.024,  0.0],
    [0.50,   -0.56,  0.0,   0.0,  -0.010,   5.11, -5.63,  5.62, 0.0,   -0.030,  0.0,    0.0],
    [1.45,    0.0,  -2.75,  1.30,  0.0,     0.0,   0.0,   0.0,  0.0,    0.0,    0.0,    0.0],
    [0.0,     0.0,   0.20, -0.20,  IS_COEFF, 0.0,  0.0,   0.0,  0.0,    0.0,    0.0,    0.0],
    [0.0,     0.0,   0.0,   0.0,  -0.091,   0.0,   0.0,   0.0,  0.0,    0.075,  0.0,    0.0],
    [-0.0009, 0.0,   0.0,   0.0,  -0.0005, -0.08,  0.0,   0.0,  0.0,   -0.0015, 0.0,    0.0],
    [0.0,     0.0,   0.0,   0.0,   0.0,     0.007, -0.015, 0.0, 0.0,    0.0,    0.0,    0.0],
    [0.0,     0.0,   0.0,   0.0,  -0.0009,  0.0,   0.0,  -0.04, 0.0,   -0.0028, 0.0,    0.0],
    [0.0,     0.0,   0.0,   0.0,   0.0,     0.0,   0.0,   0.0, -0.025,  0.0,    0.0,    0.0],
    [0.0,     0.0,   0.0,   0.0,   0.0,     0.0,   0.0,   0.0,  0.011, -0.011,  0.0,    0.0],
    [0.0,     0.0,   0.0,   0.0,   0.0,     0.0,   0.0,   0.0,  0.0,    0.0,   -0.078,  0.0078],
    [0.0,     0.0,   0.0,   0.0,   0.0,     0.0,   0.0,   0.0,  0.0,    0.0,    0.0,   -0.0077],
])

_B_INSULIN = np.zeros(N_STATES)
_B_INSULIN[8] = 0.0216  # subcutaneous depot, per mU/min
_B_INSULIN[9] = 0.0014

_C_OUTPUT = np.zeros(N_STATES)
_C_OUTPUT[0] = 1.0  # blood glucose deviation, mg/dl


def build_A(k_is: float) -> np.ndarray:
    """Continuous A matrix at insulin sensitivity ``k_is``.

    Only the (IS_ROW, IS_COL) entry depends on k_is; it equals
    ``IS_COEFF * k_is``.
    """
    k_is = float(k_is)
    if not np.isfinite(k_is) or k_is <= 0.0:
        raise ValueError(f"insulin sensitivity must be positive and finite, got {k_is}")
    a = _A_NOMINAL.copy()
    a[IS_ROW, IS_COL] = IS_COEFF * k_is
    return a


def split_A(k_is: float) -> tuple[np.ndarray, np.ndarray]:
    """Split A(k_is) into the nominal part and the sensitivity deviation.

    Returns (A_hat, A_kis) with A_hat = build_A(1) and
    A_hat + A_kis == build_A(k_is) exactly.
    """
    a_hat = build_A(1.0)
    a_kis = build_A(k_is) - a_hat  # single nonzero entry, exact recombination
    return a_hat, a_kis


@dataclass(frozen=True)
class ContinuousModel:
    """Continuous-time state-space quadruple with the meal input column.

    ``B_meal`` routes carbohydrate (mg CHO/min) into the last
    gastro-intestinal state; its gain is configurable because the absorption
    scaling is not part of the fixed model constants.
    """

    A: np.ndarray
    B_insulin: np.ndarray
    C: np.ndarray
    B_meal: np.ndarray
    is_row: int = IS_ROW
    is_col: int = IS_COL
    is_coeff: float = IS_COEFF

    @classmethod
    def nominal(cls, meal_gain: float = 1.0) -> "ContinuousModel":
        """Model at k_IS = 1 with meals entering state 12 scaled by ``meal_gain``."""
        b_meal = np.zeros(N_STATES)
        b_meal[11] = float(meal_gain)
        return cls(A=build_A(1.0), B_insulin=_B_INSULIN.copy(),
                   C=_C_OUTPUT.copy(), B_meal=b_meal)


@dataclass(frozen=True)
class DiscreteModel:
    """Zero-order-hold discretization of the nominal model at sample time Ts.

    ``Bd_kis`` is the exact ZOH image of a unit disturbance held on state
    ``is_row`` over one sample; within a sample the disturbance also leaks
    into the coupled states, so the vector is dense in rows 1..4.
    """

    Ad: np.ndarray
    Bd: np.ndarray
    Bd_kis: np.ndarray
    Bd_meal: np.ndarray
    Cd: np.ndarray
    Ts: float


def zoh(a: np.ndarray, b_columns: np.ndarray, ts: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact zero-order-hold discretization via the augmented matrix exponential.

    ``b_columns`` may hold several input columns; returns (Ad, Bd_columns).
    """
    if not np.isfinite(ts) or ts <= 0.0:
        raise ValueError(f"sample time must be positive and finite, got {ts}")
    b = np.atleast_2d(np.asarray(b_columns, dtype=float))
    if b.shape[0] != a.shape[0]:
        b = b.T
    n, m = a.shape[0], b.shape[1]
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = a
    aug[:n, n:] = b
    phi = expm(aug * ts)
    return phi[:n, :n], phi[:n, n:]


def discretize(model: ContinuousModel, ts: float) -> DiscreteModel:
    """ZOH-discretize the nominal model jointly with all three input columns."""
    e_dist = np.zeros(N_STATES)
    e_dist[model.is_row] = 1.0
    cols = np.column_stack([model.B_insulin, e_dist, model.B_meal])
    ad, bd_cols = zoh(model.A, cols, ts)
    return DiscreteModel(Ad=ad, Bd=bd_cols[:, 0].copy(), Bd_kis=bd_cols[:, 1].copy(),
                         Bd_meal=bd_cols[:, 2].copy(), Cd=model.C.copy(), Ts=float(ts))


@dataclass(frozen=True)
class InsulinSensitivityProfile:
    """Diurnal insulin-sensitivity waveform k_IS(t), t in minutes.

    kinds:
      constant          -- k_IS = 1
      sinusoid          -- 1 + amplitude * sin(2*pi*(t - phase)/period)
      piecewise-linear  -- periodic interpolation of (time-of-cycle, value)
                           breakpoints
    """

    kind: str = "constant"
    amplitude: float = 0.3
    period: float = 1440.0
    phase: float = 0.0
    breakpoints: tuple = field(default=())

    def __post_init__(self):
        if self.kind not in ("constant", "sinusoid", "piecewise-linear"):
            raise ValueError(f"unknown profile kind {self.kind!r}")
        if self.period <= 0.0:
            raise ValueError("period must be positive")
        if self.kind == "sinusoid" and not abs(self.amplitude) < 1.0:
            raise ValueError("sinusoid amplitude must satisfy |a| < 1 to keep k_IS > 0")
        if self.kind == "piecewise-linear":
            if len(self.breakpoints) < 1:
                raise ValueError("piecewise-linear profile needs breakpoints")
            if any(v <= 0.0 for _, v in self.breakpoints):
                raise ValueError("breakpoint values must be positive")

    @classmethod
    def constant(cls) -> "InsulinSensitivityProfile":
        return cls(kind="constant")

    @classmethod
    def sinusoid(cls, amplitude: float = 0.3, phase: float = 0.0,
                 period: float = 1440.0) -> "InsulinSensitivityProfile":
        return cls(kind="sinusoid", amplitude=amplitude, phase=phase, period=period)


def kis_at(profile: InsulinSensitivityProfile, t) -> np.ndarray | float:
    """Evaluate k_IS at time(s) ``t`` (minutes). Vectorized over ``t``."""
    t_arr = np.asarray(t, dtype=float)
    if profile.kind == "constant":
        out = np.ones_like(t_arr)
    elif profile.kind == "sinusoid":
        out = 1.0 + profile.amplitude * np.sin(
            2.0 * np.pi * (t_arr - profile.phase) / profile.period)
    else:
        bp = np.asarray(profile.breakpoints, dtype=float)
        # periodic linear interpolation; wrap the first breakpoint around
        tb = np.concatenate([bp[:, 0], [bp[0, 0] + profile.period]])
        vb = np.concatenate([bp[:, 1], [bp[0, 1]]])
        phase = (t_arr - tb[0]) % profile.period + tb[0]
        out = np.interp(phase, tb, vb)
    if out.ndim == 0:
        return float(out)
    return out
