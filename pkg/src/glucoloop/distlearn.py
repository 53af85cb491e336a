"""Training-data extraction for the sensitivity disturbance and its filtering.

Each new state estimate yields one candidate point: the one-step propagation
residual on the disturbance-entry row, normalized by the discrete disturbance
gain.  Points are dropped while a meal is being absorbed (the residual is
polluted by gastro-intestinal mismatch) or when their magnitude is outside
the plausible range (the signature of an unannounced meal).
"""

import csv
from dataclasses import dataclass, replace

import numpy as np

from .linmodel import GUT_RATE_COEFF, IS_ROW, DiscreteModel

RETAINED = "none"
MEAL_GATE = "meal-gate"
OUT_OF_RANGE = "out-of-range"

MEAL_GATE_THRESHOLD = 150.0  # mg/min glucose appearance
RANGE_THRESHOLD = 2.0        # mg/dl per sample
DISTRIBUTION_VOLUME = 170.0  # dl


@dataclass(frozen=True)
class TrainingPoint:
    t: float          # min; start of the propagation interval the value covers
    u_kis: float      # disturbance value, mg/dl per sample
    discarded: str = RETAINED

    @property
    def retained(self) -> bool:
        return self.discarded == RETAINED


def extract_point(x_k: np.ndarray, x_km1: np.ndarray, u_km1: float,
                  model: DiscreteModel) -> float:
    """One-step propagation residual on the disturbance row.

    Returns ([x_k] - [Ad x_{k-1}] - [Bd u_{k-1}]) / [Bd_kis], all indexed at
    the disturbance-entry row.
    """
    i = IS_ROW
    bk = model.Bd_kis[i]
    if bk == 0.0:
        raise ValueError("disturbance gain [Bd_kis] is zero at the entry row; "
                         "model was not discretized with the disturbance input")
    resid = x_k[i] - model.Ad[i] @ x_km1 - model.Bd[i] * u_km1
    return float(resid / bk)


def gut_appearance(x_hat: np.ndarray, v_g: float = DISTRIBUTION_VOLUME) -> float:
    """Rate of glucose entering the blood stream, mg/min.

    The gut state feeds the glucose compartment at GUT_RATE_COEFF (mg/dl/min);
    scaling by the distribution volume v_g (dl) converts it to a mass rate.
    """
    return GUT_RATE_COEFF * float(x_hat[10]) * v_g


def postprocess(point: TrainingPoint, gut_appearance_rate: float,
                meal_threshold: float = MEAL_GATE_THRESHOLD,
                range_threshold: float = RANGE_THRESHOLD) -> TrainingPoint:
    """Flag a candidate point; the meal gate takes precedence over the range check."""
    if gut_appearance_rate > meal_threshold:
        return replace(point, discarded=MEAL_GATE)
    if abs(point.u_kis) > range_threshold:
        return replace(point, discarded=OUT_OF_RANGE)
    return replace(point, discarded=RETAINED)


class TrainingBuffer:
    """Time-ordered training points inside a sliding age window."""

    def __init__(self, max_age: float = 7 * 1440.0, capacity: int | None = None):
        self.max_age = max_age
        self.capacity = capacity
        self._points: list[TrainingPoint] = []

    def __len__(self) -> int:
        return len(self._points)

    @property
    def points(self) -> tuple[TrainingPoint, ...]:
        return tuple(self._points)

    def add(self, point: TrainingPoint, now: float | None = None) -> None:
        if self._points and point.t <= self._points[-1].t:
            raise ValueError("training-point timestamps must be strictly increasing")
        self._points.append(point)
        self.prune(point.t if now is None else now)

    def prune(self, now: float) -> None:
        cutoff = now - self.max_age
        while self._points and self._points[0].t < cutoff:
            self._points.pop(0)
        if self.capacity is not None:
            while len(self._points) > self.capacity:
                self._points.pop(0)

    def retained(self) -> tuple[np.ndarray, np.ndarray]:
        """Immutable (timestamps, values) snapshot of the retained points."""
        kept = [(p.t, p.u_kis) for p in self._points if p.retained]
        if not kept:
            return np.empty(0), np.empty(0)
        arr = np.array(kept)
        return arr[:, 0].copy(), arr[:, 1].copy()

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t_min", "u_kis", "discarded_reason"])
            for p in self._points:
                writer.writerow([f"{p.t:.17g}", f"{p.u_kis:.17g}", p.discarded])
