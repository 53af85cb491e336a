"""Gaussian Process regression with a periodic x fading-memory kernel.

The covariance between two samples is theta^2 * k_E * k_P: the periodic
factor correlates samples taken at the same time of day, the exponential
factor forgets old data.  Observation noise sigma_n^2 sits on the training
diagonal only (adding it to every entry, as a literal reading of the
composite kernel suggests, would act as a constant bias; the
``constant_noise_kernel`` flag exists to compare against that reading).
"""

import csv
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from . import _core

_JITTER_START = 1e-10
_JITTER_MAX = 1e-6


@dataclass(frozen=True)
class KernelParams:
    theta: float = 0.071      # signal scale
    period: float = 1440.0    # min
    l_p: float = 0.549        # periodic length-scale
    l_e: float = 4.1e4        # fading length-scale, min
    sigma_n: float = 0.2      # noise SD on the extracted samples

    def __post_init__(self):
        for name in ("theta", "period", "l_p", "l_e", "sigma_n"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be strictly positive")

    @property
    def theta2(self) -> float:
        return self.theta**2

    @property
    def noise_var(self) -> float:
        return self.sigma_n**2


def kernel_periodic(t, t2, l_p: float, period: float):
    """exp(-2 sin^2(pi (t - t2)/period) / l_p^2), in (0, 1]."""
    d = np.asarray(t, dtype=float) - np.asarray(t2, dtype=float)
    return np.exp(-2.0 * np.sin(np.pi * d / period) ** 2 / l_p**2)


def kernel_exponential(t, t2, l_e: float):
    """exp(-|t - t2| / l_e), in (0, 1]."""
    return np.exp(-np.abs(np.asarray(t, dtype=float) - np.asarray(t2, dtype=float)) / l_e)


def kernel_composite(t, t2, params: KernelParams, same_point: bool = False):
    """theta^2 * k_E * k_P, plus sigma_n^2 when both arguments are one
    training point (``same_point``)."""
    val = params.theta2 * kernel_exponential(t, t2, params.l_e) \
        * kernel_periodic(t, t2, params.l_p, params.period)
    if same_point:
        val = val + params.noise_var
    return val


def _cov_matrix(t1: np.ndarray, t2: np.ndarray, params: KernelParams) -> np.ndarray:
    return _core.composite_kernel(t1, t2, params.theta2, params.l_p,
                                  params.period, params.l_e)


def _chol_noisy(k: np.ndarray, noise_var: float) -> np.ndarray:
    n = k.shape[0]
    jitter = 0.0
    while True:
        try:
            return np.linalg.cholesky(k + (noise_var + jitter) * np.eye(n))
        except np.linalg.LinAlgError:
            jitter = _JITTER_START if jitter == 0.0 else jitter * 10.0
            if jitter > _JITTER_MAX:
                raise RuntimeError(
                    "training covariance not factorizable within jitter budget")


class GpModel:
    """Posterior over the disturbance given a frozen training snapshot."""

    def __init__(self, params: KernelParams, train_t: np.ndarray,
                 train_y: np.ndarray, chol: np.ndarray | None,
                 alpha_vec: np.ndarray | None, cross_noise: float = 0.0):
        self.params = params
        self.train_t = train_t
        self.train_y = train_y
        self.chol = chol            # lower factor of the training covariance
        self.alpha_vec = alpha_vec  # training covariance solved against y
        self.cross_noise = cross_noise  # nonzero only in the literal-kernel mode

    @property
    def n_train(self) -> int:
        return len(self.train_t)

    def predict(self, query_t) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and variance (prior mean 0) at the query times."""
        q = np.atleast_1d(np.asarray(query_t, dtype=float))
        prior_var = self.params.theta2 + self.cross_noise
        if self.n_train == 0:
            return np.zeros(len(q)), np.full(len(q), prior_var)
        ks = _cov_matrix(q, self.train_t, self.params) + self.cross_noise
        mean = ks @ self.alpha_vec
        v = solve_triangular(self.chol, ks.T, lower=True)
        var = prior_var - np.einsum("ij,ij->j", v, v)
        return mean, np.maximum(var, 0.0)

    def predict_mean(self, query_t) -> np.ndarray:
        q = np.atleast_1d(np.asarray(query_t, dtype=float))
        if self.n_train == 0:
            return np.zeros(len(q))
        ks = _cov_matrix(q, self.train_t, self.params) + self.cross_noise
        return ks @ self.alpha_vec


def fit(buffer, params: KernelParams, constant_noise_kernel: bool = False) -> GpModel:
    """Fit the GP to a TrainingBuffer or a (timestamps, values) pair.

    With ``constant_noise_kernel`` the noise variance is added to every
    covariance entry, training and cross alike (the literal composite-kernel
    reading, where it acts as a constant bias term); kept for comparison
    runs.  The default treats it as observation noise on the training
    diagonal only.
    """
    if hasattr(buffer, "retained"):
        train_t, train_y = buffer.retained()
    else:
        train_t, train_y = buffer
    train_t = np.asarray(train_t, dtype=float).copy()
    train_y = np.asarray(train_y, dtype=float).copy()
    cross = params.noise_var if constant_noise_kernel else 0.0
    if len(train_t) == 0:
        return GpModel(params, train_t, train_y, None, None, cross)
    k = _cov_matrix(train_t, train_t, params)
    if constant_noise_kernel:
        chol = _chol_noisy(k + params.noise_var, 0.0)
    else:
        chol = _chol_noisy(k, params.noise_var)
    alpha = solve_triangular(chol.T, solve_triangular(chol, train_y, lower=True))
    return GpModel(params, train_t, train_y, chol, alpha, cross)


class OnlineGp:
    """Incrementally maintained GP identical to refitting after every append.

    Appending a point extends the Cholesky factor with one bordered row in
    O(n^2); evictions (age window) trigger a full refit.  ``model()`` exposes
    the current state as a GpModel.
    """

    def __init__(self, params: KernelParams, max_age: float = 7 * 1440.0):
        self.params = params
        self.max_age = max_age
        self._t: list[float] = []
        self._y: list[float] = []
        self._chol = np.zeros((0, 0))
        self._z = np.zeros(0)  # forward-solve of y through the factor

    @property
    def n_train(self) -> int:
        return len(self._t)

    def _refit(self) -> None:
        m = fit((np.array(self._t), np.array(self._y)), self.params)
        if m.n_train:
            self._chol = m.chol
            self._z = solve_triangular(m.chol, np.array(self._y), lower=True)
        else:
            self._chol = np.zeros((0, 0))
            self._z = np.zeros(0)

    def append(self, t: float, y: float, now: float | None = None) -> None:
        now = t if now is None else now
        cutoff = now - self.max_age
        if self._t and self._t[0] < cutoff:
            keep = next(i for i, ti in enumerate(self._t) if ti >= cutoff)
            del self._t[:keep], self._y[:keep]
            self._t.append(float(t)); self._y.append(float(y))
            self._refit()
            return
        n = self.n_train
        kvec = _cov_matrix(np.array([t]), np.array(self._t), self.params)[0] if n else np.zeros(0)
        kappa = self.params.theta2 + self.params.noise_var
        self._t.append(float(t)); self._y.append(float(y))
        if n == 0:
            self._chol = np.array([[np.sqrt(kappa)]])
            self._z = np.array([y / np.sqrt(kappa)])
            return
        w = solve_triangular(self._chol, kvec, lower=True)
        d2 = kappa - w @ w
        if d2 <= _JITTER_START:
            self._refit()
            return
        d = np.sqrt(d2)
        chol = np.zeros((n + 1, n + 1))
        chol[:n, :n] = self._chol
        chol[n, :n] = w
        chol[n, n] = d
        self._chol = chol
        self._z = np.append(self._z, (y - w @ self._z) / d)

    def model(self) -> GpModel:
        t = np.array(self._t)
        y = np.array(self._y)
        if not len(t):
            return GpModel(self.params, t, y, None, None)
        alpha = solve_triangular(self._chol.T, self._z)
        return GpModel(self.params, t, y, self._chol, alpha)

    def predict(self, query_t):
        return self.model().predict(query_t)

    def predict_mean(self, query_t):
        return self.model().predict_mean(query_t)


def prediction_trace_csv(path, t_min, mean, variance) -> None:
    """Dump a GP prediction trace (t_min, mean, variance) to CSV."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_min", "mean", "variance"])
        for row in zip(t_min, mean, variance):
            writer.writerow([f"{v:.17g}" for v in row])
