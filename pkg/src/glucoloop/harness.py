"""Closed-loop scenario runner, Table-2-style metrics, and run artifacts.

Wires plant -> UKF -> training-data extraction -> GP -> preview MPC at the
CGM period, over multi-day meal schedules.  Runs are deterministic per
(config, seed); plain MPC and GP-MPC differ only in the disturbance preview
handed to the controller.
"""

import csv
import hashlib
import json
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .distlearn import (TrainingBuffer, TrainingPoint, extract_point,
                        gut_appearance, postprocess)
from .estimator import Ukf, UkfConfig
from .gp import KernelParams, OnlineGp, prediction_trace_csv
from .linmodel import ContinuousModel, InsulinSensitivityProfile, discretize, kis_at
from .mpc import MpcConfig, MpcController
from .plant import Meal, PatientParams, Plant, PlantState

TABLE_METRIC_KEYS = (
    "pct_below_54", "pct_below_60", "pct_below_70", "pct_70_140", "pct_70_180",
    "pct_above_180", "pct_above_250", "pct_above_300",
    "mean", "median", "sd", "cv", "mean_at_7am",
)

TIMESERIES_COLUMNS = ("t_min", "glucose_true", "cgm", "insulin_mU_min",
                      "gp_mean", "gp_var", "train_u", "train_discard")


def parse_clock(value) -> float:
    """Clock time as minutes past midnight; accepts 'HH:MM' or minutes."""
    if isinstance(value, str):
        h, m = value.split(":")
        return float(h) * 60.0 + float(m)
    return float(value)


@dataclass(frozen=True)
class MealSpec:
    day: int               # 1-based simulation day
    time: str | float      # clock time, 'HH:MM' or minutes past midnight
    grams: float
    announced: bool = True
    duration: float = 15.0

    def __post_init__(self):
        if self.grams <= 0.0:
            raise ValueError("meal grams must be positive")
        if self.day < 1:
            raise ValueError("meal day is 1-based")

    @property
    def start_min(self) -> float:
        return (self.day - 1) * 1440.0 + parse_clock(self.time)


@dataclass(frozen=True)
class ScenarioConfig:
    duration_days: int = 7
    controller: str = "gp-mpc"     # "mpc" | "gp-mpc"
    seed: int = 1
    meals: tuple = ()
    profile: InsulinSensitivityProfile = field(
        default_factory=InsulinSensitivityProfile.constant)
    patient: PatientParams = field(default_factory=PatientParams)
    mpc: MpcConfig = field(default_factory=MpcConfig)
    gp: KernelParams = field(default_factory=KernelParams)
    meal_gain: float = 0.065       # state-12 units per mg CHO/min
    v_g: float = 170.0             # dl, for the meal gate conversion
    gate_threshold: float = 150.0  # mg/min
    range_threshold: float = 2.0   # mg/dl per sample
    buffer_max_age: float = 7 * 1440.0
    dist_sd: float = 0.45          # process-noise scale of the unmodeled disturbance
    ukf_feeds_gp_dist: bool = False
    force_zero_preview: bool = False  # diagnostic: gp-mpc degenerates to mpc
    metrics_on_cgm: bool = False
    overnight: tuple = (0.0, 420.0)   # clock window, minutes
    perturb_scale: float = 0.0        # plant model-mismatch mode

    def __post_init__(self):
        if self.controller not in ("mpc", "gp-mpc"):
            raise ValueError(f"unknown controller {self.controller!r}")
        if self.duration_days < 1:
            raise ValueError("duration must be at least one day")
        horizon_end = self.duration_days * 1440.0
        for meal in self.meals:
            if not 0.0 <= meal.start_min < horizon_end:
                raise ValueError(f"meal at day {meal.day} {meal.time} is outside "
                                 f"the {self.duration_days}-day scenario")

    @classmethod
    def from_toml(cls, path, **overrides) -> "ScenarioConfig":
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
        return cls.from_dict(raw, **overrides)

    @classmethod
    def from_dict(cls, raw: dict, **overrides) -> "ScenarioConfig":
        kwargs = {}
        for key in ("duration_days", "controller", "seed"):
            if key in raw:
                kwargs[key] = raw[key]
        kwargs["meals"] = tuple(MealSpec(**m) for m in raw.get("meals", ()))
        if "patient" in raw:
            kwargs["patient"] = PatientParams(**raw["patient"])
        if "profile" in raw:
            kwargs["profile"] = InsulinSensitivityProfile(**{
                k: (tuple(map(tuple, v)) if k == "breakpoints" else v)
                for k, v in raw["profile"].items()})
        mpc_kwargs = dict(raw.get("mpc", {}))
        patient = kwargs.get("patient", PatientParams())
        mpc_kwargs.setdefault("u_basal", patient.u_basal)
        mpc_kwargs.pop("ts", None)  # the control period is the CGM period
        kwargs["mpc"] = MpcConfig(**mpc_kwargs)
        if "gp" in raw:
            kwargs["gp"] = KernelParams(**raw["gp"])
        training = raw.get("training", {})
        for src, dst in (("meal_gain", "meal_gain"), ("v_g", "v_g"),
                         ("gate_threshold", "gate_threshold"),
                         ("range_threshold", "range_threshold"),
                         ("max_age_min", "buffer_max_age")):
            if src in training:
                kwargs[dst] = training[src]
        estimator = raw.get("estimator", {})
        if "dist_sd" in estimator:
            kwargs["dist_sd"] = estimator["dist_sd"]
        if "feeds_gp_dist" in estimator:
            kwargs["ukf_feeds_gp_dist"] = estimator["feeds_gp_dist"]
        metrics = raw.get("metrics", {})
        if "overnight_start" in metrics or "overnight_end" in metrics:
            kwargs["overnight"] = (parse_clock(metrics.get("overnight_start", "00:00")),
                                   parse_clock(metrics.get("overnight_end", "07:00")))
        if "on_cgm" in metrics:
            kwargs["metrics_on_cgm"] = metrics["on_cgm"]
        kwargs.update(overrides)
        return cls(**kwargs)


@dataclass
class RunRecord:
    """Per-step closed-loop trace plus the final training buffer."""

    t: np.ndarray
    glucose_true: np.ndarray
    cgm: np.ndarray
    insulin: np.ndarray
    gp_mean: np.ndarray
    gp_var: np.ndarray
    train_u: np.ndarray
    train_discard: list
    qp_status: list
    qp_jstar: np.ndarray
    qp_iterations: np.ndarray
    buffer: TrainingBuffer
    config: ScenarioConfig

    @property
    def n_steps(self) -> int:
        return len(self.t)

    def content_hash(self) -> str:
        digest = hashlib.sha256()
        for arr in (self.t, self.glucose_true, self.cgm, self.insulin,
                    self.gp_mean, self.gp_var, self.train_u):
            digest.update(np.ascontiguousarray(arr).tobytes())
        digest.update("|".join(self.train_discard).encode())
        return digest.hexdigest()


def _window_mass(meals, t0: float, t1: float) -> float:
    """CHO mass (mg) the given meals deliver inside [t0, t1)."""
    mass = 0.0
    for m in meals:
        overlap = min(m.end, t1) - max(m.start, t0)
        if overlap > 0.0:
            mass += m.rate * overlap
    return mass


def run_scenario(config: ScenarioConfig) -> RunRecord:
    """Execute the closed loop; deterministic for a given config."""
    patient = config.patient
    ts = patient.cgm_period
    steps_per_day = 1440.0 / ts
    if abs(steps_per_day - round(steps_per_day)) > 1e-9:
        raise ValueError("cgm_period must divide the day")
    n_steps = int(round(config.duration_days * steps_per_day))

    cont = ContinuousModel.nominal(config.meal_gain)
    disc = discretize(cont, ts)
    meals = tuple(Meal(start=m.start_min, grams=m.grams, duration=m.duration,
                       announced=m.announced) for m in config.meals)
    announced = tuple(m for m in meals if m.announced)
    plant = Plant(cont, patient, config.profile, seed=config.seed,
                  perturb_scale=config.perturb_scale, perturb_seed=config.seed + 1)
    state = PlantState.initial(meals)

    ukf = Ukf(UkfConfig.default(disc, cgm_noise_sd=patient.cgm_noise_sd,
                                dist_sd=config.dist_sd),
              disc, patient.fasting_glucose)
    ukf_state = ukf.initial_state()
    buffer = TrainingBuffer(max_age=config.buffer_max_age)
    use_gp = config.controller == "gp-mpc"
    ogp = OnlineGp(config.gp, max_age=config.buffer_max_age) if use_gp else None
    controller = MpcController(disc, config.mpc)
    n_h = config.mpc.n_horizon
    offsets = ts * np.arange(n_h)

    cols = {name: np.zeros(n_steps) for name in
            ("t", "glucose_true", "cgm", "insulin", "gp_mean", "gp_var",
             "train_u", "qp_jstar")}
    cols["gp_mean"][:] = np.nan
    cols["gp_var"][:] = np.nan
    cols["train_u"][:] = np.nan
    qp_iters = np.zeros(n_steps, dtype=int)
    discard_col = [""] * n_steps
    status_col = [""] * n_steps

    prev_xhat = None
    prev_u = 0.0
    for k in range(n_steps):
        t = k * ts
        y = plant.measure(state)
        ukf_state = ukf.update(ukf_state, y)
        x_hat = ukf_state.x_hat

        if prev_xhat is not None:
            u_kis = extract_point(x_hat, prev_xhat, prev_u, disc)
            point = postprocess(TrainingPoint(t=t - ts, u_kis=u_kis),
                                gut_appearance(x_hat, config.v_g),
                                config.gate_threshold, config.range_threshold)
            buffer.add(point, now=t)
            if ogp is not None and point.retained:
                ogp.append(point.t, point.u_kis, now=t)
            cols["train_u"][k] = u_kis
            discard_col[k] = point.discarded

        if ogp is not None:
            gp_model = ogp.model()
            preview = gp_model.predict_mean(t + offsets)
            mean_now, var_now = gp_model.predict(np.array([t]))
            cols["gp_mean"][k] = mean_now[0]
            cols["gp_var"][k] = var_now[0]
            if config.force_zero_preview:
                preview = np.zeros(n_h)
        else:
            preview = np.zeros(n_h)

        command, sol = controller.step(x_hat, preview)
        u_dev = command - config.mpc.u_basal

        cols["t"][k] = t
        cols["glucose_true"][k] = plant.true_glucose(state)
        cols["cgm"][k] = y
        cols["insulin"][k] = command
        cols["qp_jstar"][k] = sol.j_star
        qp_iters[k] = sol.iterations
        status_col[k] = sol.status

        state = plant.step(state, u_dev, ts)
        rate_known = _window_mass(announced, t, t + ts) / ts
        gp_dist = float(preview[0]) if config.ukf_feeds_gp_dist else 0.0
        ukf_state = ukf.predict(ukf_state, u_dev, meal_rate=rate_known,
                                gp_dist=gp_dist)
        prev_xhat = x_hat
        prev_u = u_dev

    return RunRecord(t=cols["t"], glucose_true=cols["glucose_true"],
                     cgm=cols["cgm"], insulin=cols["insulin"],
                     gp_mean=cols["gp_mean"], gp_var=cols["gp_var"],
                     train_u=cols["train_u"], train_discard=discard_col,
                     qp_status=status_col, qp_jstar=cols["qp_jstar"],
                     qp_iterations=qp_iters, buffer=buffer, config=config)


# ---------------------------------------------------------------------------
# metrics

@dataclass(frozen=True)
class WindowStats:
    pct_below_54: float
    pct_below_60: float
    pct_below_70: float
    pct_70_140: float
    pct_70_180: float
    pct_above_180: float
    pct_above_250: float
    pct_above_300: float
    mean: float
    median: float
    sd: float
    cv: float
    mean_at_7am: float | None

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in TABLE_METRIC_KEYS}


@dataclass(frozen=True)
class MetricBlock:
    day_and_night: WindowStats
    overnight: WindowStats

    def as_dict(self) -> dict:
        return {"day_and_night": self.day_and_night.as_dict(),
                "overnight": self.overnight.as_dict()}


def _window_stats(t: np.ndarray, g: np.ndarray, with_7am: bool) -> WindowStats:
    n = len(g)
    if n == 0:
        raise ValueError("empty glucose series")
    pct = lambda mask: float(np.count_nonzero(mask) * 100.0) / n
    tod = np.mod(t, 1440.0)
    at7 = np.isclose(tod, 420.0, atol=1e-9)
    mean = float(np.mean(g))
    sd = float(np.std(g))
    return WindowStats(
        pct_below_54=pct(g < 54.0),
        pct_below_60=pct(g < 60.0),
        pct_below_70=pct(g < 70.0),
        pct_70_140=pct((g >= 70.0) & (g <= 140.0)),
        pct_70_180=pct((g >= 70.0) & (g <= 180.0)),
        pct_above_180=pct(g > 180.0),
        pct_above_250=pct(g > 250.0),
        pct_above_300=pct(g > 300.0),
        mean=mean,
        median=float(np.median(g)),
        sd=sd,
        cv=sd / mean if mean != 0.0 else 0.0,
        mean_at_7am=float(np.mean(g[at7])) if with_7am and at7.any() else None,
    )


def metrics_from_series(t: np.ndarray, glucose: np.ndarray,
                        overnight=(0.0, 420.0)) -> MetricBlock:
    """Table-2-style metrics over the full series and the overnight window.

    Range boundaries are inclusive on the inside (70 <= g <= 180 is in
    range); the overnight window is a clock interval [start, end) in minutes
    and may wrap midnight.
    """
    t = np.asarray(t, dtype=float)
    glucose = np.asarray(glucose, dtype=float)
    start, end = overnight
    tod = np.mod(t, 1440.0)
    if start <= end:
        night = (tod >= start) & (tod < end)
    else:
        night = (tod >= start) | (tod < end)
    if not night.any():
        raise ValueError("overnight window contains no samples")
    return MetricBlock(day_and_night=_window_stats(t, glucose, with_7am=True),
                       overnight=_window_stats(t[night], glucose[night],
                                               with_7am=False))


def compute_metrics(record: RunRecord, overnight=None,
                    on_cgm: bool | None = None) -> MetricBlock:
    if record.n_steps == 0:
        raise ValueError("cannot compute metrics of an empty record")
    overnight = record.config.overnight if overnight is None else overnight
    on_cgm = record.config.metrics_on_cgm if on_cgm is None else on_cgm
    signal = record.cgm if on_cgm else record.glucose_true
    return metrics_from_series(record.t, signal, overnight)


# ---------------------------------------------------------------------------
# run artifacts

def write_outputs(record: RunRecord, outdir, qp_log: bool = False) -> dict:
    """Write timeseries.csv, metrics.json, training_data.csv (and the GP
    trace / QP log where applicable); returns the written paths."""
    if record.n_steps == 0:
        raise ValueError("refusing to write an empty run record")
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {}

    ts_path = outdir / "timeseries.csv"
    with open(ts_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TIMESERIES_COLUMNS)
        for k in range(record.n_steps):
            writer.writerow([
                f"{record.t[k]:.17g}", f"{record.glucose_true[k]:.17g}",
                f"{record.cgm[k]:.17g}", f"{record.insulin[k]:.17g}",
                f"{record.gp_mean[k]:.17g}", f"{record.gp_var[k]:.17g}",
                f"{record.train_u[k]:.17g}", record.train_discard[k]])
    paths["timeseries"] = ts_path

    metrics = compute_metrics(record)
    metrics_path = outdir / "metrics.json"
    with open(metrics_path, "w") as fh:
        json.dump(metrics.as_dict(), fh, indent=2)
    paths["metrics"] = metrics_path

    info_path = outdir / "run_info.json"
    with open(info_path, "w") as fh:
        json.dump({"controller": record.config.controller,
                   "seed": record.config.seed,
                   "duration_days": record.config.duration_days,
                   "n_steps": record.n_steps,
                   "content_hash": record.content_hash()}, fh, indent=2)
    paths["run_info"] = info_path

    train_path = outdir / "training_data.csv"
    record.buffer.to_csv(train_path)
    paths["training_data"] = train_path

    if record.config.controller == "gp-mpc":
        gp_path = outdir / "gp_trace.csv"
        prediction_trace_csv(gp_path, record.t, record.gp_mean, record.gp_var)
        paths["gp_trace"] = gp_path

    if qp_log:
        qp_path = outdir / "qp_log.csv"
        with open(qp_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t_min", "status", "j_star", "iterations", "u_command"])
            for k in range(record.n_steps):
                writer.writerow([f"{record.t[k]:.17g}", record.qp_status[k],
                                 f"{record.qp_jstar[k]:.17g}",
                                 record.qp_iterations[k],
                                 f"{record.insulin[k]:.17g}"])
        paths["qp_log"] = qp_path
    return paths


def read_timeseries(path) -> dict:
    """Read a timeseries.csv back into column arrays."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != TIMESERIES_COLUMNS:
            raise ValueError(f"unexpected timeseries columns: {header}")
        rows = list(reader)
    out = {}
    for j, name in enumerate(TIMESERIES_COLUMNS):
        if name == "train_discard":
            out[name] = [r[j] for r in rows]
        else:
            out[name] = np.array([float(r[j]) for r in rows])
    return out


def compare_runs(dir_a, dir_b) -> tuple[str, dict]:
    """Side-by-side metrics table for two finished runs."""
    blocks = {}
    labels = {}
    for tag, d in (("a", Path(dir_a)), ("b", Path(dir_b))):
        with open(d / "metrics.json") as fh:
            blocks[tag] = json.load(fh)
        info = d / "run_info.json"
        if info.exists():
            with open(info) as fh:
                labels[tag] = json.load(fh).get("controller", d.name)
        else:
            labels[tag] = d.name
    la, lb = labels["a"], labels["b"]
    lines = [f"{'metric':<16}{la + ' day':>14}{lb + ' day':>14}"
             f"{la + ' night':>16}{lb + ' night':>16}"]
    for key in TABLE_METRIC_KEYS:
        vals = []
        for window in ("day_and_night", "overnight"):
            for tag in ("a", "b"):
                v = blocks[tag][window][key]
                vals.append("---" if v is None else f"{v:.1f}")
        lines.append(f"{key:<16}{vals[0]:>14}{vals[1]:>14}{vals[2]:>16}{vals[3]:>16}")
    table = "\n".join(lines)
    payload = {"labels": labels, "a": blocks["a"], "b": blocks["b"]}
    return table, payload
