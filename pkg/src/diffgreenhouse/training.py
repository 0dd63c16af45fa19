"""Parameter fitting by gradient descent through model rollouts.

Training alternates two phases inside each outer iteration.  Before each
phase the whole season is re-simulated with the current parameters to
refresh the table of start states (observed channels from the data,
unobserved ones from the simulation).  The climate phase fits short
rollouts to the measured air temperature, vapour pressure and CO2; the crop
phase fits week-long rollouts, started at midnight, to the daily harvest
records.

Loss weights (defaults)
-----------------------
===========  ==========  ===============================
 Name         Default     Scales squared error in
===========  ==========  ===============================
weight_temp   1e-1        air temperature (degC)
weight_vp     5e-6        air vapour pressure (Pa)
weight_co2    2e-5        air CO2 (ppm)
weight_hw     1           cumulative harvest (kg m-2)
weight_hc     1           cumulative fruit count (m-2)
===========  ==========  ===============================
"""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import autodiff as ad
from . import model
from . import params as P
from .data import CLIMATE, STEPS_PER_DAY
from .errors import DataError, UsageError
from .model import IDX
from .simulator import Seeds, combine_observed, fill_missing_states, rollout, season_rollout

log = logging.getLogger(__name__)

CLIMATE_IDX = [IDX[c] for c in CLIMATE]
HARVEST_IDX = [IDX["HW"], IDX["HC"]]
HISTORY_COLUMNS = (
    "iteration", "phase", "temp_loss", "vp_loss", "co2_loss", "climate_total",
    "crop_hw_loss", "crop_hc_loss", "crop_total",
)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    outer_iterations: int = 10
    climate_iterations: int = 50
    crop_iterations: int = 25
    batch_size: int = 32
    climate_horizon: int = 24
    crop_horizon: int = 2016
    learning_rate: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    clip: float = 1.0
    eps: float = 1e-8
    weight_temp: float = 1e-1
    weight_vp: float = 5e-6
    weight_co2: float = 2e-5
    weight_hw: float = 1.0
    weight_hc: float = 1.0
    seed: int = 0
    reset_adam: bool = False
    substep_policy: str = "auto"

    def __post_init__(self):
        for name in ("outer_iterations", "climate_iterations", "crop_iterations"):
            if int(getattr(self, name)) != getattr(self, name) or getattr(self, name) < 0:
                raise UsageError(f"{name} must be a nonnegative integer")
        for name in ("batch_size", "climate_horizon", "crop_horizon"):
            if int(getattr(self, name)) != getattr(self, name) or getattr(self, name) < 1:
                raise UsageError(f"{name} must be a positive integer")
        for name in ("learning_rate", "clip", "eps", "weight_temp", "weight_vp",
                     "weight_co2", "weight_hw", "weight_hc"):
            if not getattr(self, name) > 0:
                raise UsageError(f"{name} must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise UsageError("beta1 and beta2 must lie in (0, 1)")
        if self.crop_horizon % STEPS_PER_DAY:
            raise UsageError(f"crop_horizon must be a whole number of days ({STEPS_PER_DAY} steps)")
        if self.substep_policy not in ("auto", "literal"):
            raise UsageError("substep_policy must be 'auto' or 'literal'")

    @classmethod
    def from_dict(cls, doc):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise UsageError(f"unknown training config keys {unknown}")
        return cls(**doc)

    def to_dict(self):
        return asdict(self)

    @property
    def climate_weights(self):
        return np.array([self.weight_temp, self.weight_vp, self.weight_co2])

    @property
    def crop_weights(self):
        return np.array([self.weight_hw, self.weight_hc])


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n), 0)


# --------------------------------------------------------------------------
# Losses


def climate_terms(states, truth, weights):
    """Weighted mean squared errors of the three climate channels.

    ``states`` is ``(B, T + 1, 11)`` starting at the window's first index,
    ``truth`` is ``(B, T, 3)`` for the following ``T`` indices.  Returns one
    scalar per channel, each averaged over time and over the batch.
    """
    truth = np.asarray(truth, dtype=float)
    if np.isnan(truth).any():
        raise DataError("climate truth has missing values")
    pred = states[..., 1:, :]
    terms = []
    for c, idx in enumerate(CLIMATE_IDX):
        err = pred[..., idx] - truth[..., c]
        terms.append(ad.mean(err * err) * float(weights[c]))
    return terms


def climate_loss(states, truth, weights):
    t, v, c = climate_terms(states, truth, weights)
    return t + v + c


def crop_terms(states, targets, offsets, weights, steps_per_day=STEPS_PER_DAY):
    """Weighted squared harvest errors summed over end-of-day indices.

    ``offsets`` are the positions of the end-of-day indices within the
    window (1..T) and ``targets`` ``(B, K, 2)`` the recorded cumulative
    weight and count there; NaN targets are skipped.  The sum over days is
    averaged over the batch.
    """
    horizon = ad.value(states).shape[-2] - 1
    if horizon % steps_per_day:
        raise UsageError(f"crop horizon {horizon} is not a whole number of days")
    offsets = np.asarray(offsets, dtype=int)
    targets = np.asarray(targets, dtype=float)
    seen = ~np.isnan(targets)
    targets = np.where(seen, targets, 0.0)
    batch = ad.value(states).shape[0]
    terms = []
    for c, idx in enumerate(HARVEST_IDX):
        pred = states[:, offsets, idx]
        err = (pred - targets[..., c]) * seen[..., c]
        terms.append(ad.sum(err * err) * (float(weights[c]) / batch))
    return terms


def crop_loss(states, targets, offsets, weights, steps_per_day=STEPS_PER_DAY):
    hw, hc = crop_terms(states, targets, offsets, weights, steps_per_day)
    return hw + hc


# --------------------------------------------------------------------------
# Mini-batches


@dataclass(frozen=True)
class Batch:
    starts: np.ndarray
    x0: np.ndarray
    controls: np.ndarray
    weather: np.ndarray
    truth: np.ndarray
    offsets: np.ndarray | None = None


def _windows(arr, starts, T):
    return np.stack([arr[s:s + T] for s in starts])


def sample_climate_batch(dataset, start_states, batch, T, rng):
    """Windows with start indices drawn uniformly from ``[0, N - T)``."""
    n = len(dataset)
    if n <= T:
        raise UsageError(f"dataset of {n} rows is too short for horizon {T}")
    starts = rng.integers(0, n - T, size=batch)
    obs = dataset.observations[:, CLIMATE_IDX]
    return Batch(
        starts=starts,
        x0=start_states[starts],
        controls=_windows(dataset.controls, starts, T),
        weather=_windows(dataset.weather, starts, T),
        truth=np.stack([obs[s + 1:s + T + 1] for s in starts]),
    )


def crop_starts(dataset, T):
    """Midnight indices whose ``T``-step window fits inside the season."""
    if T % STEPS_PER_DAY:
        raise UsageError(f"crop horizon {T} is not a whole number of days")
    mids = dataset.start_of_day_indices()
    return mids[mids + T <= len(dataset)]


def sample_crop_batch(dataset, start_states, batch, T, rng):
    """Midnight-aligned windows; targets are the harvest records at each day's last slot."""
    valid = crop_starts(dataset, T)
    if len(valid) == 0:
        raise UsageError(f"no midnight start leaves room for a {T}-step crop window")
    starts = rng.choice(valid, size=batch)
    offsets = np.arange(STEPS_PER_DAY - 1, T, STEPS_PER_DAY)
    obs = dataset.observations[:, HARVEST_IDX]
    return Batch(
        starts=starts,
        x0=start_states[starts],
        controls=_windows(dataset.controls, starts, T),
        weather=_windows(dataset.weather, starts, T),
        truth=np.stack([obs[s + offsets] for s in starts]),
        offsets=offsets,
    )


# --------------------------------------------------------------------------
# Optimizer


def adam_step(grad, state, theta_star, cfg, names=None):
    """Clip each gradient entry to ``[-clip, clip]``, then one bias-corrected Adam update."""
    grad = np.asarray(grad, dtype=float)
    theta_star = np.asarray(theta_star, dtype=float)
    if grad.shape != theta_star.shape or state.m.shape != theta_star.shape:
        raise ValueError("gradient, moments and parameters must have equal length")
    bad = np.flatnonzero(~np.isfinite(grad))
    if len(bad):
        name = names[bad[0]] if names is not None else f"#{bad[0]}"
        raise ad.NumericError(f"non-finite gradient for parameter {name}")
    g = np.clip(grad, -cfg.clip, cfg.clip)
    t = state.t + 1
    m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * g
    v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * g * g
    m_hat = m / (1.0 - cfg.beta1**t)
    v_hat = v / (1.0 - cfg.beta2**t)
    new = theta_star - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return new, AdamState(m, v, t)


# --------------------------------------------------------------------------
# Training loop


@dataclass
class TrainResult:
    theta_star: np.ndarray
    history: list
    events: list
    validation: list


def _climate_program(batch, cfg, specs, terms_out):
    def program(theta_star):
        theta = P.constrain_raw(theta_star, specs)
        states = rollout(batch.x0, batch.controls, batch.weather, theta,
                         batch.controls.shape[-2], policy=cfg.substep_policy).states
        terms = climate_terms(states, batch.truth, cfg.climate_weights)
        terms_out[:] = [float(ad.value(t)) for t in terms]
        return terms[0] + terms[1] + terms[2]
    return program


def _crop_program(batch, cfg, specs, terms_out):
    def program(theta_star):
        theta = P.constrain_raw(theta_star, specs)
        states = rollout(batch.x0, batch.controls, batch.weather, theta,
                         batch.controls.shape[-2], policy=cfg.substep_policy).states
        terms = crop_terms(states, batch.truth, batch.offsets, cfg.crop_weights)
        terms_out[:] = [float(ad.value(t)) for t in terms]
        return terms[0] + terms[1]
    return program


def _row(iteration, phase, terms):
    row = dict.fromkeys(HISTORY_COLUMNS, None)
    row["iteration"], row["phase"] = iteration, phase
    if phase == "climate":
        row["temp_loss"], row["vp_loss"], row["co2_loss"] = terms
        row["climate_total"] = sum(terms)
    else:
        row["crop_hw_loss"], row["crop_hc_loss"] = terms
        row["crop_total"] = sum(terms)
    return row


def train(dataset, theta_star_init, cfg=TrainConfig(), specs=None, seeds=Seeds(),
          validation=None, on_event=None):
    """Fit raw parameters ``theta_star`` to ``dataset``.

    Each outer iteration: refresh the start-state table, run
    ``climate_iterations`` climate updates, refresh again, run
    ``crop_iterations`` crop updates.  ``events`` lists ``(kind, outer,
    inner)`` tuples in execution order.  When a ``validation`` dataset is
    given its climate losses are evaluated before training and after every
    outer iteration.
    """
    specs = model.REGISTRY if specs is None else specs
    names = [s.name for s in specs]
    theta_star = np.array(theta_star_init, dtype=float)
    rng = np.random.default_rng(cfg.seed)
    state = AdamState.zeros(len(theta_star))
    history, events, val_rows = [], [], []

    def emit(kind, outer, inner):
        events.append((kind, outer, inner))
        if on_event is not None:
            on_event(kind, outer, inner)

    def validate(outer):
        if validation is not None:
            m = evaluate(validation, theta_star, cfg, specs, seeds, crop=False)
            val_rows.append({"outer": outer, **{k: m[k] for k in
                            ("temp_loss", "vp_loss", "co2_loss", "climate_total")}})

    validate(0)
    iteration = 0
    phases = (
        ("climate", cfg.climate_iterations, cfg.climate_horizon, sample_climate_batch, _climate_program),
        ("crop", cfg.crop_iterations, cfg.crop_horizon, sample_crop_batch, _crop_program),
    )
    for outer in range(cfg.outer_iterations):
        for phase, iters, horizon, sampler, make_program in phases:
            try:
                theta_ref = P.constrain_raw(theta_star, specs)
                start_states = fill_missing_states(dataset, theta_ref, seeds, cfg.substep_policy)
            except Exception as exc:
                raise TrainingError(f"outer {outer}, {phase} refresh: {exc}") from exc
            emit("refresh", outer, None)
            if cfg.reset_adam:
                state = AdamState.zeros(len(theta_star))
            for inner in range(iters):
                try:
                    batch = sampler(dataset, start_states, cfg.batch_size, horizon, rng)
                    terms = []
                    loss, grad = ad.run_with_gradient(make_program(batch, cfg, specs, terms), theta_star)
                    theta_star, state = adam_step(grad, state, theta_star, cfg, names)
                except UsageError:
                    raise
                except Exception as exc:
                    raise TrainingError(f"outer {outer}, {phase} iteration {inner}: {exc}") from exc
                iteration += 1
                history.append(_row(iteration, phase, terms))
                emit(phase, outer, inner)
                log.info("outer %d %s %d loss %.6g", outer, phase, inner, loss)
        validate(outer + 1)
    return TrainResult(theta_star, history, events, val_rows)


def write_history_csv(history, path):
    """One row per update; loss fields of the inactive phase are left empty."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(HISTORY_COLUMNS)
        for row in history:
            out.writerow(["" if row[c] is None else (repr(row[c]) if isinstance(row[c], float) else row[c])
                          for c in HISTORY_COLUMNS])


def write_validation_csv(rows, path):
    cols = ("outer", "temp_loss", "vp_loss", "co2_loss", "climate_total")
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(cols)
        for row in rows:
            out.writerow([row["outer"]] + [repr(float(row[c])) for c in cols[1:]])


# --------------------------------------------------------------------------
# Evaluation


def relative_error(pred, true):
    """``(|pred - true| / |true|, True)``, or ``(|pred - true|, False)`` when ``true`` is 0."""
    if true == 0:
        return abs(pred - true), False
    return abs(pred - true) / abs(true), True


def evaluate(dataset, theta_star, cfg=TrainConfig(), specs=None, seeds=Seeds(), crop=True):
    """Loss and prediction metrics of raw parameters ``theta_star`` on ``dataset``.

    Climate losses average consecutive non-overlapping windows of
    ``climate_horizon`` steps started from the refreshed state table.  Crop
    losses and final-day errors come from one free rollout of the whole
    season, compared with every harvest record.
    """
    specs = model.REGISTRY if specs is None else specs
    theta = ad.value(P.constrain_raw(np.asarray(theta_star, dtype=float), specs))
    policy = cfg.substep_policy
    T = cfg.climate_horizon
    n = len(dataset)
    free = season_rollout(dataset, theta, seeds, policy)
    season = combine_observed(dataset.observations, free, dataset.mask)
    starts = np.arange(0, n - T, T)
    if len(starts) == 0:
        raise UsageError(f"dataset of {n} rows is too short for horizon {T}")
    obs = dataset.observations[:, CLIMATE_IDX]
    states = rollout(season[starts], _windows(dataset.controls, starts, T),
                     _windows(dataset.weather, starts, T), theta, T, policy=policy).states
    truth = np.stack([obs[s + 1:s + T + 1] for s in starts])
    terms = [float(t) for t in climate_terms(states, truth, cfg.climate_weights)]
    out = {
        "temp_loss": terms[0], "vp_loss": terms[1], "co2_loss": terms[2],
        "climate_total": sum(terms), "climate_windows": int(len(starts)),
    }
    if not crop:
        return out
    if not dataset.harvest:
        raise DataError("dataset has no harvest records")
    idx = np.array([r.index for r in dataset.harvest])
    rec = np.array([[r.weight, r.count] for r in dataset.harvest])
    err = free[idx][:, HARVEST_IDX] - rec
    hw, hc = (cfg.crop_weights * (err * err).sum(axis=0)).tolist()
    last = dataset.harvest[-1]
    hw_pred, hc_pred = free[last.index, HARVEST_IDX].tolist()
    hw_err, hw_rel = relative_error(hw_pred, last.weight)
    hc_err, hc_rel = relative_error(hc_pred, last.count)
    out.update({
        "crop_hw_loss": hw, "crop_hc_loss": hc, "crop_total": hw + hc,
        "final_date": last.date.isoformat(),
        "final_hw_pred": hw_pred, "final_hw_true": last.weight,
        "final_hw_error": hw_err, "final_hw_error_is_relative": hw_rel,
        "final_hc_pred": hc_pred, "final_hc_true": last.count,
        "final_hc_error": hc_err, "final_hc_error_is_relative": hc_rel,
    })
    return out
