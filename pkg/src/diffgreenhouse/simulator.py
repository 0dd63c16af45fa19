"""Multi-step rollouts and reconstruction of unobserved states."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import model
from .errors import DataError
from .model import CHANNELS, IDX


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Seeds:
    """Season-start values for crop states that are never observed."""

    C_buf: float = 3000.0
    C_leaf: float = 5000.0
    C_fruit: float = 6000.0
    N_fruit: float = 2.0

    def scaled_carbohydrates(self, factor):
        return Seeds(self.C_buf * factor, self.C_leaf * factor, self.C_fruit * factor, self.N_fruit)


@dataclass
class Trajectory:
    """States ``x_start .. x_{start+T}``; ``states`` has shape ``(..., T + 1, 11)``."""

    start: int
    states: object
    dt: float = model.DT

    def __len__(self):
        return ad.value(self.states).shape[-2]

    @property
    def horizon(self):
        return len(self) - 1


def rollout(x0, controls, weather, theta, T, start=0, policy="auto"):
    """Apply the one-step model ``T`` times.

    ``controls`` and ``weather`` are ``(..., >=T, 5)`` and ``(..., >=T, 4)``
    input sequences aligned with the steps.  Differentiable with respect to
    ``theta`` and ``x0`` when either is a ``Var``.
    """
    controls = np.asarray(controls, dtype=float)
    weather = np.asarray(weather, dtype=float)
    if controls.shape[-2] < T or weather.shape[-2] < T:
        raise ValueError(f"need {T} input steps, got {controls.shape[-2]} / {weather.shape[-2]}")
    x = x0
    states = [x0]
    theta = model.params_view(theta)
    for k in range(T):
        try:
            x = model.step(x, controls[..., k, :], weather[..., k, :], theta, policy=policy)
        except (ArithmeticError, ValueError) as exc:
            raise SimulationError(f"step {start + k}: {exc}") from exc
        states.append(x)
    return Trajectory(start, ad.stack(states, axis=-2))


def init_missing(x_obs, mask=None, seeds=Seeds()):
    """Season-start state from an observation with missing channels.

    Canopy temperatures copy the air temperature, carbohydrate pools and the
    fruit count take the seed values, cumulative harvest starts at zero.
    Channels present in ``x_obs`` pass through unchanged.
    """
    mask = model.DEFAULT_MASK if mask is None else mask
    x = np.array(x_obs, dtype=float)
    for name, kind in mask.items():
        if kind == "step" and np.isnan(x[..., IDX[name]]).any():
            raise DataError(f"observed channel {name} is missing at season start")
    fill = {
        "T_can": x[..., IDX["T_air"]],
        "T_can24": x[..., IDX["T_air"]],
        "C_buf": seeds.C_buf,
        "C_leaf": seeds.C_leaf,
        "C_fruit": seeds.C_fruit,
        "N_fruit": seeds.N_fruit,
        "HW": 0.0,
        "HC": 0.0,
    }
    for name, val in fill.items():
        i = IDX[name]
        x[..., i] = np.where(np.isnan(x[..., i]), val, x[..., i])
    return x


def combine_observed(observations, simulated, mask=None):
    """Observed values where present, simulated values elsewhere.

    Daily channels carry their last observation forward until the next one.
    """
    mask = model.DEFAULT_MASK if mask is None else mask
    obs = np.array(observations, dtype=float)
    for name, kind in mask.items():
        if kind != "daily":
            continue
        col = obs[:, IDX[name]]
        seen = ~np.isnan(col)
        last = np.maximum.accumulate(np.where(seen, np.arange(len(col)), -1))
        obs[:, IDX[name]] = np.where(last >= 0, col[np.maximum(last, 0)], np.nan)
    return np.where(np.isnan(obs), simulated, obs)


def season_rollout(dataset, theta, seeds=Seeds(), policy="auto"):
    """Free rollout of a whole season from ``init_missing`` of its first row."""
    theta = ad.value(theta)
    obs = dataset.observations
    for name, kind in dataset.mask.items():
        if kind == "step" and np.isnan(obs[:, IDX[name]]).any():
            bad = int(np.flatnonzero(np.isnan(obs[:, IDX[name]]))[0])
            raise DataError(f"channel {name} has a gap at index {bad} beyond interpolation")
    x0 = init_missing(obs[0], dataset.mask, seeds)
    return rollout(x0, dataset.controls, dataset.weather, theta, len(obs) - 1, policy=policy).states


def fill_missing_states(dataset, theta_ref, seeds=Seeds(), policy="auto"):
    """Approximate full states for every grid index of a season.

    Runs one free rollout of the whole season with the (detached) reference
    parameters, then replaces simulated channels by the data wherever the
    data has them.
    """
    simulated = season_rollout(dataset, theta_ref, seeds, policy)
    return combine_observed(dataset.observations, simulated, dataset.mask)


def write_trajectory_csv(path, states, timestamps, extra=None):
    """One row per step: timestamp, the 11 channels, then any ``extra`` columns."""
    states = ad.value(states)
    extra = extra or {}
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["timestamp", *CHANNELS, *extra])
        for k, ts in enumerate(timestamps):
            row = [str(ts)] + [repr(float(v)) for v in states[k]]
            row += ["" if np.isnan(col[k]) else repr(float(col[k])) for col in extra.values()]
            out.writerow(row)
