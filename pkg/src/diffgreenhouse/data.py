"""Greenhouse datasets on a uniform 5-minute grid.

A ``Dataset`` holds, per grid index, the observed climate channels, the
controls and the weather, plus one cumulative harvest record per day.  Two
sources produce datasets: ``ingest_csv`` for recorded CSV files and
``synthetic_generate`` for seasons simulated with known parameters.

Timestamps are local wall-clock times without a UTC offset; a calendar day
ends at its last grid slot (23:55 on a full day).
"""
from __future__ import annotations

import datetime as dt
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

from . import model
from .errors import DataError, FormatError, GapError, SchemaError
from .model import CONTROLS, IDX, WEATHER

log = logging.getLogger(__name__)

STEP_SECONDS = int(model.DT)
STEPS_PER_DAY = 86400 // STEP_SECONDS
MAX_GAP_STEPS = 12  # one hour
MATCH_TOLERANCE = pd.Timedelta(seconds=STEP_SECONDS // 2)
DATASET_FORMAT = "diffgreenhouse-dataset/1"

CLIMATE = ("T_air", "VP_air", "CO2_air")
FRACTIONS = ("u_vent", "u_fog", "u_co2", "u_harvest")
FILE_CHANNELS = {"climate": CLIMATE, "control": CONTROLS, "weather": WEATHER}
# Temperature channel used to turn relative humidity into vapour pressure.
HUMIDITY_REFERENCE = {"VP_air": "T_air", "VP_out": "T_out"}

# unit -> (scale, offset) applied as value * scale + offset
_UNITS = {
    "temperature": {"degC": (1.0, 0.0), "C": (1.0, 0.0), "K": (1.0, -273.15)},
    "vapour": {"Pa": (1.0, 0.0), "kPa": (1000.0, 0.0)},
    "co2": {"ppm": (1.0, 0.0)},
    "radiation": {"W m-2": (1.0, 0.0), "W/m2": (1.0, 0.0)},
    "fraction": {"fraction": (1.0, 0.0), "-": (1.0, 0.0), "%": (0.01, 0.0)},
    "weight": {"kg m-2": (1.0, 0.0), "g m-2": (0.001, 0.0)},
    "count": {"fruits m-2": (1.0, 0.0), "m-2": (1.0, 0.0)},
}
_KIND = {
    "T_air": "temperature", "T_out": "temperature", "u_pipe": "temperature",
    "VP_air": "vapour", "VP_out": "vapour",
    "CO2_air": "co2", "CO2_out": "co2",
    "I_glob": "radiation",
    "u_vent": "fraction", "u_fog": "fraction", "u_co2": "fraction", "u_harvest": "fraction",
    "HW": "weight", "HC": "count",
}
RH_UNITS = ("%RH", "RH%")


@dataclass(frozen=True)
class HarvestRecord:
    """Cumulative harvest up to the end of ``date``, aligned to grid ``index``."""

    date: dt.date
    weight: float
    count: float
    index: int


@dataclass(frozen=True)
class Dataset:
    """One season on the 5-minute grid.

    ``observations`` is ``(N, 11)`` in channel order with NaN wherever a
    channel is not observed; the daily channels carry the harvest records at
    their end-of-day indices.  ``truth`` holds the complete hidden states of
    synthetic seasons and is ``None`` for recorded data.
    """

    start: pd.Timestamp
    observations: np.ndarray
    controls: np.ndarray
    weather: np.ndarray
    harvest: tuple = ()
    mask: dict = field(default_factory=lambda: dict(model.DEFAULT_MASK))
    timezone: str = "UTC"
    report: dict = field(default_factory=dict)
    truth: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.observations)
        if n < 2:
            raise DataError("a dataset needs at least 2 grid rows")
        if self.observations.shape != (n, model.N_STATES):
            raise DataError(f"observations have shape {self.observations.shape}")
        if self.controls.shape != (n, len(CONTROLS)) or self.weather.shape != (n, len(WEATHER)):
            raise DataError("controls and weather must have one row per grid index")
        for arr in (self.observations, self.controls, self.weather, self.truth):
            if arr is not None:
                arr.setflags(write=False)

    def __len__(self):
        return len(self.observations)

    @property
    def timestamps(self):
        return self.start + pd.to_timedelta(np.arange(len(self)) * STEP_SECONDS, unit="s")

    def start_of_day_indices(self):
        """Grid indices that fall on local midnight."""
        ts = self.timestamps
        return np.flatnonzero((ts.hour == 0) & (ts.minute == 0) & (ts.second == 0))

    def end_of_day_index(self, date):
        """Last grid index on the local calendar ``date``."""
        idx = np.flatnonzero(self.timestamps.date == date)
        if len(idx) == 0:
            raise DataError(f"date {date} is outside the dataset")
        return int(idx[-1])

    def day_of(self, index):
        """Number of calendar days between the first grid row and ``index``."""
        return (self.timestamps[index].date() - self.start.date()).days


# --------------------------------------------------------------------------
# Ingestion


def _convert(channel, values, unit, reference_temperature=None):
    if channel in HUMIDITY_REFERENCE and unit in RH_UNITS:
        if reference_temperature is None:
            raise SchemaError(f"{channel} in {unit} needs {HUMIDITY_REFERENCE[channel]} in the same file")
        return model.saturation_vapor_pressure(reference_temperature) * values / 100.0
    table = _UNITS[_KIND[channel]]
    if unit not in table:
        raise SchemaError(f"unit {unit!r} not supported for {channel}; use one of {sorted(table)}")
    scale, offset = table[unit]
    return values * scale + offset


def _parse_times(col, timezone, where):
    if pd.api.types.is_numeric_dtype(col):
        ts = pd.to_datetime(col.to_numpy(dtype=float), unit="s", utc=True)
    else:
        try:
            ts = pd.to_datetime(col, format="ISO8601")
        except (ValueError, TypeError) as exc:
            raise FormatError(f"{where}: unreadable timestamps ({exc})") from exc
        ts = pd.DatetimeIndex(ts)
    if ts.tz is not None:
        ts = ts.tz_convert(timezone).tz_localize(None)
    ts = pd.DatetimeIndex(ts)
    if ts.isna().any():
        raise FormatError(f"{where}: missing timestamps")
    steps = np.diff(ts.asi8)
    if np.any(steps <= 0):
        bad = int(np.flatnonzero(steps <= 0)[0]) + 1
        raise FormatError(f"{where}: timestamps not strictly increasing at row {bad} ({ts[bad]})")
    return ts


def _column(frame, schema, channel, where):
    if channel not in schema:
        raise SchemaError(f"schema has no entry for required channel {channel}")
    entry = schema[channel]
    if not isinstance(entry, dict) or "column" not in entry:
        raise SchemaError(f"schema entry for {channel} needs a 'column'")
    name = entry["column"]
    if name not in frame.columns:
        raise SchemaError(f"{where}: column {name!r} for {channel} not found")
    return pd.to_numeric(frame[name], errors="coerce").to_numpy(dtype=float), entry.get("unit", "")


def _read_series(path, kind, schema, timezone):
    frame = pd.read_csv(path, float_precision="round_trip")
    ts_col = schema.get("timestamp", {}).get("column", "timestamp")
    if ts_col not in frame.columns:
        raise SchemaError(f"{path}: timestamp column {ts_col!r} not found")
    times = _parse_times(frame[ts_col], timezone, str(path))
    raw = {ch: _column(frame, schema, ch, str(path)) for ch in FILE_CHANNELS[kind]}
    out = {}
    for ch, (vals, unit) in raw.items():
        if unit in RH_UNITS:
            continue
        out[ch] = _convert(ch, vals, unit)
    for ch, (vals, unit) in raw.items():
        if unit in RH_UNITS:
            ref = HUMIDITY_REFERENCE.get(ch)
            out[ch] = _convert(ch, vals, unit, out.get(ref))
    return pd.DataFrame(out, index=times)


def _to_grid(series, grid, where):
    left = pd.DataFrame({"t": grid})
    right = series.reset_index(names="t")
    merged = pd.merge_asof(left, right, on="t", direction="nearest", tolerance=MATCH_TOLERANCE)
    merged = merged.set_index("t")
    filled = {}
    for ch in series.columns:
        col = merged[ch]
        missing = col.isna().to_numpy()
        if missing.any():
            _check_gaps(missing, grid, ch, where)
            col = col.interpolate(method="linear", limit_area="inside")
        filled[ch] = (col.to_numpy(), int(missing.sum()))
    return filled


def _check_gaps(missing, grid, channel, where):
    padded = np.concatenate([[False], missing, [False]])
    edges = np.flatnonzero(np.diff(padded.astype(int)))
    for a, b in zip(edges[::2], edges[1::2]):
        if b - a > MAX_GAP_STEPS or a == 0 or b == len(missing):
            raise GapError(
                f"{where}: {channel} has a gap of {b - a} steps starting at {grid[a]}"
                f" (at most {MAX_GAP_STEPS} interior steps are interpolated)"
            )


def _read_harvest(path, schema, grid_dates):
    frame = pd.read_csv(path)
    date_col = schema.get("date", {}).get("column", "date")
    if date_col not in frame.columns:
        raise SchemaError(f"{path}: date column {date_col!r} not found")
    dates = pd.to_datetime(frame[date_col], format="ISO8601").dt.date
    hw, hw_unit = _column(frame, schema, "HW", str(path))
    hc, hc_unit = _column(frame, schema, "HC", str(path))
    hw = _convert("HW", hw, hw_unit)
    hc = _convert("HC", hc, hc_unit)
    if np.isnan(hw).any() or np.isnan(hc).any():
        raise DataError(f"{path}: harvest values must be numbers")
    if not all(a < b for a, b in zip(dates, dates[1:])):
        raise FormatError(f"{path}: harvest dates not strictly increasing")
    for name, vals in (("HW", hw), ("HC", hc)):
        if np.any(np.diff(vals) < 0):
            k = int(np.flatnonzero(np.diff(vals) < 0)[0]) + 1
            raise DataError(f"{path}: cumulative {name} decreases on {dates[k]}")
    last_index = {}
    for k, d in enumerate(grid_dates):
        last_index[d] = k
    records = []
    for d, w, c in zip(dates, hw, hc):
        if d not in last_index:
            raise DataError(f"{path}: harvest date {d} is outside the grid")
        records.append(HarvestRecord(d, float(w), float(c), last_index[d]))
    return tuple(records)


def _harvest_observations(n, records):
    cols = np.full((n, 2), np.nan)
    for r in records:
        cols[r.index] = (r.weight, r.count)
    return cols


def load_schema(path):
    try:
        schema = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"schema {path} is not valid JSON: {exc}") from exc
    if not isinstance(schema, dict):
        raise SchemaError("schema must be a JSON object")
    return schema


def ingest_csv(climate_path, control_path, weather_path, harvest_path, schema):
    """Read recorded CSV files into a ``Dataset``.

    ``schema`` (a dict or a JSON path) maps each channel to ``{"column",
    "unit"}`` and may name the ``timestamp`` and harvest ``date`` columns and
    a ``timezone`` used for epoch or offset-aware timestamps.  Samples are
    matched to the nearest grid slot within 150 s; interior gaps of up to one
    hour are interpolated linearly, longer gaps raise ``GapError``.  Control
    fractions are clamped into [0, 1] and the number of clamped samples is
    logged and stored in ``report``.
    """
    if not isinstance(schema, dict):
        schema = load_schema(schema)
    timezone = schema.get("timezone", "UTC")
    series = {
        "climate": _read_series(climate_path, "climate", schema, timezone),
        "control": _read_series(control_path, "control", schema, timezone),
        "weather": _read_series(weather_path, "weather", schema, timezone),
    }
    # Grid slots at either end still count when a sample lies within the match tolerance.
    first = (max(s.index[0] for s in series.values()) - MATCH_TOLERANCE).ceil(f"{STEP_SECONDS}s")
    last = (min(s.index[-1] for s in series.values()) + MATCH_TOLERANCE).floor(f"{STEP_SECONDS}s")
    if last <= first:
        raise DataError("the input files do not overlap in time")
    grid = pd.date_range(first, last, freq=f"{STEP_SECONDS}s")

    columns, interpolated = {}, {}
    for kind, s in series.items():
        for ch, (vals, count) in _to_grid(s, grid, kind).items():
            columns[ch] = vals
            if count:
                interpolated[ch] = count

    clamped = {}
    for ch in FRACTIONS:
        out_of_range = int(np.sum((columns[ch] < 0) | (columns[ch] > 1)))
        if out_of_range:
            clamped[ch] = out_of_range
            log.warning("clamped %d %s samples into [0, 1]", out_of_range, ch)
            columns[ch] = np.clip(columns[ch], 0.0, 1.0)

    n = len(grid)
    records = _read_harvest(harvest_path, schema, grid.date)
    obs = np.full((n, model.N_STATES), np.nan)
    for ch in CLIMATE:
        obs[:, IDX[ch]] = columns[ch]
    obs[:, [IDX["HW"], IDX["HC"]]] = _harvest_observations(n, records)
    report = {
        "rows": n,
        "start": str(grid[0]),
        "interpolated": interpolated,
        "clamped": clamped,
        "harvest_records": len(records),
    }
    return Dataset(
        start=grid[0],
        observations=obs,
        controls=np.stack([columns[c] for c in CONTROLS], axis=-1),
        weather=np.stack([columns[c] for c in WEATHER], axis=-1),
        harvest=records,
        timezone=timezone,
        report=report,
    )


# --------------------------------------------------------------------------
# Synthetic seasons


def synthetic_inputs(days, seed, harvest_start_day=10):
    """Weather and control sequences for ``days`` days plus one final row.

    Radiation follows a half-sine from 07:00 to 17:00 scaled by a daily
    cloudiness draw; outdoor temperature is a diurnal sine around 4 degC with
    a daily offset and noise.  The grower heats to a higher pipe temperature
    at night, vents on bright afternoons, fogs around noon, doses CO2 while
    it is light and harvests from 08:00 to 10:00 from ``harvest_start_day``.
    """
    rng = np.random.default_rng(seed)
    n = days * STEPS_PER_DAY + 1
    t = np.arange(n) * float(STEP_SECONDS)
    hour = (t / 3600.0) % 24.0
    day = (t // 86400).astype(int)

    cloud = rng.uniform(0.4, 1.0, days + 1)[day]
    sun = np.maximum(0.0, np.sin(np.pi * (hour - 7.0) / 10.0))
    radiation = np.clip(450.0 * sun * cloud * (1.0 + 0.05 * rng.standard_normal(n)), 0.0, None)
    t_out = (
        4.0
        + 4.0 * np.sin(2.0 * np.pi * (hour - 9.0) / 24.0)
        + rng.normal(0.0, 2.0, days + 1)[day]
        + 0.3 * rng.standard_normal(n)
    )
    vp_out = 0.85 * model.saturation_vapor_pressure(t_out)
    co2_out = 410.0 + 3.0 * rng.standard_normal(n)
    weather = np.stack([t_out, vp_out, co2_out, radiation], axis=-1)

    light = radiation > 50.0
    pipe = np.where(light, 38.0, 50.0)
    vent = np.clip((radiation - 250.0) / 400.0, 0.0, 0.5)
    fog = np.where((hour >= 11.0) & (hour < 14.0), 0.3, 0.0)
    co2 = np.where(light, 0.5, 0.0)
    harvest = np.where((day >= harvest_start_day) & (hour >= 8.0) & (hour < 10.0), 1.0, 0.0)
    controls = np.stack([pipe, vent, fog, co2, harvest], axis=-1)
    return controls, weather


def synthetic_generate(
    theta_true,
    days,
    seed,
    harvest_start_day=10,
    start="2024-03-01",
    seeds=None,
    policy="auto",
):
    """Season simulated with known constrained parameter values ``theta_true``.

    The returned dataset exposes only what a greenhouse would record: the
    climate channels every step and cumulative harvest at the end of every
    complete day.  ``truth`` keeps all simulated states.
    """
    from .simulator import Seeds, init_missing, rollout

    if days < 1:
        raise DataError("days must be at least 1")
    theta_true = np.asarray(theta_true, dtype=float)
    for v, s in zip(theta_true, model.REGISTRY):
        if not s.min <= v <= s.max:
            raise DataError(f"{s.name}={v} outside registry bounds [{s.min}, {s.max}]")
    controls, weather = synthetic_inputs(days, seed, harvest_start_day)
    t0 = 18.0
    x_obs = model.state(
        T_air=t0, VP_air=0.7 * model.saturation_vapor_pressure(t0), CO2_air=500.0
    )
    x0 = init_missing(x_obs, seeds=seeds or Seeds())
    truth = rollout(x0, controls, weather, theta_true, len(controls) - 1, policy=policy).states

    start = pd.Timestamp(start)
    n = len(truth)
    ds = Dataset(start, np.full((n, model.N_STATES), np.nan), controls, weather)
    records = []
    for d in range(days):
        k = ds.end_of_day_index((start + pd.Timedelta(days=d)).date())
        records.append(
            HarvestRecord(
                (start + pd.Timedelta(days=d)).date(),
                float(truth[k, IDX["HW"]]),
                float(truth[k, IDX["HC"]]),
                k,
            )
        )
    obs = np.full((n, model.N_STATES), np.nan)
    for ch in CLIMATE:
        obs[:, IDX[ch]] = truth[:, IDX[ch]]
    obs[:, [IDX["HW"], IDX["HC"]]] = _harvest_observations(n, records)
    return Dataset(
        start=start,
        observations=obs,
        controls=controls,
        weather=weather,
        harvest=tuple(records),
        report={"rows": n, "start": str(start), "seed": seed, "days": days},
        truth=truth,
    )


# --------------------------------------------------------------------------
# Splitting and storage


def split(dataset, boundary_day):
    """Split at local midnight starting day ``boundary_day`` (counted from day 0).

    Rows before that midnight form the first dataset, the rest the second.
    """
    boundary_date = dataset.start.date() + dt.timedelta(days=int(boundary_day))
    mids = dataset.start_of_day_indices()
    hits = [int(k) for k in mids if dataset.timestamps[k].date() == boundary_date]
    if not hits:
        raise DataError(f"no midnight for day {boundary_day} inside the dataset")
    b = hits[0]
    if b < 2 or len(dataset) - b < 2:
        raise DataError(f"split at day {boundary_day} leaves a part with fewer than 2 rows")

    def part(sl, offset):
        recs = tuple(
            replace(r, index=r.index - offset)
            for r in dataset.harvest
            if sl.start <= r.index < (sl.stop if sl.stop is not None else len(dataset))
        )
        return replace(
            dataset,
            start=dataset.timestamps[sl][0],
            observations=dataset.observations[sl].copy(),
            controls=dataset.controls[sl].copy(),
            weather=dataset.weather[sl].copy(),
            harvest=recs,
            report=dict(dataset.report),
            truth=None if dataset.truth is None else dataset.truth[sl].copy(),
        )

    return part(slice(0, b), 0), part(slice(b, None), b)


def _fmt(v):
    return "" if np.isnan(v) else format(float(v), ".17g")


def save_dataset(dataset, directory):
    """Write ``grid.csv``, ``harvest.csv`` and ``meta.json`` into ``directory``.

    Values are written with 17 significant digits, so a save/load round trip
    is exact and saving the same dataset twice gives identical bytes.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    climate = dataset.observations[:, [IDX[c] for c in CLIMATE]]
    table = np.concatenate([climate, dataset.controls, dataset.weather], axis=1)
    header = ["timestamp", *CLIMATE, *CONTROLS, *WEATHER]
    lines = [",".join(header)]
    for ts, row in zip(dataset.timestamps, table):
        lines.append(",".join([ts.isoformat()] + [_fmt(v) for v in row]))
    (d / "grid.csv").write_text("\n".join(lines) + "\n")
    hlines = ["date,HW,HC,index"]
    for r in dataset.harvest:
        hlines.append(f"{r.date.isoformat()},{_fmt(r.weight)},{_fmt(r.count)},{r.index}")
    (d / "harvest.csv").write_text("\n".join(hlines) + "\n")
    meta = {
        "format": DATASET_FORMAT,
        "step_seconds": STEP_SECONDS,
        "timezone": dataset.timezone,
        "mask": dataset.mask,
        "report": dataset.report,
    }
    (d / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_dataset(directory):
    d = Path(directory)
    try:
        meta = json.loads((d / "meta.json").read_text())
    except FileNotFoundError as exc:
        raise FormatError(f"{d} is not a dataset directory (no meta.json)") from exc
    if meta.get("format") != DATASET_FORMAT:
        raise FormatError(f"unsupported dataset format {meta.get('format')!r}")
    grid = pd.read_csv(d / "grid.csv", dtype={"timestamp": str}, float_precision="round_trip")
    missing = [c for c in (*CLIMATE, *CONTROLS, *WEATHER) if c not in grid.columns]
    if missing:
        raise SchemaError(f"{d / 'grid.csv'} lacks columns {missing}")
    times = pd.DatetimeIndex(pd.to_datetime(grid["timestamp"], format="ISO8601"))
    if len(times) > 1 and np.any(np.diff(times.asi8) != STEP_SECONDS * 10**9):
        raise FormatError(f"{d / 'grid.csv'} is not on a uniform {STEP_SECONDS} s grid")
    n = len(grid)
    harvest = pd.read_csv(d / "harvest.csv", float_precision="round_trip")
    records = tuple(
        HarvestRecord(dt.date.fromisoformat(str(r.date)), float(r.HW), float(r.HC), int(r.index))
        for r in harvest.itertuples(index=False)
    )
    obs = np.full((n, model.N_STATES), np.nan)
    for ch in CLIMATE:
        obs[:, IDX[ch]] = grid[ch].to_numpy(dtype=float)
    obs[:, [IDX["HW"], IDX["HC"]]] = _harvest_observations(n, records)
    return Dataset(
        start=times[0],
        observations=obs,
        controls=grid[list(CONTROLS)].to_numpy(dtype=float),
        weather=grid[list(WEATHER)].to_numpy(dtype=float),
        harvest=records,
        mask=meta.get("mask", dict(model.DEFAULT_MASK)),
        timezone=meta.get("timezone", "UTC"),
        report=meta.get("report", {}),
    )
