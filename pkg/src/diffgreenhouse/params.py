"""Interpretable model parameters with sigmoid range constraints.

Each trainable parameter lives in ``(min, max) = (0.5, 2.0) * nominal`` and is
optimized through an unconstrained raw value::

    value = min + sigmoid(raw) * (max - min)
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import autodiff as ad

LOWER_FACTOR = 0.5
UPPER_FACTOR = 2.0
CHECKPOINT_FORMAT = "diffgreenhouse-params/1"


class ParameterError(ValueError):
    pass


@dataclass(frozen=True)
class ParamSpec:
    name: str
    unit: str
    nominal: float
    min: float
    max: float
    description: str = ""

    def __post_init__(self):
        if not self.min < self.max:
            raise ParameterError(f"{self.name}: min {self.min} must be below max {self.max}")
        if not self.min <= self.nominal <= self.max:
            raise ParameterError(f"{self.name}: nominal outside [{self.min}, {self.max}]")

    @classmethod
    def from_nominal(cls, name, unit, nominal, description=""):
        if nominal == 0:
            raise ParameterError(f"{name}: nominal 0 collapses the parameter range")
        lo, hi = sorted((LOWER_FACTOR * nominal, UPPER_FACTOR * nominal))
        return cls(name, unit, float(nominal), lo, hi, description)


@dataclass(frozen=True)
class ParamVector:
    specs: tuple
    raw: np.ndarray = field(repr=False)

    def __post_init__(self):
        raw = np.array(self.raw, dtype=float)
        raw.setflags(write=False)
        object.__setattr__(self, "raw", raw)
        object.__setattr__(self, "specs", tuple(self.specs))
        if raw.shape != (len(self.specs),):
            raise ParameterError(f"raw has shape {raw.shape}, expected ({len(self.specs)},)")
        names = [s.name for s in self.specs]
        if len(set(names)) != len(names):
            raise ParameterError("parameter names must be unique")

    @property
    def names(self):
        return [s.name for s in self.specs]

    def values(self):
        return constrain(self)

    def with_raw(self, raw):
        return ParamVector(self.specs, raw)

    def as_dict(self):
        return dict(zip(self.names, constrain(self)))


def load_registry(path=None):
    """Parameter specs from a registry JSON document (the packaged one by default)."""
    if path is None:
        text = resources.files(__package__).joinpath("parameters.json").read_text()
    else:
        text = Path(path).read_text()
    doc = json.loads(text)
    return tuple(
        ParamSpec.from_nominal(p["name"], p["unit"], p["nominal"], p.get("description", ""))
        for p in doc["parameters"]
    )


def _bounds(specs):
    lo = np.array([s.min for s in specs])
    hi = np.array([s.max for s in specs])
    return lo, hi


def constrain_raw(raw, specs):
    """Map raw values (array or ``Var``) into the parameter ranges."""
    lo, hi = _bounds(specs)
    return lo + ad.sigmoid(raw) * (hi - lo)


def constrain(pv: ParamVector):
    return constrain_raw(pv.raw, pv.specs)


def unconstrain(values, specs):
    """Inverse of ``constrain``: raw values for parameter values strictly inside their bounds."""
    values = np.asarray(values, dtype=float)
    lo, hi = _bounds(specs)
    for v, s in zip(values, specs):
        if not s.min < v < s.max:
            raise ParameterError(f"{s.name}={v} is not strictly inside ({s.min}, {s.max})")
    p = (values - lo) / (hi - lo)
    return np.log(p) - np.log1p(-p)


def nominal_vector(specs=None):
    specs = load_registry() if specs is None else specs
    return ParamVector(specs, unconstrain([s.nominal for s in specs], specs))


def random_vector(specs, rng):
    """Raw values drawn uniformly from (-2, 2)."""
    return ParamVector(specs, rng.uniform(-2.0, 2.0, size=len(specs)))


def save_checkpoint(pv: ParamVector, path):
    values = constrain(pv)
    doc = {
        "format": CHECKPOINT_FORMAT,
        "parameters": [
            {
                "name": s.name,
                "unit": s.unit,
                "nominal": s.nominal,
                "min": s.min,
                "max": s.max,
                "raw": float(r),
                "value": float(v),
            }
            for s, r, v in zip(pv.specs, pv.raw, values)
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_checkpoint(path, specs=None):
    """Read a checkpoint and validate it against the registry."""
    specs = load_registry() if specs is None else specs
    try:
        doc = json.loads(Path(path).read_text())
        entries = {p["name"]: p for p in doc["parameters"]}
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ParameterError(f"malformed checkpoint {path}: {exc}") from exc
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ParameterError(f"unsupported checkpoint format {doc.get('format')!r}")
    known = {s.name for s in specs}
    for name in entries:
        if name not in known:
            raise ParameterError(f"unknown parameter {name!r} in checkpoint")
    raw = []
    for s in specs:
        if s.name not in entries:
            raise ParameterError(f"checkpoint is missing parameter {s.name!r}")
        e = entries[s.name]
        if e.get("min") != s.min or e.get("max") != s.max:
            raise ParameterError(
                f"{s.name}: checkpoint bounds ({e.get('min')}, {e.get('max')}) "
                f"differ from registry ({s.min}, {s.max})"
            )
        raw.append(float(e["raw"]))
    return ParamVector(specs, np.array(raw))
