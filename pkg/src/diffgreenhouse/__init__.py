"""Differentiable greenhouse climate and crop model with gradient-based calibration."""
from . import autodiff, data, linalg, model, params, simulator, training
from .data import Dataset, HarvestRecord, ingest_csv, load_dataset, save_dataset, split, synthetic_generate
from .errors import DataError, FormatError, GapError, SchemaError, UsageError
from .linalg import expm_reference, expm_taylor, expm_with_integral, ode_step
from .model import CHANNELS, CONTROLS, WEATHER, build_system, step
from .params import ParamSpec, ParamVector, load_checkpoint, load_registry, save_checkpoint
from .simulator import Seeds, Trajectory, fill_missing_states, init_missing, rollout
from .training import AdamState, TrainConfig, adam_step, evaluate, train

__version__ = "0.1.0"
