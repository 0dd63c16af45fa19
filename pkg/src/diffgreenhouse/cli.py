"""Command-line interface: ``diffgreenhouse {ingest,synth,train,simulate,evaluate}``.

Every command takes ``--config PATH`` (a JSON object of the command's
settings; the ``DIFFGREENHOUSE_CONFIG`` environment variable supplies the
path when the flag is absent), ``--seed N``, ``--out DIR`` and
``--threads N``.  Explicit flags override config values.  The fully
resolved settings are written to ``DIR/config.json``.

Exit codes: 0 success, 1 runtime or numerical failure, 2 invalid input or
usage.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import data, model
from . import params as P
from .autodiff import NumericError
from .errors import DataError, UsageError
from .params import ParameterError
from .simulator import SimulationError, fill_missing_states, rollout, write_trajectory_csv
from .training import TrainConfig, TrainingError, evaluate, train, write_history_csv, write_validation_csv

CONFIG_ENV = "DIFFGREENHOUSE_CONFIG"
log = logging.getLogger("diffgreenhouse")

# Settings each command accepts (config keys and long flags share names).
COMMAND_KEYS = {
    "ingest": {"climate": None, "control": None, "weather": None, "harvest": None, "schema": None},
    "synth": {"days": 14, "harvest_start_day": 10, "start": "2024-03-01", "params": None,
              "substep_policy": "auto"},
    "train": {"dataset": None, "validation": None, "init": None, "train": {}},
    "simulate": {"dataset": None, "params": None, "start": 0, "horizon": None,
                 "substep_policy": "auto"},
    "evaluate": {"dataset": None, "params": None, "substep_policy": "auto", "climate_horizon": 24},
}
COMMON_KEYS = {"seed": 0, "threads": None}


def _error_report(exc):
    return {"errors": [{"type": type(exc).__name__, "message": str(exc)}]}


def _prepare_out(path):
    out = Path(path)
    if out.exists() and (not out.is_dir() or any(out.iterdir())):
        raise UsageError(f"output directory {out} exists and is not empty")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolve(cmd, args):
    path = args.config or os.environ.get(CONFIG_ENV)
    doc = {}
    if path:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise UsageError("config must be a JSON object")
    allowed = {**COMMON_KEYS, **COMMAND_KEYS[cmd]}
    unknown = sorted(set(doc) - set(allowed))
    if unknown:
        raise UsageError(f"unknown config keys for {cmd}: {unknown}")
    resolved = {**allowed, **doc}
    for key in allowed:
        flag = getattr(args, key, None)
        if flag is not None:
            resolved[key] = flag
    if cmd == "train":
        resolved["train"] = TrainConfig.from_dict(
            {**resolved["train"], "seed": resolved["seed"]}
        ).to_dict()
    return resolved


def _require(cfg, *keys):
    missing = [k for k in keys if cfg.get(k) is None]
    if missing:
        raise UsageError(f"missing required settings: {', '.join(missing)}")


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# Commands


def cmd_ingest(cfg, out):
    _require(cfg, "climate", "control", "weather", "harvest", "schema")
    ds = data.ingest_csv(cfg["climate"], cfg["control"], cfg["weather"], cfg["harvest"], cfg["schema"])
    data.save_dataset(ds, out)
    _write_json(out / "report.json", ds.report)
    print(f"ingested {len(ds)} rows, {len(ds.harvest)} harvest records")


def cmd_synth(cfg, out):
    if cfg["params"]:
        theta = P.constrain(P.load_checkpoint(cfg["params"]))
    else:
        theta = P.constrain(P.nominal_vector())
    ds = data.synthetic_generate(
        theta, int(cfg["days"]), int(cfg["seed"]), int(cfg["harvest_start_day"]),
        start=cfg["start"], policy=cfg["substep_policy"],
    )
    data.save_dataset(ds, out)
    truth = out / "truth"
    truth.mkdir()
    P.save_checkpoint(P.ParamVector(model.REGISTRY, P.unconstrain(theta, model.REGISTRY)),
                      truth / "params.json")
    write_trajectory_csv(truth / "states.csv", ds.truth, ds.timestamps)
    print(f"synthesized {len(ds)} rows over {cfg['days']} days")


def cmd_train(cfg, out):
    _require(cfg, "dataset")
    ds = data.load_dataset(cfg["dataset"])
    val = data.load_dataset(cfg["validation"]) if cfg["validation"] else None
    tc = TrainConfig.from_dict(cfg["train"])
    if cfg["init"]:
        init = P.load_checkpoint(cfg["init"])
    else:
        init = P.random_vector(model.REGISTRY, np.random.default_rng(int(cfg["seed"])))
    P.save_checkpoint(init, out / "init_params.json")
    res = train(ds, init.raw, tc, validation=val)
    P.save_checkpoint(init.with_raw(res.theta_star), out / "params.json")
    write_history_csv(res.history, out / "history.csv")
    if val is not None:
        write_validation_csv(res.validation, out / "validation.csv")
    print(f"trained {len(res.history)} updates")


def cmd_simulate(cfg, out):
    _require(cfg, "dataset", "params", "horizon")
    ds = data.load_dataset(cfg["dataset"])
    pv = P.load_checkpoint(cfg["params"])
    theta = P.constrain(pv)
    start = cfg["start"]
    if isinstance(start, str) and not start.lstrip("-").isdigit():
        import pandas as pd

        hits = np.flatnonzero(ds.timestamps == pd.Timestamp(start))
        if len(hits) == 0:
            raise UsageError(f"start {start} is not a grid timestamp")
        start = int(hits[0])
    start, horizon = int(start), int(cfg["horizon"])
    if start < 0 or horizon < 0 or start + horizon > len(ds) - 1:
        raise UsageError(f"start {start} + horizon {horizon} exceeds the {len(ds)} grid rows")
    table = fill_missing_states(ds, theta, policy=cfg["substep_policy"])
    traj = rollout(table[start], ds.controls[start:], ds.weather[start:], theta, horizon,
                   start=start, policy=cfg["substep_policy"])
    rows = slice(start, start + horizon + 1)
    extra = {f"obs_{c}": ds.observations[rows, model.IDX[c]]
             for c, kind in ds.mask.items() if kind != "none"}
    write_trajectory_csv(out / "trajectory.csv", traj.states, ds.timestamps[rows], extra)
    print(f"simulated {horizon} steps from index {start}")


def cmd_evaluate(cfg, out):
    _require(cfg, "dataset", "params")
    ds = data.load_dataset(cfg["dataset"])
    pv = P.load_checkpoint(cfg["params"])
    tc = TrainConfig(climate_horizon=int(cfg["climate_horizon"]), substep_policy=cfg["substep_policy"])
    metrics = evaluate(ds, pv.raw, tc)
    _write_json(out / "metrics.json", metrics)
    print(json.dumps(metrics, indent=2, sort_keys=True))


COMMANDS = {
    "ingest": cmd_ingest,
    "synth": cmd_synth,
    "train": cmd_train,
    "simulate": cmd_simulate,
    "evaluate": cmd_evaluate,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="diffgreenhouse", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON settings file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", required=True, help="new or empty output directory")
        p.add_argument("--threads", type=int, help="cap on numerical library threads")
        return p

    p = common(sub.add_parser("ingest", help="CSV files -> dataset directory"))
    for name in ("climate", "control", "weather", "harvest", "schema"):
        p.add_argument(f"--{name}")
    p = common(sub.add_parser("synth", help="simulate a synthetic season"))
    p.add_argument("--days", type=int)
    p.add_argument("--harvest-start-day", dest="harvest_start_day", type=int)
    p.add_argument("--start")
    p.add_argument("--params", help="parameter checkpoint (default: registry nominals)")
    p.add_argument("--substep-policy", dest="substep_policy", choices=("auto", "literal"))
    p = common(sub.add_parser("train", help="fit parameters to a dataset"))
    p.add_argument("--dataset")
    p.add_argument("--validation")
    p.add_argument("--init", help="initial checkpoint (default: random from --seed)")
    p = common(sub.add_parser("simulate", help="roll out a checkpoint over part of a dataset"))
    p.add_argument("--dataset")
    p.add_argument("--params")
    p.add_argument("--start", help="grid index or ISO timestamp")
    p.add_argument("--horizon", type=int)
    p.add_argument("--substep-policy", dest="substep_policy", choices=("auto", "literal"))
    p = common(sub.add_parser("evaluate", help="loss and final-day metrics of a checkpoint"))
    p.add_argument("--dataset")
    p.add_argument("--params")
    p.add_argument("--climate-horizon", dest="climate_horizon", type=int)
    p.add_argument("--substep-policy", dest="substep_policy", choices=("auto", "literal"))
    return parser


def _thread_limit(n):
    if n is None:
        return nullcontext()
    if n < 1:
        raise UsageError("--threads must be at least 1")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = None
    try:
        cfg = _resolve(args.command, args)
        out = _prepare_out(args.out)
        _write_json(out / "config.json", {"command": args.command, **cfg})
        with _thread_limit(cfg["threads"]):
            COMMANDS[args.command](cfg, out)
        return 0
    except (UsageError, DataError, ParameterError, model.DomainError) as exc:
        code = 2
        report = _error_report(exc)
    except (TrainingError, SimulationError, NumericError, OSError) as exc:
        code = 1
        report = _error_report(exc)
    print(json.dumps(report), file=sys.stderr)
    if out is not None:
        _write_json(out / "errors.json", report)
    return code


if __name__ == "__main__":
    sys.exit(main())
