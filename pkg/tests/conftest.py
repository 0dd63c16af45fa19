import shutil
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from diffgreenhouse import data, params

FIXTURES = Path(__file__).parent / "fixtures"
CORPUS = FIXTURES / "corpus"
SCHEMA = FIXTURES / "corpus_schema.json"
CORPUS_FILES = ("climate", "control", "weather", "harvest")


def corpus_copy(directory, drop_minutes=0, drop_at="2024-03-01T12:00:00"):
    """Copy the corpus into ``directory``, removing ``drop_minutes`` of climate rows.

    Rows with timestamps in ``[drop_at, drop_at + drop_minutes)`` are removed,
    which leaves a gap of that length between the surrounding samples.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name in CORPUS_FILES:
        shutil.copy(CORPUS / f"{name}.csv", directory / f"{name}.csv")
    shutil.copy(SCHEMA, directory / "schema.json")
    if drop_minutes:
        frame = pd.read_csv(directory / "climate.csv", dtype={"time": str})
        t = pd.to_datetime(frame["time"])
        lo = pd.Timestamp(drop_at) - pd.Timedelta(seconds=150)
        hi = pd.Timestamp(drop_at) + pd.Timedelta(minutes=drop_minutes) - pd.Timedelta(seconds=150)
        frame[~((t >= lo) & (t < hi))].to_csv(directory / "climate.csv", index=False)
    return [directory / f"{name}.csv" for name in CORPUS_FILES] + [directory / "schema.json"]


@pytest.fixture(scope="session")
def theta_true():
    return params.constrain(params.nominal_vector())


@pytest.fixture(scope="session")
def short_season(theta_true):
    """Three synthetic days with harvest from day 1."""
    return data.synthetic_generate(theta_true, days=3, seed=3, harvest_start_day=1)


@pytest.fixture(scope="session")
def season14(theta_true):
    return data.synthetic_generate(theta_true, days=14, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# One "criterion N: PASS/FAIL" line per acceptance criterion, filled in by
# tests/test_acceptance.py and repeated in the terminal summary.
CRITERIA = {}


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])
