import numpy as np
import pandas as pd
import pytest

from diffgreenhouse import data, model
from diffgreenhouse.errors import DataError, FormatError, GapError, SchemaError
from diffgreenhouse.model import IDX

from .conftest import corpus_copy


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    paths = corpus_copy(tmp_path_factory.mktemp("corpus"))
    return paths, data.ingest_csv(*paths)


def test_corpus_ingests_onto_grid(corpus):
    _, ds = corpus
    assert len(ds) == 2 * 288 + 1
    assert ds.start == pd.Timestamp("2024-03-01")
    assert ds.report["interpolated"] == {} and ds.report["clamped"] == {}
    assert [r.index for r in ds.harvest] == [287, 575]
    np.testing.assert_array_equal(ds.start_of_day_indices(), [0, 288, 576])


def test_units_are_converted(corpus):
    paths, ds = corpus
    ctrl = pd.read_csv(paths[1])
    np.testing.assert_allclose(ds.controls[:, 1], ctrl["vent_pct"] / 100.0)
    weather = pd.read_csv(paths[2])
    np.testing.assert_allclose(ds.weather[:, 1], weather["outside_vp_kpa"] * 1000.0)


def test_relative_humidity_conversion_identity():
    t = np.array([20.0, 5.0, 30.0])
    vp = data._convert("VP_air", np.array([100.0, 100.0, 50.0]), "%RH", t)
    sat = model.saturation_vapor_pressure(t)
    assert abs(vp[0] - model.saturation_vapor_pressure(20.0)) <= 1e-9
    np.testing.assert_allclose(vp, sat * [1.0, 1.0, 0.5], rtol=1e-15)


def test_short_gap_is_interpolated(tmp_path, corpus):
    _, ref = corpus
    ds = data.ingest_csv(*corpus_copy(tmp_path, drop_minutes=5))
    assert ds.report["interpolated"] == {"T_air": 1, "VP_air": 1, "CO2_air": 1}
    k = 144
    expected = 0.5 * (ref.observations[k - 1, :3] + ref.observations[k + 1, :3])
    np.testing.assert_allclose(ds.observations[k, :3], expected, rtol=1e-12)


def test_half_hour_gap_is_interpolated(tmp_path):
    ds = data.ingest_csv(*corpus_copy(tmp_path, drop_minutes=30))
    assert ds.report["interpolated"]["T_air"] == 6
    assert not np.isnan(ds.observations[:, :3]).any()


def test_long_gap_is_rejected_with_timestamp(tmp_path):
    with pytest.raises(GapError, match="2024-03-01 12:00:00"):
        data.ingest_csv(*corpus_copy(tmp_path, drop_minutes=120))


def test_missing_column_is_a_schema_error(tmp_path):
    paths = corpus_copy(tmp_path)
    frame = pd.read_csv(paths[0]).drop(columns=["co2_ppm"])
    frame.to_csv(paths[0], index=False)
    with pytest.raises(SchemaError, match="co2_ppm"):
        data.ingest_csv(*paths)


def test_unmapped_channel_is_a_schema_error(tmp_path):
    paths = corpus_copy(tmp_path)
    schema = data.load_schema(paths[4])
    del schema["u_fog"]
    with pytest.raises(SchemaError, match="u_fog"):
        data.ingest_csv(*paths[:4], schema)


def test_unknown_unit_is_a_schema_error(tmp_path):
    paths = corpus_copy(tmp_path)
    schema = data.load_schema(paths[4])
    schema["T_air"]["unit"] = "furlongs"
    with pytest.raises(SchemaError, match="furlongs"):
        data.ingest_csv(*paths[:4], schema)


def test_non_monotone_timestamps_rejected(tmp_path):
    paths = corpus_copy(tmp_path)
    frame = pd.read_csv(paths[2])
    frame.iloc[[10, 11]] = frame.iloc[[11, 10]].to_numpy()
    frame.to_csv(paths[2], index=False)
    with pytest.raises(FormatError, match="increasing"):
        data.ingest_csv(*paths)


def test_decreasing_harvest_rejected(tmp_path):
    paths = corpus_copy(tmp_path)
    frame = pd.read_csv(paths[3])
    frame.loc[1, "harvest_kg"] = frame.loc[0, "harvest_kg"] - 0.01
    frame.to_csv(paths[3], index=False)
    with pytest.raises(DataError, match="decreases"):
        data.ingest_csv(*paths)


def test_control_fractions_are_clamped(tmp_path, caplog):
    paths = corpus_copy(tmp_path)
    frame = pd.read_csv(paths[1])
    frame.loc[:4, "fog"] = 1.7
    frame.to_csv(paths[1], index=False)
    ds = data.ingest_csv(*paths)
    assert ds.report["clamped"] == {"u_fog": 5}
    assert ds.controls[:, 2].max() == 1.0
    assert "clamped 5 u_fog" in caplog.text


def test_round_trip_is_exact_and_idempotent(tmp_path, corpus):
    _, ds = corpus
    data.save_dataset(ds, tmp_path / "a")
    back = data.load_dataset(tmp_path / "a")
    np.testing.assert_array_equal(back.observations, ds.observations)
    np.testing.assert_array_equal(back.controls, ds.controls)
    np.testing.assert_array_equal(back.weather, ds.weather)
    assert back.harvest == ds.harvest and back.start == ds.start
    data.save_dataset(back, tmp_path / "b")
    for name in ("grid.csv", "harvest.csv", "meta.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_load_rejects_foreign_directory(tmp_path):
    with pytest.raises(FormatError):
        data.load_dataset(tmp_path)


def test_synthetic_season_shape_and_determinism(theta_true, short_season):
    again = data.synthetic_generate(theta_true, days=3, seed=3, harvest_start_day=1)
    assert len(short_season) == 3 * 288 + 1
    np.testing.assert_array_equal(again.truth, short_season.truth)
    np.testing.assert_array_equal(again.weather, short_season.weather)
    other = data.synthetic_generate(theta_true, days=3, seed=4, harvest_start_day=1)
    assert not np.array_equal(other.weather, short_season.weather)


def test_synthetic_exposes_only_observable_channels(short_season):
    obs = short_season.observations
    assert not np.isnan(obs[:, :3]).any()
    assert np.isnan(obs[:, 3:9]).all()
    rows = np.flatnonzero(~np.isnan(obs[:, IDX["HW"]]))
    np.testing.assert_array_equal(rows, [287, 575, 863])
    np.testing.assert_array_equal(obs[rows, 9:], short_season.truth[rows, 9:])


def test_synthetic_season_harvests(season14):
    assert season14.harvest[-1].weight > 0 and season14.harvest[-1].count > 0
    assert season14.harvest[9].weight == 0.0


def test_synthetic_rejects_out_of_bounds_parameters(theta_true):
    bad = np.array(theta_true)
    bad[0] *= 10
    with pytest.raises(DataError, match="cap_air"):
        data.synthetic_generate(bad, days=1, seed=0)


def test_split_partitions_rows_and_harvest(season14):
    a, b = data.split(season14, 7)
    assert len(a) + len(b) == len(season14) and len(a) == 7 * 288
    assert b.start == pd.Timestamp("2024-03-08")
    assert [r.date for r in a.harvest] + [r.date for r in b.harvest] == [r.date for r in season14.harvest]
    assert b.harvest[0].index == 287
    np.testing.assert_array_equal(b.truth, season14.truth[7 * 288:])
    with pytest.raises(DataError):
        data.split(season14, 0)
    with pytest.raises(DataError):
        data.split(season14, 30)


def test_end_of_day_index(season14):
    assert season14.end_of_day_index(pd.Timestamp("2024-03-02").date()) == 575
    assert season14.day_of(575) == 1
    with pytest.raises(DataError):
        season14.end_of_day_index(pd.Timestamp("2025-01-01").date())
