import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from diffgreenhouse import autodiff as ad
from diffgreenhouse import model
from diffgreenhouse import params as P
from diffgreenhouse import training as tr
from diffgreenhouse.errors import DataError, UsageError

CFG = tr.TrainConfig()
SMALL = tr.TrainConfig(outer_iterations=1, climate_iterations=2, crop_iterations=1, batch_size=2,
                       climate_horizon=6, crop_horizon=288)


def climate_states(errors):
    """States (1, T+1, 11) whose climate channels differ from zero truth by ``errors`` (T, 3)."""
    errors = np.asarray(errors, dtype=float)
    states = np.zeros((1, len(errors) + 1, 11))
    states[0, 1:, :3] = errors
    return states, np.zeros((1, len(errors), 3))


def test_climate_loss_examples():
    assert tr.climate_loss(*climate_states([[0, 0, 0]]), CFG.climate_weights) == 0.0
    assert tr.climate_loss(*climate_states([[2.0, 0, 0]]), CFG.climate_weights) == pytest.approx(0.4)
    assert tr.climate_loss(*climate_states([[0, 1000.0, 0], [0, 0, 0]]), CFG.climate_weights) == pytest.approx(2.5)
    assert tr.climate_loss(*climate_states([[0, 0, 100.0]]), CFG.climate_weights) == pytest.approx(0.2)


def test_climate_loss_averages_batch():
    s1, t1 = climate_states([[2.0, 0, 0]])
    s2, t2 = climate_states([[0, 0, 0]])
    loss = tr.climate_loss(np.concatenate([s1, s2]), np.concatenate([t1, t2]), CFG.climate_weights)
    assert loss == pytest.approx(0.2)


def test_climate_loss_rejects_missing_truth():
    s, t = climate_states([[1.0, 0, 0]])
    t[0, 0, 1] = np.nan
    with pytest.raises(DataError):
        tr.climate_loss(s, t, CFG.climate_weights)


def crop_case(hw_err, hc_err):
    offsets = np.arange(287, 2016, 288)
    states = np.zeros((1, 2017, 11))
    states[0, offsets, 9] = hw_err
    states[0, offsets, 10] = hc_err
    return states, np.zeros((1, 7, 2)), offsets


def test_crop_loss_examples():
    assert tr.crop_loss(*crop_case(0.0, 0.0), CFG.crop_weights) == 0.0
    one_day = np.zeros(7)
    one_day[3] = 0.5
    assert tr.crop_loss(*crop_case(one_day, 0.0), CFG.crop_weights) == pytest.approx(0.25)
    assert tr.crop_loss(*crop_case(1.0, 1.0), CFG.crop_weights) == pytest.approx(14.0)


def test_crop_loss_skips_missing_records():
    states, targets, offsets = crop_case(1.0, 0.0)
    targets[0, 2, 0] = np.nan
    assert tr.crop_loss(states, targets, offsets, CFG.crop_weights) == pytest.approx(6.0)


def test_crop_loss_requires_whole_days():
    states, targets, offsets = crop_case(0.0, 0.0)
    with pytest.raises(UsageError):
        tr.crop_loss(states[:, :2000], targets, offsets[:6], CFG.crop_weights)


def test_config_defaults_and_validation():
    assert (CFG.outer_iterations, CFG.climate_iterations, CFG.crop_iterations) == (10, 50, 25)
    assert (CFG.batch_size, CFG.climate_horizon, CFG.crop_horizon) == (32, 24, 2016)
    assert CFG.crop_horizon == 7 * 288
    np.testing.assert_array_equal(CFG.climate_weights, [1e-1, 5e-6, 2e-5])
    with pytest.raises(UsageError):
        tr.TrainConfig(crop_horizon=2000)
    with pytest.raises(UsageError):
        tr.TrainConfig(learning_rate=0.0)
    with pytest.raises(UsageError, match="unknown"):
        tr.TrainConfig.from_dict({"epochs": 3})


def test_adam_first_step_moves_by_learning_rate():
    g = np.array([0.3, -2.0, 5e-3, 7.0])
    new, state = tr.adam_step(g, tr.AdamState.zeros(4), np.zeros(4), CFG)
    np.testing.assert_allclose(new, -0.1 * np.sign(g), rtol=1e-5)
    assert state.t == 1


def test_adam_zero_gradient_leaves_parameters():
    theta = np.array([0.5, -1.0])
    new, _ = tr.adam_step(np.zeros(2), tr.AdamState.zeros(2), theta, CFG)
    np.testing.assert_array_equal(new, theta)


def test_adam_clips_before_moments():
    _, state = tr.adam_step(np.array([5.0]), tr.AdamState.zeros(1), np.zeros(1), CFG)
    assert state.m[0] == pytest.approx(0.1)
    assert state.v[0] == pytest.approx(0.001)


@given(arrays(np.float64, 5, elements=st.floats(1.0, 100.0)), st.floats(1.0, 50.0))
def test_clipping_invariance(g, factor):
    signs = np.array([1, -1, 1, -1, 1])
    state = tr.AdamState(np.full(5, 0.2), np.full(5, 0.3), 4)
    a, _ = tr.adam_step(signs * g, state, np.zeros(5), CFG)
    b, _ = tr.adam_step(signs * g * factor, state, np.zeros(5), CFG)
    np.testing.assert_array_equal(a, b)


def test_adam_names_nonfinite_gradient():
    with pytest.raises(ad.NumericError, match="k_pipe"):
        tr.adam_step(np.array([0.0, np.nan]), tr.AdamState.zeros(2), np.zeros(2), CFG,
                     names=["cap_air", "k_pipe"])


def test_climate_batches(season14):
    table = season14.truth
    n, T = len(season14), 24
    b1 = tr.sample_climate_batch(season14, table, 32, T, np.random.default_rng(5))
    b2 = tr.sample_climate_batch(season14, table, 32, T, np.random.default_rng(5))
    np.testing.assert_array_equal(b1.starts, b2.starts)
    assert len(b1.starts) == 32 and b1.starts.min() >= 0 and b1.starts.max() <= n - T - 1
    assert b1.controls.shape == (32, T, 5) and b1.truth.shape == (32, T, 3)
    k = b1.starts[0]
    np.testing.assert_array_equal(b1.truth[0], season14.observations[k + 1:k + T + 1, :3])
    np.testing.assert_array_equal(b1.x0[0], table[k])


def test_climate_start_bound_is_exhaustive(short_season):
    starts = tr.sample_climate_batch(short_season, short_season.truth, 5000, 24,
                                     np.random.default_rng(0)).starts
    assert starts.max() == len(short_season) - 25


def test_crop_batches(season14):
    batch = tr.sample_crop_batch(season14, season14.truth, 16, 2016, np.random.default_rng(2))
    assert np.all(batch.starts % 288 == 0)
    assert set(tr.crop_starts(season14, 2016)) == set(range(0, 8 * 288, 288))
    assert len(batch.offsets) == 7 and batch.offsets[-1] == 2015
    k = batch.starts[0]
    np.testing.assert_array_equal(batch.truth[0], season14.truth[k + batch.offsets][:, 9:])
    with pytest.raises(UsageError):
        tr.sample_crop_batch(season14, season14.truth, 4, 15 * 288, np.random.default_rng(0))


def test_zero_outer_iterations_returns_init(short_season):
    init = np.linspace(-1, 1, len(model.REGISTRY))
    res = tr.train(short_season, init, tr.TrainConfig(outer_iterations=0))
    np.testing.assert_array_equal(res.theta_star, init)
    assert res.history == [] and res.events == []


def test_training_event_order_and_history(short_season, tmp_path):
    init = P.random_vector(model.REGISTRY, np.random.default_rng(0)).raw
    cfg = tr.TrainConfig(**{**SMALL.to_dict(), "outer_iterations": 2})
    res = tr.train(short_season, init, cfg)
    kinds = [k for k, _, _ in res.events]
    assert kinds == (["refresh"] + ["climate"] * 2 + ["refresh"] + ["crop"]) * 2
    assert len(res.history) == 2 * (2 + 1)
    assert [r["iteration"] for r in res.history] == list(range(1, 7))
    tr.write_history_csv(res.history, tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == ",".join(tr.HISTORY_COLUMNS)
    assert lines[1].split(",")[1] == "climate" and lines[1].endswith(",,,")
    assert lines[3].split(",")[1] == "crop" and lines[3].split(",")[2:6] == ["", "", "", ""]
    assert not np.array_equal(res.theta_star, init)


def test_training_is_reproducible(short_season):
    init = P.random_vector(model.REGISTRY, np.random.default_rng(1)).raw
    a = tr.train(short_season, init, SMALL)
    b = tr.train(short_season, init, SMALL)
    np.testing.assert_array_equal(a.theta_star, b.theta_star)
    assert a.history == b.history


def test_reset_adam_changes_the_path(short_season):
    init = P.random_vector(model.REGISTRY, np.random.default_rng(1)).raw
    a = tr.train(short_season, init, SMALL)
    b = tr.train(short_season, init, tr.TrainConfig(**{**SMALL.to_dict(), "reset_adam": True}))
    assert not np.array_equal(a.theta_star, b.theta_star)


def test_training_errors_carry_context(short_season, monkeypatch):
    real = tr.rollout

    def failing(x0, controls, *args, **kwargs):
        if controls.shape[-2] == SMALL.crop_horizon:
            raise ad.NumericError("boom")
        return real(x0, controls, *args, **kwargs)

    monkeypatch.setattr(tr, "rollout", failing)
    init = P.nominal_vector().raw
    with pytest.raises(tr.TrainingError, match="outer 0, crop iteration 0: boom"):
        tr.train(short_season, init, SMALL)
    with pytest.raises(UsageError):
        tr.train(short_season, init, tr.TrainConfig(**{**SMALL.to_dict(), "climate_horizon": 10_000}))


def test_validation_curve_recorded(short_season):
    init = P.random_vector(model.REGISTRY, np.random.default_rng(0)).raw
    res = tr.train(short_season, init, SMALL, validation=short_season)
    assert [r["outer"] for r in res.validation] == [0, 1]


def test_evaluate_at_truth_is_zero(short_season):
    m = tr.evaluate(short_season, P.nominal_vector().raw)
    for key in ("temp_loss", "vp_loss", "co2_loss", "crop_hw_loss", "crop_hc_loss"):
        assert m[key] == pytest.approx(0.0, abs=1e-20)
    assert m["final_hw_error"] == 0.0 and m["final_hw_error_is_relative"]
    assert m == tr.evaluate(short_season, P.nominal_vector().raw)


def test_evaluate_detects_wrong_parameters(short_season):
    m = tr.evaluate(short_season, np.full(len(model.REGISTRY), 1.0))
    assert m["climate_total"] > 1e-3 and m["final_hc_error"] > 0.01


def test_relative_error_arithmetic():
    err, rel = tr.relative_error(9.4, 10.0)
    assert err == pytest.approx(0.06) and rel
    assert tr.relative_error(0.3, 0.0) == (0.3, False)
