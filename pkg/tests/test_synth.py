"""
synth 测试: 场景配置、损害模型标定与直接生成的数据集
"""
import numpy as np
import pytest

from src.config import ConfigError
from src.grid_io import load_sequence
from src.features import read_transformers
from src.synth import (
    GROUND_COLUMNS, REFERENCE_PRIORS, DamageEvent, ScenarioConfig, calibrate_damage_model,
    expected_no_damage_share, generate_dataset_direct, generate_scenario, load_scenario_config,
    write_scenario,
)


@pytest.mark.parametrize("kwargs", [
    {"priors": (0.5, 0.5, 0.5, 0.0)},
    {"priors": (0.5, 0.5, 0.0)},
    {"priors": (1.1, -0.1, 0.0, 0.0)},
    {"outage_max_s": 200},
    {"missing_rate": 1.5},
    {"lifetime_min": 10, "lifetime_max": 5},
])
def test_invalid_scenario_config(kwargs):
    with pytest.raises(ConfigError):
        ScenarioConfig(**kwargs).validate()


def test_load_scenario_config(small_scenario_path, tmp_path):
    config = load_scenario_config(small_scenario_path)
    assert (config.rows, config.cols, config.n_frames) == (48, 48, 8)
    assert config.priors == (0.4, 0.2, 0.2, 0.2)
    assert config.start_timestamp() == 1496318400

    bad = tmp_path / "bad.cfg"
    bad.write_text("seed=1\nno_such_key=3\n")
    with pytest.raises(ConfigError, match="no_such_key"):
        load_scenario_config(bad)


def test_scenario_config_text_round_trip(small_scenario_path, tmp_path):
    config = load_scenario_config(small_scenario_path)
    path = tmp_path / "again.cfg"
    path.write_text(config.to_text())
    assert load_scenario_config(path) == config


# ============================================================================
# 损害模型
# ============================================================================

def _random_events(rng, n=40):
    events = []
    for k in range(n):
        size = int(rng.integers(1, 6))
        events.append(DamageEvent(300 * k, np.arange(size), rng.uniform(35.0, 55.0, size),
                                  float(rng.uniform(0.0, 0.5)), float(rng.normal(0.0, 1.0))))
    return events


def test_calibration_hits_target_share(rng):
    events = _random_events(rng)
    for target in (0.6, 0.9, 0.978):
        c = calibrate_damage_model(events, (target, 0.0, 0.0, 1.0 - target), 0.3, 2.0)
        assert expected_no_damage_share(events, 0.3, 2.0, c) == pytest.approx(target, abs=1e-9)


def test_calibration_depends_only_on_no_damage_prior(rng):
    events = _random_events(rng)
    c_a = calibrate_damage_model(events, (0.7, 0.1, 0.1, 0.1), 0.3, 2.0)
    c_b = calibrate_damage_model(events, (0.7, 0.0, 0.0, 0.3), 0.3, 2.0)
    assert c_a == c_b


def test_no_damage_share_increases_with_c(rng):
    events = _random_events(rng)
    shares = [expected_no_damage_share(events, 0.3, 2.0, c) for c in np.linspace(-10, 20, 31)]
    assert all(a <= b for a, b in zip(shares, shares[1:]))


def test_calibration_without_events(capsys):
    assert calibrate_damage_model([], REFERENCE_PRIORS, 0.3, 2.0) == 0.0
    assert "⚠️" in capsys.readouterr().out


# ============================================================================
# 直接生成
# ============================================================================

def test_direct_generator_follows_priors():
    data = generate_dataset_direct(ScenarioConfig(seed=11), 20_000)
    share = np.mean(data.labels == 0)
    assert abs(share - REFERENCE_PRIORS[0]) <= 0.02
    assert set(np.unique(data.labels).tolist()) <= {0, 1, 2, 3}


def test_direct_generator_is_deterministic():
    config = ScenarioConfig(seed=5, priors=(0.25, 0.25, 0.25, 0.25))
    a = generate_dataset_direct(config, 500)
    b = generate_dataset_direct(config, 500)
    assert a.equals(b)
    assert not a.equals(generate_dataset_direct(ScenarioConfig(seed=6, priors=config.priors), 500))


def test_direct_generator_masks_only_ground_columns():
    config = ScenarioConfig(seed=3, priors=(0.25, 0.25, 0.25, 0.25), missing_rate=0.3)
    data = generate_dataset_direct(config, 2000)
    ground_bits = sum(1 << col for col in GROUND_COLUMNS)
    assert np.all(data.masks & ~ground_bits == 0)
    assert np.any(data.masks)
    for col in GROUND_COLUMNS:
        flagged = (data.masks >> col) & 1 == 1
        assert np.all(data.X[flagged, col] == 0.0)


def test_direct_generator_separable_without_overlap():
    config = ScenarioConfig(seed=4, priors=(0.25, 0.25, 0.25, 0.25), missing_rate=0.0)
    data = generate_dataset_direct(config, 4000)
    for c in range(4):
        rows = data.X[data.labels == c]
        assert np.all(np.abs(rows - c) <= 0.45)


def test_direct_generator_rejects_empty():
    with pytest.raises(ValueError):
        generate_dataset_direct(ScenarioConfig(), 0)


# ============================================================================
# 完整场景
# ============================================================================

def test_generate_scenario_is_deterministic(small_scenario_path):
    config = load_scenario_config(small_scenario_path)
    a = generate_scenario(config)
    b = generate_scenario(config)
    assert len(a.frames) == 8
    assert all(x == y for x, y in zip(a.frames, b.frames))
    assert a.strikes == b.strikes
    assert a.observations == b.observations
    assert a.transformers.outages == b.transformers.outages
    assert a.damage_c == b.damage_c


def test_outages_fall_inside_their_frame(small_scenario_path):
    config = load_scenario_config(small_scenario_path)
    scenario = generate_scenario(config)
    stamps = [grid.timestamp for grid in scenario.frames]
    for outage in scenario.transformers.outages:
        assert any(ts < outage.start_ts and outage.end_ts < ts + config.step_seconds for ts in stamps)


def test_write_scenario(small_scenario_path, tmp_path):
    config = load_scenario_config(small_scenario_path)
    scenario = generate_scenario(config)
    paths = write_scenario(scenario, config, tmp_path / "synth", tmp_path / "frames")

    assert set(paths) == {"strikes", "observations", "transformers", "scenario", "frames"}
    frames = load_sequence(paths["frames"], config.step_seconds)
    assert frames.timestamps == scenario.frames.timestamps
    loaded = read_transformers(paths["transformers"])
    assert loaded.outages == scenario.transformers.outages
    assert "calibrated damage_c" in paths["scenario"].read_text()
    assert load_scenario_config(paths["scenario"]) == config
