import numpy as np
import pytest

from raman2d.config import ConfigError, SimConfig, load_config, parse_config


def test_empty_config_is_default():
    cfg = parse_config("")
    assert cfg == SimConfig()
    assert cfg.digest() == SimConfig().digest()


def test_parse_values_and_comments():
    cfg = parse_config("# span\nlength_km = 40   # shorter\nalpha_signal_db_km=0.21\n"
                       "pump_freqs_thz = 210, 209, 206, 205\nstep_km = 0.05\n")
    assert cfg.fiber.length == 40.0
    assert cfg.grids.dist.length == 40.0 and cfg.grids.dist.points[-1] == 40.0
    assert cfg.fiber.alpha_signal == 0.21
    assert cfg.pump_freqs == (210.0, 209.0, 206.0, 205.0)
    assert cfg.step_km == 0.05


def test_text_round_trip():
    cfg = parse_config("launch_power_dbm = -14\npump_max_dbm = 21, 21, 20, 19\n")
    assert parse_config(cfg.to_text()) == cfg


def test_unknown_key_named_with_line():
    with pytest.raises(ConfigError, match=r"cfg.txt:2: unknown key 'lenght_km'"):
        parse_config("alpha_pump_db_km = 0.25\nlenght_km = 50\n", "cfg.txt")


@pytest.mark.parametrize("text, pattern", [
    ("length_km 50", "expected 'key = value'"),
    ("length_km = fifty", "invalid value for 'length_km'"),
    ("pump_freqs_thz = 210, 209", "needs 4 values"),
    ("length_km = 50\nlength_km = 40", "duplicate key"),
    ("pump_freqs_thz = 205, 206.3, 209.4, 210.4", "decreasing"),
    ("step_km = -0.1", "step_km"),
    ("alpha_signal_db_km = -1", "alpha"),
])
def test_malformed(text, pattern):
    with pytest.raises(ConfigError, match=pattern):
        parse_config(text)


def test_load_config_and_evaluator(tmp_path):
    path = tmp_path / "fiber.cfg"
    path.write_text("alpha_signal_db_km = 0.3\n")
    cfg = load_config(path)
    prof = cfg.evaluator()(np.full((1, 4), -np.inf))[0]
    expected = -16.0 - 0.3 * cfg.grids.dist.points
    assert np.max(np.abs(prof - expected[None, :])) < 1e-6
