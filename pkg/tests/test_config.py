import pytest

from fazekit.errors import ConfigError
from fazekit.harness.config import ExperimentConfig, load, loads


def test_defaults_and_round_trip():
    cfg = ExperimentConfig()
    again = loads(cfg.dumps())
    assert again == cfg
    assert again.config_hash() == cfg.config_hash()


def test_typed_parsing():
    cfg = loads("""
[data]
n_train_persons = 7   # inline comment
label_noise_deg = 0.5
[dted]
channels = 4, 8
rotate_codes = no
[eval]
methods = faze, poly3
k_values = 0, 2
""")
    assert cfg.data.n_train_persons == 7 and cfg.data.label_noise_deg == 0.5
    assert cfg.dted.channels == (4, 8) and cfg.dted.rotate_codes is False
    assert cfg.eval.methods == ("faze", "poly3") and cfg.eval.k_values == (0, 2)
    assert cfg.meta == ExperimentConfig().meta


def test_hash_tracks_content():
    a = ExperimentConfig()
    b = a.replace(meta={"inner_lr": "1e-4"})
    assert b.meta.inner_lr == 1e-4
    assert a.config_hash() != b.config_hash()
    assert a.section_hash("data", "dted") == b.section_hash("data", "dted")


def test_with_seed_touches_every_section():
    cfg = ExperimentConfig().with_seed(9)
    assert {cfg.data.seed, cfg.dted.seed, cfg.meta.seed, cfg.eval.seed} == {9}


@pytest.mark.parametrize("text", [
    "[bogus]\nx = 1",
    "[data]\nunknown_key = 1",
    "[data]\nn_train_persons = many",
    "[dted]\nrotate_codes = perhaps",
    "[data]\ncalibration_pool = 500",
    "[eval]\nmethods = faze, magic",
    "[eval]\nablations = full, nothing",
    "[eval]\nk_values = 0, -1",
    "[eval]\ntrials = 0",
    "[dted]\nec_variant = other",
    "not an ini file",
])
def test_invalid_configs(text):
    with pytest.raises(ConfigError):
        loads(text)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load(tmp_path / "absent.ini")


def test_shipped_configs_load():
    from pathlib import Path
    for path in (Path(__file__).parent.parent / "configs").glob("*.ini"):
        load(path)
