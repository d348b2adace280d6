import json

import pytest

from isacsim.config import (ConfigError, ScenarioConfig, apply_overrides, from_dict, load_config,
                            parse_override)


def test_defaults_valid():
    cfg = load_config()
    assert cfg.counts.cavs == 6 and cfg.counts.antennas == 8
    assert cfg.timing.short_slot * cfg.timing.short_per_long <= cfg.timing.long_slot
    assert cfg.marl.hidden == [256, 256]
    assert (cfg.marl.gamma_long, cfg.marl.gamma_short) == (0.95, 0.0)


def test_dbm_converted_once():
    cfg = load_config(None, ["physics.p_max_dbm=30"])
    assert cfg.physics.p_max == pytest.approx(1.0)
    assert cfg.physics.noise == pytest.approx(10 ** (-114 / 10) / 1e3)


def test_file_and_overrides(tmp_path):
    path = tmp_path / "s.json"
    path.write_text(json.dumps({"counts": {"cavs": 4}, "marl": {"gamma_long": 0.5}}))
    cfg = load_config(path, ["marl.gamma_long=0.9"], seed=7)
    assert cfg.counts.cavs == 4 and cfg.marl.gamma_long == 0.9 and cfg.seed == 7


def test_override_applied_before_validation():
    # 3 x 0.5 s would violate the slot nesting; the second override repairs it
    cfg = load_config(None, ["timing.short_slot=0.5", "timing.short_per_long=2"])
    assert cfg.timing.short_slot == 0.5
    with pytest.raises(ConfigError):
        load_config(None, ["timing.short_slot=0.5"])


@pytest.mark.parametrize("override", ["counts.cavs=zero", "counts.cavs=1.5", "counts.cavs=true",
                                      "marl.centralized_critic=1", "marl.hidden=[1.5]",
                                      "physics.p_max_dbm=\"x\""])
def test_type_errors(override):
    with pytest.raises(ConfigError):
        load_config(None, [override])


@pytest.mark.parametrize("override", ["counts.trucks=2", "nope.cavs=2", "cavs=2", "counts"])
def test_unknown_keys(override):
    with pytest.raises(ConfigError):
        load_config(None, [override])


def test_unknown_file_keys():
    with pytest.raises(ConfigError):
        from_dict({"counts": {"bikes": 1}})
    with pytest.raises(ConfigError):
        from_dict({"extras": {}})


@pytest.mark.parametrize("override", ["counts.cavs=0", "counts.rsus=0", "counts.cluster_size=5",
                                      "marl.gamma_long=1.0", "marl.tau=0", "timing.short_slot=-1"])
def test_invalid_values(override):
    with pytest.raises(ConfigError):
        load_config(None, [override])


def test_parse_override():
    assert parse_override("a.b=3") == ("a.b", 3)
    assert parse_override("a.b=[1, 2]") == ("a.b", [1, 2])
    assert parse_override("a.b=hello") == ("a.b", "hello")
    with pytest.raises(ConfigError):
        parse_override("nothing")


def test_integral_float_accepted():
    assert load_config(None, ["counts.cavs=4.0"]).counts.cavs == 4


def test_round_trip():
    cfg = load_config(None, ["counts.hdvs=3", "thresholds.voi_threshold_short=0.2"], seed=3)
    again = from_dict(json.loads(cfg.to_json()))
    assert again == cfg


def test_apply_overrides_does_not_mutate():
    base = {"counts": {"cavs": 2}}
    apply_overrides(base, ["counts.cavs=3"])
    assert base == {"counts": {"cavs": 2}}


def test_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{nope")
    with pytest.raises(ConfigError):
        load_config(p)


def test_validate_returns_self():
    cfg = ScenarioConfig()
    assert cfg.validate() is cfg
