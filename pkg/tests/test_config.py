import pytest

from platoon_edca.config import ConfigError, RateSchedule, ScenarioConfig, config_from_dict, load_config


def test_empty_file_gives_defaults(tmp_path):
    p = tmp_path / "empty.toml"
    p.write_text("")
    cfg = load_config(p)
    assert cfg == ScenarioConfig()
    assert (cfg.n_platoons, cfg.platoon_size) == (9, 8)
    assert cfg.lambda0.at(0) == cfg.lambda1.at(0) == 20.0


def test_negative_dt_names_field(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text("[scenario]\ndt = -1\n")
    with pytest.raises(ConfigError) as info:
        load_config(p)
    assert info.value.field_name == "scenario.dt"
    assert "scenario.dt" in str(info.value)


@pytest.mark.parametrize("text,field", [
    ("[scenario]\nfoo = 1\n", "scenario.foo"),
    ("[foo]\nx = 1\n", "foo"),
    ("[idm]\nfoo = 1\n", "idm.foo"),
    ("[sim]\nfoo = 1\n", "sim.foo"),
])
def test_unknown_keys_rejected(tmp_path, text, field):
    p = tmp_path / "c.toml"
    p.write_text(text)
    with pytest.raises(ConfigError) as info:
        load_config(p)
    assert info.value.field_name == field


def test_parse_error_reports_location(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("[scenario\n")
    with pytest.raises(ConfigError, match="line 1"):
        load_config(p)


def test_overrides_and_schedules():
    cfg = config_from_dict({
        "scenario": {"t_end": 5.0, "target": [1, 1]},
        "traffic": {"lambda0": [[0.0, 10.0], [2.0, 30.0]], "lambda1": 5},
        "edca": {"retry_limit": 3},
        "sim": {"window": 2.0, "ac1_phase": "random"},
    })
    assert cfg.t_end == 5.0 and cfg.target == (1, 1)
    assert cfg.lambda0.at(1.99) == 10.0 and cfg.lambda0.at(2.0) == 30.0
    assert cfg.lambda1 == RateSchedule.constant(5)
    assert cfg.edca.retry_limit == 3
    assert cfg.sim_window == 2.0 and cfg.ac1_phase == "random"


@pytest.mark.parametrize("kwargs", [
    {"target": (10, 1)}, {"disturbed": (1, 9)}, {"t_end": 0.0}, {"klb_rho_max": 1.0},
    {"initial_queue": "full"},
])
def test_range_violations(kwargs):
    with pytest.raises(ConfigError):
        ScenarioConfig(**kwargs)


def test_derived_edca_constants(default_config):
    e = default_config.edca
    assert round(e.aifs(0) * 1e6, 9) == 58 and round(e.aifs(1) * 1e6, 9) == 71
    assert e.backoff_stages == 1 and e.extra_aifs_slots == 1
    assert [e.w1(r) for r in range(4)] == [4, 8, 8, 8]
