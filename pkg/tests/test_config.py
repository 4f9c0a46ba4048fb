import pytest
import yaml

from fiberspec import config as cfgmod
from fiberspec.errors import ValidationError


def test_defaults_are_complete_and_unit_suffixed():
    cfg = cfgmod.default_config()
    flat = cfgmod.flatten(cfg)
    assert flat["dispersion.length_km"] == 20.56
    assert flat["signal_chain.sigma_pulse_ps"] == 170.0
    assert flat["run.sync_rate_hz"] == 40.8e6
    rc = cfgmod.build_run_config(cfg)
    assert rc.filters.label == "beta" and rc.duration == 500.0


def test_layer_order(tmp_path):
    p1 = tmp_path / "a.yaml"
    p1.write_text(yaml.safe_dump({"run": {"duration_s": 5.0, "rng_seed": 3}}))
    p2 = tmp_path / "b.yaml"
    p2.write_text(yaml.safe_dump({"run": {"duration_s": 7.0}}))
    env = {"BFS_RUN__RNG_SEED": "9", "BFS_PUMP__DETUNING_NM": "0.25"}
    cfg = cfgmod.load_config([p1, p2], environ=env, overrides={"pump.detuning_nm": 0.1})
    assert cfg["run"]["duration_s"] == 7.0
    assert cfg["run"]["rng_seed"] == 9
    assert cfg["pump"]["detuning_nm"] == 0.1


@pytest.mark.parametrize("env", [{"BFS_RUN__NOPE": "1"}, {"BFS_RUN": "1"},
                                 {"BFS_RUN__RNG_SEED": "x"}])
def test_bad_environment(env):
    with pytest.raises(ValidationError):
        cfgmod.load_config(environ=env)


def test_unknown_file_key_names_path(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump({"run": {"duration": 5.0}}))
    with pytest.raises(ValidationError, match="run.duration"):
        cfgmod.load_config([p], environ={})


def test_validation_messages_name_field():
    with pytest.raises(ValidationError, match="run.duration_s"):
        cfgmod.build_run_config(cfgmod.load_config(environ={}, overrides={"run.duration_s": 0}))


def test_custom_filter_needs_bands():
    cfg = cfgmod.load_config(environ={}, overrides={"filters.label": "custom"})
    with pytest.raises(ValidationError, match="filters.signal_lo_nm"):
        cfgmod.build_run_config(cfg)


def test_digest_roundtrip():
    cfg = cfgmod.load_config(environ={})
    rc = cfgmod.build_run_config(cfg)
    again = cfgmod.build_run_config(cfgmod.merge(cfgmod.default_config(),
                                                 cfgmod.run_config_to_dict(rc)))
    assert again.digest() == rc.digest()
    other = cfgmod.build_run_config(cfgmod.set_dotted(cfg, "run.rng_seed", 1))
    assert other.digest() != rc.digest()
