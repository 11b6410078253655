import json

import pytest

from src.components.mm import InnerConfig
from src.pipeline.config import RunConfig, apply_overrides, config_from_dict, load_config, parse_override
from src.utils import ConfigError


def test_defaults_match_low_count_setup():
    config = config_from_dict({})
    assert config.model.mean_count == 0.25
    assert config.model.background == 0.1
    assert (config.regularizer.beta, config.regularizer.alpha) == (32.0, 0.1)
    assert config.algorithm.rho0 == 8.0
    assert isinstance(config.inner, InnerConfig)


def test_parse_override_values():
    assert parse_override("algorithm.rho0=4") == (["algorithm", "rho0"], 4)
    assert parse_override("algorithm.truncation=true") == (["algorithm", "truncation"], True)
    assert parse_override("signal.source=blocks") == (["signal", "source"], "blocks")
    assert parse_override("model.fft_dims=[8,16]") == (["model", "fft_dims"], [8, 16])
    with pytest.raises(ConfigError):
        parse_override("n_iters")


def test_apply_overrides_does_not_mutate():
    data = {"algorithm": {"name": "wf"}}
    out = apply_overrides(data, ["algorithm.name=mm", "inner.cg_iters=10"])
    assert data == {"algorithm": {"name": "wf"}}
    assert out == {"algorithm": {"name": "mm"}, "inner": {"cg_iters": 10}}


def test_nested_sections_are_built():
    config = config_from_dict({"inner": {"cg_iters": 12}}, ["algorithm.name=admm", "seed=4"])
    assert config.inner.cg_iters == 12
    assert config.algorithm.name == "admm" and config.seed == 4


@pytest.mark.parametrize("data, overrides", [
    ({"bogus": 1}, []),
    ({"algorithm": {"stepsize": 1}}, []),
    ({}, ["algorithm.name=gd"]),
    ({}, ["algorithm.step=armijo"]),
    ({}, ["regularizer.kind=tv"]),
    ({}, ["n_iters=-1"]),
    ({}, ["model.mean_count=0"]),
    ({}, ["model.variant=file"]),
    ({}, ["signal.source=missing.pgm"]),
    ({}, ["algorithm.name=mm", "algorithm.objective=gaussian"]),
    ({}, ["regularizer.kind=l1"]),
    ({"algorithm": "wf"}, []),
])
def test_invalid_configs(data, overrides):
    with pytest.raises(ConfigError):
        config_from_dict(data, overrides)


def test_round_trip_through_dict():
    config = config_from_dict({}, ["algorithm.name=mm", "algorithm.curvature=max", "model.fft_dims=[8,8]"])
    assert config_from_dict(config.to_dict()) == config


def test_load_config_file(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"name": "demo", "n_iters": 7, "algorithm": {"name": "lbfgs"}}))
    config = load_config(str(path), ["n_iters=3"])
    assert isinstance(config, RunConfig)
    assert (config.name, config.n_iters, config.algorithm.name) == ("demo", 3, "lbfgs")


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "absent.json"))
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(str(broken))
