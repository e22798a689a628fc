import pytest
import yaml

from fewstep.config import DEFAULTS, ConfigError, load_config, parse_config
from fewstep.experiments import EDMWeight


def test_empty_config_uses_defaults():
    cfg = parse_config("")
    assert cfg.raw == DEFAULTS
    assert cfg.train().iterations == 4000 and isinstance(cfg.train().loss.t_scale, EDMWeight)
    assert cfg.sampler().mode == "ode" and cfg.sampler("af3", 2, 1.5).churn.gamma0 == 0.8


@pytest.mark.parametrize("text,line,fragment", [
    ("seed: 1\ntrain:\n  iterationz: 5\n", 3, "unknown key 'iterationz'"),
    ("seed: 1\nseed: 2\n", 2, "duplicate key"),
    ("train:\n  lr: fast\n", 2, "must be of type"),
    ("sampler:\n  mode: heun\n", 2, "unknown sampler mode"),
    ("sweep:\n  steps: []\n", 2, "non-empty list"),
    ("sweep:\n  steps: [2, 0]\n", 2, "positive"),
    ("train:\n  loss:\n    t_scale: cosine\n", 3, "t_scale"),
    ("data:\n  n_atoms: 1\n", 2, "data"),
    ("prune:\n  ks: [4]\n", 2, "prune ks"),
    ("train:\n  batch_size: 0\n", 2, "batch_size"),
    ("seed: [1\n", 2, "YAML syntax"),
])
def test_errors_are_line_anchored(text, line, fragment):
    with pytest.raises(ConfigError) as e:
        parse_config(text, "exp.yaml")
    assert e.value.line == line
    assert str(e.value).startswith(f"exp.yaml:{line}: ") and fragment in str(e.value)


def test_echo_round_trip(tmp_path):
    cfg = parse_config("seed: 9\nsampler:\n  n_steps: 3\n  eta: 1.5\ntrain:\n  lr: 0.0\n")
    p = tmp_path / "echo.yaml"
    p.write_text(cfg.echo())
    again = load_config(p)
    assert again.raw == cfg.raw and again.echo() == cfg.echo()
    assert yaml.safe_load(cfg.echo())["sampler"]["eta"] == 1.5


def test_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.yaml")


def test_analytic_backend_needs_gmm_data():
    with pytest.raises(ConfigError):
        parse_config("denoiser:\n  backend: gmm-analytic\n")
    cfg = parse_config("data:\n  kind: gmm\ndenoiser:\n  backend: gmm-analytic\n")
    assert cfg.analytic_denoiser() is not None
