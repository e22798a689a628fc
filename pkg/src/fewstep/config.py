"""YAML experiment configuration with line-anchored errors and a defaults echo.

Every key has a default; a config file only lists what it changes. Unknown
keys and wrongly typed values are rejected with the line they appear on.
The effective configuration (defaults merged in) is written next to the
outputs so a run can be repeated from the echo alone.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import yaml

from .denoisers import DenoiserSpec, GMMDenoiser
from .errors import ValidationError
from .experiments import EDMWeight
from .geom import ToySpec
from .losses import LossWeights
from .metrics import ClashRule
from .samplers import SamplerConfig
from .schedules import ChurnParams, NoiseLevelParams, TimeDist
from .train import TrainConfig

SAMPLER_MODES = ("ode", "af3")

DEFAULTS = {
    "seed": 0,
    "output_dir": "out",
    "checkpoint": None,
    "data": {"kind": "complex-with-ligand", "n_atoms": 12, "bond_length": 3.8, "n_chains": 1,
             "n_ligand_atoms": 4, "jitter": 0.3, "mixture_weights": [1.0], "mixture_means": [[0.0, 0.0, 0.0]],
             "component_std": 1.0, "data_seed": 0},
    "noise": {"sigma_data": 16.0, "sigma_max": None, "sigma_min": None, "rho": 7.0},
    "denoiser": {"backend": "residual-net", "parameterization": "x-pred", "n_blocks": 4, "width": 64,
                 "time_embed": 8},
    "train": {"framework": "edm", "batch_size": 16, "iterations": 4000, "lr": 1e-3, "optimizer": "adam",
              "time_dist": "beta", "time_alpha": 2.5, "time_beta": 2.5, "pathway_mix": 0.5,
              "eval_every": 0, "coupling": "independent", "align": False,
              "loss": {"w_mse": 1.0, "w_bond": 1.0, "w_slddt": 1.0, "cutoff": 15.0, "t_scale": "edm"}},
    "sampler": {"mode": "ode", "n_steps": 2, "eta": 1.0, "gamma0": 0.8, "gamma_min": 1.0,
                "noise_scale": 1.003, "augmentation": True, "rotate": False, "translation_std": 0.0,
                "pathway": "pathway-A", "n_seeds": 5, "n_samples": 5},
    "metrics": {"inclusion_radius": 15.0, "rmsd_threshold": 2.0, "clash_min_distance": 1.1,
                "clash_mode": "all"},
    "sweep": {"modes": ["ode", "af3"], "etas": [1.0, 1.5], "steps": [2, 200], "n_seeds": 20},
    "prune": {"ks": [1, 3], "seeds": [0, 1, 2, 3, 4], "iterations": 1000, "lr": 5e-4},
}

# keys whose default is None but which take a number
_OPTIONAL_FLOAT = {("noise", "sigma_max"), ("noise", "sigma_min")}


class ConfigError(ValidationError):
    def __init__(self, msg, line=None, source="<config>"):
        self.line = line
        where = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(where + msg)


def _line(node):
    return node.start_mark.line + 1


def _scalar(node, default, path, source):
    if not isinstance(node, yaml.ScalarNode):
        raise ConfigError(f"{'.'.join(path)} must be a scalar", _line(node), source)
    value = yaml.safe_load(yaml.serialize(node))
    if default is None:
        if tuple(path[-2:]) in _OPTIONAL_FLOAT:
            if value is None or (isinstance(value, (int, float)) and not isinstance(value, bool)):
                return None if value is None else float(value)
            raise ConfigError(f"{'.'.join(path)} must be a number or null", _line(node), source)
        if value is None or isinstance(value, str):
            return value
        raise ConfigError(f"{'.'.join(path)} must be a string or null", _line(node), source)
    kind = type(default)
    if kind is bool:
        ok = isinstance(value, bool)
    elif kind is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif kind is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    else:
        ok = isinstance(value, str)
    if not ok:
        raise ConfigError(f"{'.'.join(path)} must be of type {kind.__name__}, got {value!r}", _line(node), source)
    return value


def _merge(node, default, path, source, lines):
    lines[".".join(path)] = _line(node)
    if isinstance(default, dict):
        if not isinstance(node, yaml.MappingNode):
            raise ConfigError(f"{'.'.join(path) or 'config'} must be a mapping", _line(node), source)
        out = copy.deepcopy(default)
        seen = set()
        for k_node, v_node in node.value:
            key = k_node.value
            if key in seen:
                raise ConfigError(f"duplicate key {key!r}", _line(k_node), source)
            seen.add(key)
            if key not in default:
                where = ".".join(path) or "top level"
                raise ConfigError(f"unknown key {key!r} in {where}", _line(k_node), source)
            out[key] = _merge(v_node, default[key], path + [key], source, lines)
        return out
    if isinstance(default, list):
        if not isinstance(node, yaml.SequenceNode) or not node.value:
            raise ConfigError(f"{'.'.join(path)} must be a non-empty list", _line(node), source)
        return [_merge(v, default[0], path, source, lines) for v in node.value]
    return _scalar(node, default, path, source)


@dataclass
class ExperimentConfig:
    raw: dict
    lines: dict
    source: str = "<config>"

    def _err(self, msg, key):
        return ConfigError(msg, self.lines.get(key), self.source)

    def _build(self, key, fn):
        try:
            return fn()
        except (ValidationError, TypeError) as e:
            if isinstance(e, ConfigError):
                raise
            raise self._err(f"{key}: {e}", key) from None

    @property
    def seed(self):
        return self.raw["seed"]

    @property
    def output_dir(self):
        return self.raw["output_dir"]

    def noise(self) -> NoiseLevelParams:
        n = self.raw["noise"]
        return self._build("noise", lambda: NoiseLevelParams(n["sigma_data"], n["sigma_max"], n["sigma_min"], n["rho"]))

    def data(self) -> ToySpec:
        d = {k: v for k, v in self.raw["data"].items() if k != "data_seed"}
        d["mixture_weights"] = tuple(d["mixture_weights"])
        d["mixture_means"] = tuple(tuple(m) for m in d["mixture_means"])
        spec = self._build("data", lambda: ToySpec(**d))
        self._build("data", spec.validate)
        return spec

    def denoiser(self) -> DenoiserSpec:
        return self._build("denoiser", lambda: DenoiserSpec(**self.raw["denoiser"]))

    def analytic_denoiser(self) -> GMMDenoiser:
        if self.raw["data"]["kind"] != "gmm":
            raise self._err("the gmm-analytic backend needs data.kind: gmm", "denoiser.backend")
        return GMMDenoiser.from_toy(self.data(), self.noise())

    def loss(self) -> LossWeights:
        l = dict(self.raw["train"]["loss"])
        ts = l.pop("t_scale")
        if ts not in ("edm", "none"):
            raise self._err(f"train.loss.t_scale must be 'edm' or 'none', got {ts!r}", "train.loss.t_scale")
        return self._build("train.loss", lambda: LossWeights(**l, t_scale=EDMWeight(self.noise()) if ts == "edm" else None))

    def train(self) -> TrainConfig:
        t = dict(self.raw["train"])
        t.pop("loss")
        td = self._build("train.time_dist", lambda: TimeDist(t.pop("time_dist"), t.pop("time_alpha"), t.pop("time_beta")))
        return self._build("train", lambda: TrainConfig(**t, time_dist=td, loss=self.loss(), seed=self.seed,
                                                        max_loss=1e12))

    def sampler(self, mode=None, n_steps=None, eta=None) -> SamplerConfig:
        s = self.raw["sampler"]
        mode = mode or s["mode"]
        if mode not in SAMPLER_MODES:
            raise self._err(f"unknown sampler mode {mode!r}; expected one of {SAMPLER_MODES}", "sampler.mode")
        churn = (self._build("sampler", lambda: ChurnParams(s["gamma0"], s["gamma_min"], s["noise_scale"]))
                 if mode == "af3" else ChurnParams(0.0, 1.0, 1.0))
        return self._build("sampler", lambda: SamplerConfig(
            mode=mode, n_steps=n_steps or s["n_steps"], eta=s["eta"] if eta is None else eta, churn=churn,
            noise=self.noise(), augmentation=s["augmentation"], rotate=s["rotate"],
            translation_std=s["translation_std"]))

    def clash_rule(self) -> ClashRule:
        m = self.raw["metrics"]
        return self._build("metrics", lambda: ClashRule(m["clash_min_distance"], m["clash_mode"]))

    def validate(self):
        """Build every section once so errors surface before any work starts."""
        self.noise()
        self.data()
        spec = self.denoiser()
        if spec.backend == "gmm-analytic":
            self.analytic_denoiser()
        self.train()
        self.sampler()
        self.clash_rule()
        for mode in self.raw["sweep"]["modes"]:
            if mode not in SAMPLER_MODES:
                raise self._err(f"unknown sweep mode {mode!r}; expected one of {SAMPLER_MODES}", "sweep.modes")
        if any(s < 1 for s in self.raw["sweep"]["steps"]):
            raise self._err("sweep steps must be positive", "sweep.steps")
        if self.raw["sweep"]["n_seeds"] < 1:
            raise self._err("sweep.n_seeds must be positive", "sweep.n_seeds")
        if any(k < 0 or k >= spec.n_blocks for k in self.raw["prune"]["ks"]):
            raise self._err(f"prune ks must lie in 0..{spec.n_blocks - 1}", "prune.ks")
        return self

    def echo(self) -> str:
        return yaml.safe_dump(self.raw, sort_keys=True, default_flow_style=False)


def parse_config(text: str, source="<config>") -> ExperimentConfig:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ConfigError(f"YAML syntax error: {getattr(e, 'problem', e)}",
                          None if mark is None else mark.line + 1, source) from None
    lines = {}
    raw = copy.deepcopy(DEFAULTS) if node is None else _merge(node, DEFAULTS, [], source, lines)
    return ExperimentConfig(raw, lines, source).validate()


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e.strerror}", None, str(path)) from None
    return parse_config(text, str(path))
