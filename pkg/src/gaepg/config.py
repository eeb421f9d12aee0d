"""Experiment configuration and the flat ``section.key = value`` file format."""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .advantage import GaeConfig
from .trpo import TrustRegionConfig
from .valuefit import ValueFitConfig

BASELINE_MODES = ("value_function", "time_dependent", "none")


@dataclass
class EnvSection:
    name: str = "cartpole"
    mdp_file: str = ""
    max_episode_steps: int = 1000


@dataclass
class PolicySection:
    hidden_sizes: tuple[int, ...] = ()
    init_log_std: float = 0.0


@dataclass
class GaeSection:
    gamma: float = 0.99
    lam: float = 0.96
    normalize_advantages: bool = True
    baseline_mode: str = "value_function"


@dataclass
class TrpoSection:
    epsilon: float = 0.01
    cg_iters: int = 10
    cg_tol: float = 1e-10
    damping: float = 1e-5
    backtrack_ratio: float = 0.8
    max_backtracks: int = 10


@dataclass
class VfSection:
    hidden_sizes: tuple[int, ...] = (20,)
    epsilon: float = 0.01
    cg_iters: int = 10
    cg_tol: float = 1e-10
    damping: float = 1e-5
    n_steps: int = 1
    lam: float = 1.0


@dataclass
class RunSection:
    iterations: int = 100
    seed: int = 0
    trajectories_per_batch: int = 20
    batch_timesteps: int = 0
    workers: int = 1
    out_dir: str = ""


@dataclass
class ExperimentConfig:
    env: EnvSection = field(default_factory=EnvSection)
    policy: PolicySection = field(default_factory=PolicySection)
    gae: GaeSection = field(default_factory=GaeSection)
    trpo: TrpoSection = field(default_factory=TrpoSection)
    vf: VfSection = field(default_factory=VfSection)
    run: RunSection = field(default_factory=RunSection)

    def validate(self) -> None:
        if self.run.iterations < 1:
            raise ValueError("run.iterations must be >= 1")
        if (self.run.trajectories_per_batch > 0) == (self.run.batch_timesteps > 0):
            raise ValueError("set exactly one of run.trajectories_per_batch and run.batch_timesteps")
        if self.run.trajectories_per_batch < 0 or self.run.batch_timesteps < 0:
            raise ValueError("batch sizes must be positive")
        if self.gae.baseline_mode not in BASELINE_MODES:
            raise ValueError(f"gae.baseline_mode must be one of {BASELINE_MODES}")
        if self.env.name not in ("cartpole", "tabular"):
            raise ValueError(f"unknown env.name {self.env.name!r}")
        if self.env.name == "tabular" and not self.env.mdp_file:
            raise ValueError("env.mdp_file is required for the tabular environment")
        self.gae_config()
        self.trust_region_config()
        self.value_fit_config()

    def gae_config(self) -> GaeConfig:
        return GaeConfig(self.gae.gamma, self.gae.lam)

    def trust_region_config(self) -> TrustRegionConfig:
        t = self.trpo
        return TrustRegionConfig(t.epsilon, t.cg_iters, t.cg_tol, t.damping, t.backtrack_ratio, t.max_backtracks)

    def value_fit_config(self) -> ValueFitConfig:
        v = self.vf
        return ValueFitConfig(epsilon_v=v.epsilon, cg_iters=v.cg_iters, cg_tol=v.cg_tol,
                              damping=v.damping, n_steps=v.n_steps, lam_v=v.lam)


def _section_types(section) -> dict[str, typing.Any]:
    return typing.get_type_hints(type(section))


def config_keys(config: ExperimentConfig | None = None) -> list[str]:
    config = config or ExperimentConfig()
    keys = []
    for sec in dataclasses.fields(config):
        for f in dataclasses.fields(getattr(config, sec.name)):
            keys.append(f"{sec.name}.{f.name}")
    return keys


def _parse_value(raw: str, typ):
    raw = raw.strip()
    if typ is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if typ is int:
        return int(raw)
    if typ is float:
        return float(raw)
    if typ is str:
        return raw
    if typing.get_origin(typ) is tuple:
        return tuple(int(v) for v in raw.replace(",", " ").split())
    raise TypeError(f"unsupported config type {typ}")


def _format_value(value) -> str:
    if isinstance(value, tuple):
        return " ".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def set_key(config: ExperimentConfig, key: str, raw: str) -> None:
    section_name, _, name = key.partition(".")
    section = getattr(config, section_name, None)
    if section is None or not dataclasses.is_dataclass(section):
        raise KeyError(f"unknown config section in {key!r}")
    types = _section_types(section)
    if name not in types:
        raise KeyError(f"unknown config key {key!r}")
    setattr(section, name, _parse_value(raw, types[name]))


def get_key(config: ExperimentConfig, key: str):
    section_name, _, name = key.partition(".")
    return getattr(getattr(config, section_name), name)


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    config = copy_config(base) if base else ExperimentConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"line {lineno}: expected key = value, got {line!r}")
        set_key(config, key.strip(), value)
    return config


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def format_config(config: ExperimentConfig) -> str:
    return "".join(f"{key} = {_format_value(get_key(config, key))}\n" for key in config_keys(config))


def copy_config(config: ExperimentConfig) -> ExperimentConfig:
    return ExperimentConfig(**{
        f.name: dataclasses.replace(getattr(config, f.name)) for f in dataclasses.fields(config)
    })


def with_overrides(config: ExperimentConfig, **overrides) -> ExperimentConfig:
    """Copy of ``config`` with ``section__key=value`` keyword overrides applied."""
    config = copy_config(config)
    for k, v in overrides.items():
        section, name = k.split("__", 1)
        setattr(getattr(config, section), name, v)
    return config
