"""Experiment configuration, read from INI-style ``key = value`` sections.

Sections map one-to-one onto the dataclasses below; unknown sections or
keys are rejected so typos surface as config errors rather than silently
falling back to defaults.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from ..diffproc import SdeSpec
from ..errors import ConfigError


@dataclass
class DataConfig:
    kind: str = "gmm_ring"  # gmm_ring | checkerboard | gaussian | idx
    seed: int = 0
    n_train: int = 20000
    n_test: int = 500
    modes: int = 8
    radius: float = 2.0
    std: float = 0.1
    squares: int = 4
    dim: int = 2  # gaussian only
    path: str = ""  # idx only
    image_size: int = 8


@dataclass
class SdeConfig:
    beta_min: float = 0.1
    beta_max: float = 20.0
    t_end: float = 1.0


@dataclass
class NetConfig:
    activation: str = "gelu"
    time_features: int = 4
    prior_hidden: tuple = (128, 128, 128)
    encoder_hidden: tuple = (128, 128)
    corrector_hidden: tuple = (128, 128)
    decoder_hidden: tuple = (128, 128, 128)
    diffdecoder_hidden: tuple = (128, 128, 128)


@dataclass
class OptimConfig:
    learning_rate: float = 2e-4
    ema_rate: float = 0.999
    batch_size: int = 256
    grad_clip: float = 1.0
    prior_iters: int = 4000
    encoder_iters: int = 3000
    corrector_iters: int = 1500
    vae_iters: int = 4000
    diffdecoder_iters: int = 4000


@dataclass
class SamplerConfig:
    n_steps: int = 500
    t_eps: float = 1e-3
    mean_latent: bool = False


@dataclass
class ExperimentConfig:
    seed: int = 0
    eval_seed: int = 12345
    latent_dim: int = 2
    beta: float = 0.01
    data: DataConfig = field(default_factory=DataConfig)
    sde: SdeConfig = field(default_factory=SdeConfig)
    nets: NetConfig = field(default_factory=NetConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)

    def __post_init__(self):
        validate(self)

    def sde_spec(self, dim: int) -> SdeSpec:
        return SdeSpec(self.sde.beta_min, self.sde.beta_max, self.sde.t_end, dim)

    def replace(self, **changes) -> "ExperimentConfig":
        """Copy with top-level or dotted (``optim.prior_iters``) fields changed."""
        cfg = from_dict(to_dict(self))
        for key, value in changes.items():
            target = cfg
            *path, leaf = key.split(".")
            for p in path:
                target = getattr(target, p)
            if not hasattr(target, leaf):
                raise ConfigError(f"unknown config key {key!r}")
            setattr(target, leaf, value)
        validate(cfg)
        return cfg


_SECTIONS = {"data": DataConfig, "sde": SdeConfig, "nets": NetConfig, "optim": OptimConfig,
             "sampler": SamplerConfig}


def validate(cfg: ExperimentConfig) -> None:
    if cfg.beta < 0:
        raise ConfigError("beta must be >= 0")
    counts = [cfg.latent_dim, cfg.data.n_train, cfg.data.n_test, cfg.optim.batch_size,
              cfg.sampler.n_steps, cfg.optim.prior_iters, cfg.optim.encoder_iters,
              cfg.optim.corrector_iters, cfg.optim.vae_iters, cfg.optim.diffdecoder_iters]
    if min(counts) < 1:
        raise ConfigError("all counts must be >= 1")
    if not 0 <= cfg.optim.ema_rate < 1:
        raise ConfigError("ema_rate must lie in [0, 1)")
    if cfg.data.kind not in ("gmm_ring", "checkerboard", "gaussian", "idx"):
        raise ConfigError(f"unknown dataset kind {cfg.data.kind!r}")
    try:
        cfg.sde_spec(1)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if not 0 < cfg.sampler.t_eps < cfg.sde.t_end:
        raise ConfigError("sampler t_eps must lie in (0, t_end)")


def _coerce(raw: str, default):
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ConfigError(f"expected a boolean, got {raw!r}")
        return low in ("true", "1", "yes")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        return tuple(int(v) for v in raw.replace(",", " ").split())
    return raw.strip()


def _fill(obj, items, section):
    for key, raw in items:
        if not hasattr(obj, key):
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        try:
            setattr(obj, key, _coerce(raw, getattr(obj, key)))
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: {exc}") from exc


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    cfg = ExperimentConfig()
    for section in parser.sections():
        items = parser.items(section)
        if section == "experiment":
            _fill(cfg, items, section)
        elif section in _SECTIONS:
            _fill(getattr(cfg, section), items, section)
        else:
            raise ConfigError(f"unknown section [{section}]")
    validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def to_dict(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)


def from_dict(d: dict) -> ExperimentConfig:
    top = {k: v for k, v in d.items() if k not in _SECTIONS}
    subs = {name: cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d[name].items()})
            for name, cls in _SECTIONS.items() if name in d}
    return ExperimentConfig(**top, **subs)


def dump_config(cfg: ExperimentConfig) -> str:
    """Render back into the INI format accepted by :func:`parse_config`."""
    d = to_dict(cfg)
    lines = ["[experiment]"]
    lines += [f"{k} = {_fmt(v)}" for k, v in d.items() if k not in _SECTIONS]
    for name in _SECTIONS:
        lines += ["", f"[{name}]"] + [f"{k} = {_fmt(v)}" for k, v in d[name].items()]
    return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, (tuple, list)):
        return ", ".join(str(x) for x in v)
    return str(v)
