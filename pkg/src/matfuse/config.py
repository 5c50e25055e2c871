"""Run configuration: TOML file -> dataclasses, with strict unknown-key
rejection and an echo writer so every run directory carries the fully
resolved configuration it was produced with."""

from __future__ import annotations

import dataclasses
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field, asdict

from .errors import ConfigError
from .graph import GraphConfig
from .model import ModelConfig
from .training import TrainConfig


@dataclass
class DataConfig:
    expand_symmetry: bool = True
    split_fractions: tuple = (0.8, 0.1, 0.1)


@dataclass
class SweepConfig:
    robustness_fractions: tuple = (0.25, 0.5, 0.75, 1.0)
    corruption_p: tuple = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)
    corruption_mode: str = "both"
    seeds: tuple = ()  # empty -> just the train seed


@dataclass
class RunConfig:
    graph: GraphConfig = field(default_factory=GraphConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)


_SECTIONS = {"graph": GraphConfig, "model": ModelConfig,
             "train": TrainConfig, "data": DataConfig, "sweep": SweepConfig}


def _build_section(cls, table: dict, section: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(table) - names
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
    kwargs = {}
    for key, val in table.items():
        if isinstance(val, list):
            val = tuple(val)
        kwargs[key] = val
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad [{section}] value: {exc}") from exc


def load_config(path=None, text=None) -> RunConfig:
    """Load a TOML run configuration; absent keys take the documented
    defaults, unknown keys are an error."""
    if text is None:
        if path is None:
            return RunConfig()
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    else:
        raw = tomllib.loads(text)
    unknown = set(raw) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    kwargs = {name: _build_section(cls, raw.get(name, {}), name)
              for name, cls in _SECTIONS.items()}
    return RunConfig(**kwargs)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return f'"{v}"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigError(f"cannot serialize config value {v!r}")


def dump_config(cfg: RunConfig) -> str:
    """Serialize the fully resolved configuration back to TOML."""
    out = []
    for section, obj in (("graph", cfg.graph), ("model", cfg.model),
                         ("train", cfg.train), ("data", cfg.data),
                         ("sweep", cfg.sweep)):
        out.append(f"[{section}]")
        for key, val in asdict(obj).items():
            if val is None:
                continue
            out.append(f"{key} = {_toml_value(val)}")
        out.append("")
    return "\n".join(out)
