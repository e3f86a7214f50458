"""Experiment configuration as flat ``key = value`` text with ``#`` comments."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .ttnn import STRATEGIES

METHODS = ("gold-standard", "random", "over", "under", "logq", "cadc", "cadc-mlp")
PRETRAINED_METHODS = ("cadc", "cadc-mlp")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    ratings: str = ""
    format: str = "movielens-dat"
    users: str | None = None
    items: str | None = None
    schema: str = "movielens"
    name: str = ""
    method: str = "cadc"
    strategy: str | None = None
    ratio: float = 0.1
    epochs: int = 100
    mf_epochs: int = 100
    emb: int = 96
    tower_hidden: tuple = (128,)
    batch_size: int = 1024
    k_neg: int = 1
    lr: float = 1e-3
    mf_lr: float = 1e-3
    seed: int = 0
    out: str = "runs"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.strategy is not None:
            if self.method not in PRETRAINED_METHODS:
                raise ConfigError(f"strategy only applies to {PRETRAINED_METHODS}, not {self.method!r}")
            if self.strategy not in STRATEGIES or self.strategy == "random":
                raise ConfigError(f"invalid strategy {self.strategy!r} for a pretrained method")
        if not 0.0 < self.ratio <= 1.0:
            raise ConfigError(f"ratio must be in (0, 1], got {self.ratio}")
        if self.format not in ("movielens-dat", "tsv"):
            raise ConfigError(f"unknown format {self.format!r}")
        if self.schema not in ("movielens", "none"):
            raise ConfigError(f"unknown feature schema {self.schema!r}")
        for key in ("epochs", "mf_epochs", "emb", "batch_size", "k_neg"):
            if getattr(self, key) < (0 if "epochs" in key else 1):
                raise ConfigError(f"{key} out of range: {getattr(self, key)}")

    @property
    def effective_strategy(self) -> str:
        if self.method in PRETRAINED_METHODS:
            return self.strategy or "init-frz"
        return "random"

    @property
    def dataset_label(self) -> str:
        return self.name or Path(self.ratings).parent.name or Path(self.ratings).stem

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def dumps(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if value is None:
                continue
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"


def _coerce(name: str, raw: str):
    field_type = {f.name: f.type for f in dataclasses.fields(RunConfig)}[name]
    if field_type == "int":
        return int(raw)
    if field_type == "float":
        return float(raw)
    if field_type == "tuple":
        return tuple(int(x) for x in raw.split(",") if x.strip())
    return raw


def parse_config(text: str, **overrides) -> RunConfig:
    values = {}
    known = {f.name for f in dataclasses.fields(RunConfig)}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = _coerce(key, raw)
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value for {key}: {raw!r}") from None
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)


def load_config(path, **overrides) -> RunConfig:
    return parse_config(Path(path).read_text(), **overrides)
