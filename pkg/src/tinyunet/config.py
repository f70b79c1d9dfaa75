"""Run configuration from INI-style files.

Recognised sections and keys (all optional; defaults shown)::

    [data]
    count = 80            ; total scenes, split 72 train / 8 validation
    master_seed = 0
    wind_min = 2.0        ; m/s
    wind_max = 8.0

    [scene]
    width = 32
    length = 32
    oil_permittivity = 3.0
    water_temp = 20.0     ; deg C
    salinity = 35.0       ; ppt
    rms_height_coeff = 0.0001   ; m of rms height per m/s of wind
    noise_std = 0.01
    max_blobs = 3

    [model]
    B = 2
    F = 4
    seed = 0

    [train]
    epochs = 10
    batch_size = 16
    learning_rate = 0.0008
    seed = 0
    optimizer = adam      ; or sgd

    [bench]
    runs = 30
    warmup = 3
    batch = 1
    height = 32
    width = 32

    [metrics]
    absent = exclude      ; or zero
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace

from .scenegen import SceneConfig
from .trainer import TrainConfig
from .unet import ModelConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataSection:
    count: int = 80
    master_seed: int = 0
    wind_min: float = 2.0
    wind_max: float = 8.0


@dataclass
class ModelSection:
    B: int = 2
    F: int = 4
    seed: int = 0


@dataclass
class BenchSection:
    runs: int = 30
    warmup: int = 3
    batch: int = 1
    height: int = 32
    width: int = 32


@dataclass
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    scene: SceneConfig = field(default_factory=SceneConfig)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    bench: BenchSection = field(default_factory=BenchSection)
    absent: str = "exclude"

    @property
    def model_config(self):
        return ModelConfig(self.model.B, self.model.F)

    @property
    def wind_range(self):
        return (self.data.wind_min, self.data.wind_max)

    def with_seed(self, seed):
        """Same config with every seed replaced by ``seed``."""
        return replace(
            self,
            data=replace(self.data, master_seed=seed),
            model=replace(self.model, seed=seed),
            train=replace(self.train, seed=seed),
        )


_SECTIONS = {
    "data": DataSection,
    "scene": SceneConfig,
    "model": ModelSection,
    "train": TrainConfig,
    "bench": BenchSection,
}


def _coerce(cls, section):
    types = {f.name: f.type for f in fields(cls)}
    lower = {k.lower(): k for k in types}
    out = {}
    for key, raw in section.items():
        name = lower.get(key.lower())
        if name is None or name == "seed" and cls is SceneConfig:
            raise ConfigError(f"unknown key {key!r} in [{section.name}]")
        kind = types[name] if isinstance(types[name], str) else types[name].__name__
        try:
            if kind == "int":
                out[name] = int(raw)
            elif kind == "float":
                out[name] = float(raw)
            else:
                out[name] = raw.strip()
        except ValueError as exc:
            raise ConfigError(f"[{section.name}] {key}: {exc}") from exc
    return out


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    parts = {}
    for name in cp.sections():
        if name == "metrics":
            continue
        if name not in _SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
        cls = _SECTIONS[name]
        try:
            parts[name] = cls(**_coerce(cls, cp[name]))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{name}]: {exc}") from exc
    absent = cp.get("metrics", "absent", fallback="exclude").strip()
    if absent not in ("exclude", "zero"):
        raise ConfigError(f"[metrics] absent must be 'exclude' or 'zero', got {absent!r}")
    cfg = RunConfig(**parts, absent=absent)
    try:
        cfg.model_config
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
