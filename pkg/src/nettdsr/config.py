"""Flat ``key = value`` experiment configs.

Every key has a default below; a config file may override any subset of them
and unknown keys are an error. Values are ints, floats, booleans, bare or
quoted strings, or bracketed comma-separated lists of those.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .metrics import RenderSpec
from .nett import NettConfig
from .regnet import PRESETS, NetworkSpec
from .sampling import SamplerSpec
from .scenes import NoiseSpec, SceneSpec
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, Any] = {
    "name": "desk",
    "seed": 0,
    # scenes and patches
    "dataset.height": 64,
    "dataset.width": 64,
    "dataset.cubes": [0, 2],
    "dataset.spheres": [0, 2],
    "dataset.planes": [0, 2],
    "dataset.size": [0.12, 0.3],
    "dataset.depth": [0.3, 0.7],
    "dataset.background": [0.8, 0.95],
    "dataset.background_tilt": 0.1,
    "dataset.max_tilt_deg": 60.0,
    "dataset.patch": 32,
    "dataset.stride": 32,
    "dataset.train_patches": 2000,
    "dataset.val_patches": 500,
    "dataset.split_fraction": 0.5,
    "dataset.test_scenes": 10,
    "sampler.factor": 4,
    "sampler.upsample": "pinv",
    # network
    "net.preset": "tiny-unet",
    "net.final_skip": True,
    "net.slope": 0.1,
    "net.widths": [8, 16, 32],
    # pre-training
    "train.scheme": 2,
    "train.epochs": 15,
    "train.batch_size": 16,
    "train.lr": 1e-3,
    "train.extras": [],
    "train.s_alpha": 0.001,
    "train.gt_noise_rule": "root",
    "noise.sigma": 0.0,
    "noise.ratio": 1.0,
    "noise.period": 0,
    "noise.target_rule": "none",
    # optimisation
    "nett.s": 1.0,
    "nett.alpha": 0.01,
    "nett.iterations": 30,
    "nett.regularizer": "auto",
    "nett.init": "pinv",
    "nett.record_every": 1,
    # evaluation
    "render.light": [0.0, 0.0, 1.0],
    "render.aspect": 1.0,
    "probe.scales": [1.0, 10.0, 100.0, 1000.0],
}


def parse_value(text: str) -> Any:
    text = text.strip()
    if text.startswith("[") and text.endswith("]"):
        inner = text[1:-1].strip()
        return [parse_value(part) for part in inner.split(",")] if inner else []
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    return text


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(format_value(v) for v in value) + "]"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, str):
        return f'"{value}"'
    return str(value)


def _coerce(key: str, value: Any) -> Any:
    default = DEFAULTS[key]
    try:
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise TypeError
            return value
        if isinstance(default, int):
            if isinstance(value, bool) or not isinstance(value, int):
                raise TypeError
            return value
        if isinstance(default, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise TypeError
            return float(value)
        if isinstance(default, list):
            return list(value) if isinstance(value, list) else [value]
        return str(value)
    except TypeError:
        raise ConfigError(f"config key {key!r}: bad value {value!r}") from None


@dataclass
class ExperimentConfig:
    values: dict[str, Any] = field(default_factory=lambda: dict(DEFAULTS))

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "ExperimentConfig":
        values = dict(DEFAULTS)
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
            key, val = (part.strip() for part in line.split("=", 1))
            if key not in DEFAULTS:
                raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
            values[key] = _coerce(key, parse_value(val))
        cfg = cls(values)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_text(text, str(path))

    def override(self, **kv) -> "ExperimentConfig":
        values = dict(self.values)
        for key, val in kv.items():
            key = key.replace("__", ".")
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = _coerce(key, val)
        cfg = ExperimentConfig(values)
        cfg.validate()
        return cfg

    def snapshot(self) -> str:
        return "".join(f"{k} = {format_value(v)}\n" for k, v in self.values.items())

    def validate(self) -> None:
        try:
            self.scene_spec()
            self.sampler()
            self.net_spec()
            self.train_config()
            self.nett_config()
            self.render_spec()
        except (ValueError, TypeError, KeyError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc

    # typed views -----------------------------------------------------------

    def _pair(self, key: str) -> tuple:
        v = self.values[key]
        if len(v) != 2:
            raise ConfigError(f"config key {key!r} needs two values")
        return tuple(v)

    def scene_spec(self) -> SceneSpec:
        v = self.values
        return SceneSpec(
            seed=v["seed"],
            height=v["dataset.height"],
            width=v["dataset.width"],
            cubes=tuple(int(c) for c in self._pair("dataset.cubes")),
            spheres=tuple(int(c) for c in self._pair("dataset.spheres")),
            planes=tuple(int(c) for c in self._pair("dataset.planes")),
            size=tuple(float(c) for c in self._pair("dataset.size")),
            depth=tuple(float(c) for c in self._pair("dataset.depth")),
            background=tuple(float(c) for c in self._pair("dataset.background")),
            background_tilt=v["dataset.background_tilt"],
            max_tilt_deg=v["dataset.max_tilt_deg"],
        )

    def sampler(self) -> SamplerSpec:
        return SamplerSpec(self.values["sampler.factor"], "box", self.values["sampler.upsample"])

    def net_spec(self) -> NetworkSpec:
        preset = self.values["net.preset"]
        if preset not in PRESETS:
            raise ConfigError(f"unknown network preset {preset!r}")
        widths = tuple(int(w) for w in self.values["net.widths"])
        return PRESETS[preset](self.values["net.final_skip"], self.values["net.slope"], widths)

    def noise(self) -> NoiseSpec:
        v = self.values
        return NoiseSpec(v["noise.sigma"], v["noise.ratio"], v["noise.period"], v["noise.target_rule"])

    def train_config(self) -> TrainConfig:
        v = self.values
        return TrainConfig(
            scheme=v["train.scheme"],
            epochs=v["train.epochs"],
            batch_size=v["train.batch_size"],
            lr=v["train.lr"],
            noise=self.noise(),
            extras=frozenset(str(e) for e in v["train.extras"]),
            seed=v["seed"],
            s_alpha=v["train.s_alpha"],
            gt_noise_rule=v["train.gt_noise_rule"],
        )

    def regularizer(self) -> str:
        kind = self.values["nett.regularizer"]
        if kind == "auto":
            return "scheme1_norm" if self.values["train.scheme"] == 1 else "scheme2_residual"
        return kind

    def nett_config(self) -> NettConfig:
        v = self.values
        return NettConfig(
            s=v["nett.s"],
            alpha=v["nett.alpha"],
            iterations=v["nett.iterations"],
            regularizer=self.regularizer(),
            init=v["nett.init"],
            record_every=v["nett.record_every"],
            factor=v["sampler.factor"],
        )

    def render_spec(self) -> RenderSpec:
        light = self.values["render.light"]
        if len(light) != 3:
            raise ConfigError("render.light needs three components")
        return RenderSpec(tuple(float(c) for c in light), self.values["render.aspect"])
