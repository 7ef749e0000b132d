"""Experiment configuration: a flat ``key = value`` text format with section prefixes.

Grammar, one entry per line::

    # comment
    method = continuous
    seed = 0
    scene.n_gaussians = 50
    train.total_iters = 6000

Sections: ``scene.`` (generator), ``init.`` (starting cloud), ``fixer.``,
``train.``, ``loss.``, ``ape.``, ``eval.``. Top-level keys are ``method``,
``seed``, ``views`` (train-view count), ``out`` and ``scene_path`` (load a
saved scene instead of generating one). Unknown keys are rejected. Tuples are
written comma-separated.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

from .ape import ApeConfig
from .scene import InitSpec, SceneSpec
from .trainer import TrainConfig

METHODS = ("baseline", "interval", "continuous", "continuous+ape")
FIXER_KINDS = ("oracle", "identity", "blur")
VIEW_COUNTS = (3, 6, 9)

# set by ``method``, so not exposed as keys
_DERIVED = {"train.distill_mode", "ape.enabled", "train.seed", "train.loss", "scene.n_train"}


class ConfigError(ValueError):
    pass


@dataclass
class FixerSpec:
    kind: str = "oracle"
    gamma: float = 0.8
    knee: float = 14.0
    sigma: float = 1.0

    def kwargs(self) -> dict:
        if self.kind == "oracle":
            return {"gamma": self.gamma, "knee": self.knee}
        if self.kind == "blur":
            return {"sigma": self.sigma}
        return {}


@dataclass
class EvalSpec:
    tsed_threshold: float = 2.0
    tsed_steps: int = 4  # frames interpolated between consecutive test views
    tsed_patch: int = 3
    tsed_search: int = 4
    save_renders: bool = True
    figures: bool = True


@dataclass
class ExperimentConfig:
    method: str = "continuous"
    seed: int = 0
    views: int = 3
    out: str = "runs/experiment"
    scene_path: str = ""
    scene: SceneSpec = field(default_factory=SceneSpec)
    init: InitSpec = field(default_factory=InitSpec)
    fixer: FixerSpec = field(default_factory=FixerSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    ape: ApeConfig = field(default_factory=ApeConfig)
    eval: EvalSpec = field(default_factory=EvalSpec)

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {', '.join(METHODS)}, got {self.method!r}")
        if self.views not in VIEW_COUNTS:
            raise ConfigError(f"views must be one of {VIEW_COUNTS}, got {self.views}")
        if self.fixer.kind not in FIXER_KINDS:
            raise ConfigError(f"fixer.kind must be one of {FIXER_KINDS}")
        if self.eval.tsed_steps < 1 or self.eval.tsed_threshold <= 0:
            raise ConfigError("eval.tsed_steps must be >= 1 and eval.tsed_threshold > 0")
        try:
            self.scene.validate()
            self.train.validate()
            self.ape.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.init.mode not in ("noisy-subset", "random"):
            raise ConfigError(f"unknown init.mode {self.init.mode!r}")

    def resolved(self) -> "ExperimentConfig":
        """Copy with the method's switches and the shared seed pushed into the sections."""
        cfg = dataclasses.replace(self)
        cfg.scene = dataclasses.replace(self.scene, n_train=self.views)
        cfg.train = dataclasses.replace(self.train, seed=self.seed, distill_mode={
            "baseline": "off", "interval": "interval", "continuous": "continuous", "continuous+ape": "continuous",
        }[self.method])
        cfg.ape = dataclasses.replace(self.ape, enabled=self.method == "continuous+ape")
        return cfg


def _sections(cfg: ExperimentConfig) -> dict:
    return {"scene": cfg.scene, "init": cfg.init, "fixer": cfg.fixer, "train": cfg.train,
            "loss": cfg.train.loss, "ape": cfg.ape, "eval": cfg.eval}


_TOP = ("method", "seed", "views", "out", "scene_path")


def _convert(raw: str, current, key: str):
    try:
        if isinstance(current, bool):
            low = raw.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(raw)
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            return tuple(float(v) for v in raw.split(","))
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    if isinstance(v, tuple):
        return ",".join(_format(float(x)) for x in v)
    return str(v)


def set_value(cfg: ExperimentConfig, key: str, raw: str) -> None:
    if key in _TOP:
        setattr(cfg, key, _convert(raw, getattr(cfg, key), key))
        return
    section, _, name = key.partition(".")
    sections = _sections(cfg)
    if section not in sections or not name or key in _DERIVED:
        raise ConfigError(f"unknown config key {key!r}")
    target = sections[section]
    names = {f.name for f in dataclasses.fields(target)}
    if name not in names:
        raise ConfigError(f"unknown config key {key!r}")
    setattr(target, name, _convert(raw, getattr(target, name), key))


def parse_config(text: str, base: ExperimentConfig | None = None, source: str = "<config>") -> ExperimentConfig:
    cfg = base or ExperimentConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        try:
            set_value(cfg, key, raw)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    return cfg


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from None
    return parse_config(text, source=str(p))


def dump_config(cfg: ExperimentConfig) -> str:
    """Every key with its effective value; parsing the result reproduces ``cfg``."""
    lines = [f"{k} = {_format(getattr(cfg, k))}" for k in _TOP]
    for section, obj in _sections(cfg).items():
        for f in dataclasses.fields(obj):
            key = f"{section}.{f.name}"
            if key in _DERIVED:
                continue
            lines.append(f"{key} = {_format(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"
