"""Experiment configuration: YAML file -> validated dataclasses, with CLI overrides."""
from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from ..agent import TrainConfig
from ..traffic import ArrivalModel, LinearConfig


class ConfigError(ValueError):
    pass


@dataclass
class EnvConfig:
    p1: float = 0.25
    p2: float = 0.125
    n_intersections: int = 4
    travel_delay: int = 1
    queue_cap: typing.Optional[int] = None
    # cap used only while training (keeps exploration from drifting into huge queues)
    train_queue_cap: typing.Optional[int] = None

    def arrivals(self) -> ArrivalModel:
        return ArrivalModel(self.p1, self.p2)

    def cap(self, training: bool = False) -> typing.Optional[int]:
        return self.train_queue_cap if training and self.train_queue_cap is not None else self.queue_cap

    def linear(self, training: bool = False) -> LinearConfig:
        return LinearConfig(self.n_intersections, self.travel_delay, self.arrivals(), self.cap(training))


@dataclass
class SolveConfig:
    cap: int = 20
    gamma: float = 0.99
    tol: float = 1e-9
    max_iters: int = 100_000


@dataclass
class EvalConfig:
    seeds: list = field(default_factory=lambda: list(range(10)))
    horizon: int = 2000
    gamma: float = 0.99
    compare_bound: int = 10
    greenwave_horizon: int = 10_000
    min_chain: int = 3
    fixed_cycle_greens: list = field(default_factory=lambda: list(range(2, 11)))
    workers: int = 1


@dataclass
class ExperimentConfig:
    scenario: str = "single"
    out_dir: str = "runs/default"
    env: EnvConfig = field(default_factory=EnvConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    solve: SolveConfig = field(default_factory=SolveConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> ExperimentConfig:
        if self.scenario not in ("single", "linear"):
            raise ConfigError(f"scenario must be 'single' or 'linear', got {self.scenario!r}")
        try:
            self.env.arrivals()
            if self.scenario == "linear":
                self.env.linear(training=True)
            TrainConfig(**asdict(self.train))
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if self.train.warmup >= self.train.total_steps:
            raise ConfigError("train.warmup must be smaller than train.total_steps")
        if not 0 < self.solve.gamma < 1 or self.solve.tol <= 0 or self.solve.cap < 1:
            raise ConfigError("solve needs 0 < gamma < 1, tol > 0, cap >= 1")
        ev = self.eval
        if ev.horizon <= 0 or ev.greenwave_horizon <= 0:
            raise ConfigError("evaluation horizons must be positive")
        if not ev.seeds or ev.min_chain < 2 or ev.workers < 1 or ev.compare_bound < 0:
            raise ConfigError("eval needs seeds, min_chain >= 2, workers >= 1, compare_bound >= 0")
        if any(g < 1 for g in ev.fixed_cycle_greens):
            raise ConfigError("fixed-cycle green durations must be >= 1")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


def _check_type(value, tp, where: str):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, getattr(types, "UnionType", ())):
        for arg in typing.get_args(tp):
            try:
                return _check_type(value, arg, where)
            except ConfigError:
                pass
        raise ConfigError(f"{where}: {value!r} does not match {tp}")
    if tp is type(None):
        if value is None:
            return None
    elif tp is bool:
        if isinstance(value, bool):
            return value
    elif tp is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif tp is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        # YAML 1.1 reads "1e-5" (no dot) as a string
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError:
                pass
    elif tp is str:
        if isinstance(value, str):
            return value
    elif tp is list or origin is list:
        if isinstance(value, (list, tuple)):
            return list(value)
    else:
        raise ConfigError(f"{where}: unsupported field type {tp}")
    raise ConfigError(f"{where}: expected {getattr(tp, '__name__', tp)}, got {value!r}")


def from_dict(cls, data: dict, where: str = "config"):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        tp = hints[name]
        if dataclasses.is_dataclass(tp):
            kwargs[name] = from_dict(tp, value, f"{where}.{name}")
        else:
            kwargs[name] = _check_type(value, tp, f"{where}.{name}")
    try:
        return cls(**kwargs)
    except ValueError as e:
        raise ConfigError(f"{where}: {e}") from None


def parse_override(text: str) -> tuple[list[str], object]:
    """``train.total_steps=2000`` -> (["train", "total_steps"], 2000)."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like section.key=value")
    key, raw = text.split("=", 1)
    return key.strip().split("."), yaml.safe_load(raw)


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    for text in overrides:
        path, value = parse_override(text)
        node = data
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {text!r}: {part} is not a section")
        node[path[-1]] = value
    return data


def load_config(path=None, overrides=(), seed: int | None = None,
                out_dir: str | None = None) -> ExperimentConfig:
    """Read a YAML config (or defaults), apply ``section.key=value`` overrides and flags.

    Flags (``seed``, ``out_dir``) win over both the file and the overrides.
    """
    data = {}
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: invalid YAML ({e.__class__.__name__})") from None
    data = apply_overrides(data, list(overrides))
    if seed is not None:
        data.setdefault("train", {})["seed"] = seed
    if out_dir is not None:
        data["out_dir"] = out_dir
    return from_dict(ExperimentConfig, data).validate()


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
