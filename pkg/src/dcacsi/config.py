"""Flat ``key = value`` run configuration shared by every command."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace
from pathlib import Path

from . import channel_gen as cg
from . import preprocess as pp
from .scenet import SCEnetConfig
from .training import DEFAULT_RATE_WEIGHTS, TrainConfig


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


@dataclass(frozen=True)
class RunConfig:
    # data
    scenario: str = "outdoor"
    n_horizontal: int = 8
    n_vertical: int = 4
    spacing: float = 0.5
    count: int = 10000
    split: tuple = (4, 2, 1)
    # preprocessing
    n_f: int = 1024
    delta_f: float = 15e3
    dr_f: int = 12
    n_t: int = 32
    n_a: int = 32
    # model
    k: int = 32
    s: int = 4
    dense: bool = False
    refine_blocks: int = 5
    slope: float = 0.3
    # optimization
    epochs: int = 1000
    batch_size: int = 200
    lr: float = 1e-3
    lr_after: float = 5e-4
    lr_switch_epoch: int = 300
    rate_weights: tuple = DEFAULT_RATE_WEIGHTS
    squared: bool = True
    seed: int = 0

    # derived views -------------------------------------------------------

    @property
    def geometry(self) -> cg.ArrayGeometry:
        return cg.ArrayGeometry(self.n_horizontal, self.n_vertical, self.spacing)

    @property
    def pilots(self) -> pp.PilotConfig:
        return pp.PilotConfig(self.n_f, self.delta_f, self.dr_f)

    @property
    def scenario_params(self) -> cg.ScenarioParams:
        return cg.scenario_preset(self.scenario, self.n_f, self.delta_f, self.dr_f)

    @property
    def model(self) -> SCEnetConfig:
        return SCEnetConfig(k=self.k, n_t=self.n_t, s=self.s, dense=self.dense,
                            refine_blocks=self.refine_blocks, slope=self.slope)

    @property
    def train(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
                           lr_after=self.lr_after, lr_switch_epoch=self.lr_switch_epoch,
                           rate_weights=self.rate_weights, squared=self.squared,
                           seed=self.seed)

    def split_sizes(self) -> tuple[int, int, int]:
        return cg.split_sizes(self.count, self.split)

    # validation / identity ------------------------------------------------

    def validate(self) -> "RunConfig":
        """Check every cross-field constraint; raises :class:`ConfigError`."""
        try:
            geom = self.geometry
            pilots = self.pilots
            pp.TruncationConfig(self.n_t, self.s).validate(pilots)
            self.model
            cg.check_energy_cap(self.scenario_params, self.n_f, self.delta_f, self.dr_f, self.n_t)
            if not 0 < self.n_a <= geom.n_antennas:
                raise ValueError(f"n_a={self.n_a} outside 1..{geom.n_antennas}")
            pp.SegmentationConfig(self.k, self.n_a)
            if len(self.rate_weights) != self.s:
                raise ValueError(f"{len(self.rate_weights)} rate weights for S={self.s}")
            self.train
            if self.count < 1 or len(self.split) != 3 or min(self.split) < 0:
                raise ValueError("count must be positive and split must be three ratios")
            n_train = self.split_sizes()[0]
            segments = n_train * 2 * (self.n_a // self.k)
            if self.epochs and self.batch_size > segments:
                raise ValueError(f"batch_size={self.batch_size} exceeds the "
                                 f"{segments} training segments")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc
        return self

    def canonical(self) -> str:
        return "".join(f"{name} = {_format(getattr(self, name))}\n" for name in _KEYS)

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def with_overrides(self, overrides: dict[str, str]) -> "RunConfig":
        return replace(self, **{k: _parse_value(k, v) for k, v in overrides.items()})


_TYPES = {f.name: type(f.default) for f in fields(RunConfig)}
_KEYS = [f.name for f in fields(RunConfig)]


def _format(value) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, tuple):
        return ",".join(repr(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def _parse_value(key: str, text: str):
    if key not in _TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _TYPES[key]
    text = text.strip()
    try:
        if kind is bool:
            if text.lower() not in ("0", "1", "true", "false", "yes", "no"):
                raise ValueError(text)
            return text.lower() in ("1", "true", "yes")
        if kind is tuple:
            items = [x for x in text.replace(" ", "").split(",") if x]
            if key == "split":
                return tuple(int(x) for x in items)
            return tuple(_fraction(x) for x in items)
        return kind(text)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {text!r}") from exc


def _fraction(text: str) -> float:
    if "/" in text:
        num, den = text.split("/", 1)
        return float(num) / float(den)
    return float(text)


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Read ``key = value`` lines; ``#`` starts a comment. Unset keys keep defaults."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = value
    return (base or RunConfig()).with_overrides(values)


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())
