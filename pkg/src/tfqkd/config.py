"""INI experiment configuration with field-level validation and derived seeds.

Each section maps onto one dataclass; unknown keys and unparsable values
raise :class:`ConfigError` naming the offending ``[section] key``.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import math
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .channel import ChannelParams
from .decoy import CutoffConfig
from .encoding import PATTERN_LENGTH, ProtocolParams
from .keyrates import FiniteSizeParams
from .stabilisation import D1_PHOTON_RATE, D2_PHOTON_RATE, DriftModel, LoopConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunOptions:
    seed: int = 0
    n0: int = 2_000_000_000
    regime: str = "asymptotic"
    output_dir: str = "out"
    pattern_length: int = PATTERN_LENGTH
    method: str = "aggregated"
    shards: int = 1
    with_events: bool = False


@dataclass
class NoiseOptions:
    """Where the residual phase noise of the simulation comes from.

    ``source = fixed`` uses ``sigma_rad``; ``lock`` runs the stabilisation
    simulation and uses its locking error; ``ledger`` calibrates channel,
    weak fluxes and noise against one column of ``ledger_path``.
    """

    source: str = "fixed"
    sigma_rad: float = 0.0
    ledger_path: str = ""
    ledger_column_km: float = float("nan")
    target_intensity: str = "u"


@dataclass
class KeyrateOptions:
    f_ec: Optional[float] = None
    use_reported: bool = True
    classify_by: str = "bob"
    literal_leak: bool = False
    cal_method: str = "lp"
    margin_sigma: float = 0.0


@dataclass
class StabilisationOptions:
    duration_s: float = 10.0
    settle_s: float = 0.5
    free_window_s: Optional[float] = None
    residual_window_s: Optional[float] = None
    photon_rate_at_d2: float = D2_PHOTON_RATE
    photon_rate_at_d1: float = D1_PHOTON_RATE
    auto_tune: bool = False
    trace_decimation: int = 100


@dataclass
class TwccOptions:
    classify_by: str = "bob"
    map_width: int = 128
    map_bits: int = 128 * 128


def _default_channel() -> ChannelParams:
    return ChannelParams(length_km=184.351)


def _default_fast() -> LoopConfig:
    return LoopConfig.fast_default()


def _default_slow() -> LoopConfig:
    return LoopConfig.slow_default()


@dataclass
class ExperimentConfig:
    run: RunOptions = field(default_factory=RunOptions)
    channel: ChannelParams = field(default_factory=_default_channel)
    protocol: ProtocolParams = field(default_factory=ProtocolParams)
    noise: NoiseOptions = field(default_factory=NoiseOptions)
    keyrate: KeyrateOptions = field(default_factory=KeyrateOptions)
    finite: FiniteSizeParams = field(default_factory=FiniteSizeParams)
    cutoff: CutoffConfig = field(default_factory=CutoffConfig)
    drift: DriftModel = field(default_factory=DriftModel.short_acquisition)
    fast_loop: LoopConfig = field(default_factory=_default_fast)
    slow_loop: LoopConfig = field(default_factory=_default_slow)
    stabilisation: StabilisationOptions = field(default_factory=StabilisationOptions)
    twcc: TwccOptions = field(default_factory=TwccOptions)

    def seed_for(self, stage: str) -> int:
        return derive_seed(self.run.seed, stage)

    @property
    def output_dir(self) -> Path:
        return Path(self.run.output_dir)


SECTIONS = [f.name for f in dataclasses.fields(ExperimentConfig)]


def derive_seed(seed: int, stage: str) -> int:
    """Child seed of one pipeline stage: a SeedSequence keyed by the stage name's digest."""
    key = int.from_bytes(hashlib.sha256(stage.encode()).digest()[:4], "little")
    return int(np.random.SeedSequence(entropy=int(seed), spawn_key=(key,)).generate_state(1, np.uint64)[0])


def _field_type(cls, name):
    hints = typing.get_type_hints(cls)
    return hints.get(name, str)


def _parse_value(section: str, key: str, raw: str, tp):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    optional = origin is typing.Union and type(None) in args
    if optional:
        if raw.strip().lower() in ("", "none"):
            return None
        tp = next(a for a in args if a is not type(None))
    try:
        if tp is bool:
            v = raw.strip().lower()
            if v in ("1", "true", "yes", "on"):
                return True
            if v in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if tp is int:
            return int(float(raw)) if "e" in raw.lower() else int(raw)
        if tp is float:
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {getattr(tp, '__name__', tp)}") from None


def _apply(section: str, obj, items: dict):
    cls = type(obj)
    names = {f.name for f in dataclasses.fields(cls)}
    kw = {}
    for key, raw in items.items():
        if key not in names:
            raise ConfigError(f"[{section}] {key}: unknown key")
        kw[key] = _parse_value(section, key, raw, _field_type(cls, key))
    try:
        return dataclasses.replace(obj, **kw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def _validate(cfg: ExperimentConfig) -> None:
    if cfg.run.regime not in ("asymptotic", "finite"):
        raise ConfigError("[run] regime: must be 'asymptotic' or 'finite'")
    if cfg.run.n0 < 0:
        raise ConfigError("[run] n0: must be non-negative")
    if cfg.run.shards < 1:
        raise ConfigError("[run] shards: must be at least 1")
    if cfg.noise.source not in ("fixed", "lock", "ledger"):
        raise ConfigError("[noise] source: must be 'fixed', 'lock' or 'ledger'")
    if cfg.noise.source == "ledger":
        if not cfg.noise.ledger_path:
            raise ConfigError("[noise] ledger_path: required when source = ledger")
        if math.isnan(cfg.noise.ledger_column_km):
            raise ConfigError("[noise] ledger_column_km: required when source = ledger")
    if cfg.noise.sigma_rad < 0:
        raise ConfigError("[noise] sigma_rad: must be non-negative")
    for sec, opt in (("keyrate", cfg.keyrate), ("twcc", cfg.twcc)):
        if opt.classify_by not in ("alice", "bob"):
            raise ConfigError(f"[{sec}] classify_by: must be 'alice' or 'bob'")
    if cfg.keyrate.cal_method not in ("lp", "analytic"):
        raise ConfigError("[keyrate] cal_method: must be 'lp' or 'analytic'")
    if cfg.twcc.map_width <= 0:
        raise ConfigError("[twcc] map_width: must be positive")


def parse_config(text: str, base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    cfg = base or ExperimentConfig()
    kw = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"[{section}]: unknown section")
        kw[section] = _apply(section, getattr(cfg, section), dict(parser.items(section)))
    cfg = dataclasses.replace(cfg, **kw)
    _validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_config(cfg: ExperimentConfig) -> str:
    """Every section and field with its current value, in INI form."""
    lines = []
    for section in SECTIONS:
        obj = getattr(cfg, section)
        lines.append(f"[{section}]")
        for f in dataclasses.fields(obj):
            lines.append(f"{f.name} = {_fmt(getattr(obj, f.name))}")
        lines.append("")
    return "\n".join(lines)
