"""Run configuration: YAML loading, validation and hashing."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import List, Optional, Union

import yaml

from .errors import ConfigError
from .finitekey import ProtocolParams
from .link_model import (DEFAULT_ETA_DET, DEFAULT_P1, DEFAULT_P_DARK, ChannelModel,
                         SourceModel)
from .photophysics import BASELINE_MODES, DEFAULT_BLINK_THRESHOLD, DEFAULT_SIDE_PEAKS

BUNDLED = {"fig4_default": "fig4_default.yaml"}


@dataclass(frozen=True)
class ProtocolSection:
    n: float = 1e6
    m: float = 5e5
    f_ec: float = 1.1
    e: float = 0.02
    eps_total: float = 1e-10
    eps_weights: Optional[List[float]] = None


@dataclass(frozen=True)
class SourceSection:
    p1: float = DEFAULT_P1
    p_m: float = 0.07
    r_s: float = 2e7
    g2_zero: Optional[float] = 0.07


@dataclass(frozen=True)
class ChannelSection:
    alpha_db_per_km: float = 3.5
    eta_det: float = DEFAULT_ETA_DET
    p_dark: float = DEFAULT_P_DARK


@dataclass(frozen=True)
class SweepSection:
    d_min_km: float = 0.0
    d_max_km: float = 15.0
    d_step_km: float = 0.02
    r_s_values: List[float] = field(default_factory=lambda: [1e7, 2e7, 4e7])


@dataclass(frozen=True)
class SimulationSection:
    distance_km: float = 2.0
    num_pulses: int = 10_000_000
    seed: Optional[int] = None
    block_size: int = 1 << 20
    workers: int = 1


@dataclass(frozen=True)
class EstimatorSection:
    g2_side_peaks: int = DEFAULT_SIDE_PEAKS
    g2_rep_period_ns: float = 25.0
    g2_shared_width: bool = False
    g2_baseline: str = "fit"
    saturation_weighting: str = "none"
    stability_window_s: float = 60.0
    blink_threshold: float = DEFAULT_BLINK_THRESHOLD


@dataclass(frozen=True)
class FlagSection:
    ec_leak_scaled_by_q: bool = False


@dataclass(frozen=True)
class OutputSection:
    dir: str = "out"
    plots: bool = False


_SECTIONS = {
    "protocol": ProtocolSection, "source": SourceSection, "channel": ChannelSection,
    "sweep": SweepSection, "simulation": SimulationSection,
    "estimators": EstimatorSection, "flags": FlagSection, "output": OutputSection,
}


def _coerce(where: str, ftype: str, value):
    optional = ftype.startswith("Optional[")
    if value is None:
        if optional:
            return None
        raise ConfigError(f"{where}: value required")
    base = ftype[len("Optional["):-1] if optional else ftype
    try:
        if base == "bool":
            if not isinstance(value, bool):
                raise TypeError("expected true/false")
            return value
        if base == "int":
            if isinstance(value, bool):
                raise TypeError("expected an integer")
            if isinstance(value, int):
                return value
            if isinstance(value, str):
                try:
                    return int(value)
                except ValueError:
                    pass
            f = float(value)
            if not f.is_integer():
                raise TypeError("expected an integer")
            return int(f)
        if base == "float":
            if isinstance(value, bool):
                raise TypeError("expected a number")
            f = float(value)
            if not math.isfinite(f):
                raise TypeError("expected a finite number")
            return f
        if base == "str":
            if not isinstance(value, str):
                raise TypeError("expected a string")
            return value
        if base == "List[float]":
            if not isinstance(value, (list, tuple)):
                raise TypeError("expected a list")
            return [_coerce(f"{where}[{i}]", "float", v) for i, v in enumerate(value)]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc} (got {value!r})") from None
    raise AssertionError(f"unhandled field type {ftype}")


def _section(name: str, cls, raw) -> object:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"section '{name}' must be a mapping")
    known = {f.name: f for f in fields(cls)}
    for key in raw:
        if key not in known:
            raise ConfigError(f"unknown key '{name}.{key}'")
    kw = {k: _coerce(f"{name}.{k}", str(known[k].type), v) for k, v in raw.items()}
    return cls(**kw)


@dataclass(frozen=True)
class RunConfig:
    protocol: ProtocolSection = field(default_factory=ProtocolSection)
    source: SourceSection = field(default_factory=SourceSection)
    channel: ChannelSection = field(default_factory=ChannelSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    simulation: SimulationSection = field(default_factory=SimulationSection)
    estimators: EstimatorSection = field(default_factory=EstimatorSection)
    flags: FlagSection = field(default_factory=FlagSection)
    output: OutputSection = field(default_factory=OutputSection)

    def __post_init__(self) -> None:
        try:
            self.protocol_params()
            self.source_model()
            self.channel_model()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        s = self.sweep
        if s.d_min_km < 0 or s.d_max_km < s.d_min_km or s.d_step_km <= 0:
            raise ConfigError("sweep: need 0 <= d_min_km <= d_max_km and d_step_km > 0")
        if not s.r_s_values or any(r <= 0 for r in s.r_s_values):
            raise ConfigError("sweep.r_s_values must be a non-empty list of positive rates")
        sim = self.simulation
        if sim.num_pulses < 10_000:
            raise ConfigError("simulation.num_pulses must be >= 10000")
        if sim.seed is not None and not (0 <= sim.seed < 2 ** 64):
            raise ConfigError("simulation.seed must be an unsigned 64-bit integer")
        if sim.distance_km < 0 or sim.block_size < 1 or sim.workers < 1:
            raise ConfigError("simulation: distance_km >= 0, block_size >= 1, workers >= 1")
        est = self.estimators
        if est.g2_baseline not in BASELINE_MODES:
            raise ConfigError(f"estimators.g2_baseline must be one of {BASELINE_MODES}")
        if est.saturation_weighting not in ("none", "poisson"):
            raise ConfigError("estimators.saturation_weighting must be 'none' or 'poisson'")
        if est.g2_side_peaks < 3 or est.g2_rep_period_ns <= 0:
            raise ConfigError("estimators: g2_side_peaks >= 3 and g2_rep_period_ns > 0")
        if est.stability_window_s <= 0 or est.blink_threshold <= 0:
            raise ConfigError("estimators: stability_window_s and blink_threshold must be > 0")

    # -- component models ----------------------------------------------------
    def protocol_params(self) -> ProtocolParams:
        p = self.protocol
        return ProtocolParams.from_total(p.n, p.m, p.f_ec, p.e, p.eps_total, p.eps_weights)

    def source_model(self, r_s: Optional[float] = None) -> SourceModel:
        s = self.source
        return SourceModel(p1=s.p1, p_m=s.p_m, r_s=s.r_s if r_s is None else r_s,
                           g2_zero=s.g2_zero)

    def channel_model(self, distance_km: float = 0.0) -> ChannelModel:
        c = self.channel
        return ChannelModel(c.alpha_db_per_km, distance_km, c.eta_det, c.p_dark)

    def distances(self) -> List[float]:
        s = self.sweep
        steps = int(math.floor((s.d_max_km - s.d_min_km) / s.d_step_km + 1e-9))
        return [round(s.d_min_km + i * s.d_step_km, 12) for i in range(steps + 1)]

    # -- serialisation -------------------------------------------------------
    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw) -> "RunConfig":
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            raise ConfigError("configuration must be a mapping of sections")
        for key in raw:
            if key not in _SECTIONS:
                raise ConfigError(f"unknown key '{key}'")
        return cls(**{k: _section(k, c, raw.get(k)) for k, c in _SECTIONS.items()})

    def config_hash(self) -> str:
        return config_hash(self.to_dict())

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def with_overrides(self, **sections) -> "RunConfig":
        """``cfg.with_overrides(simulation={"seed": 3})`` returns a new config."""
        d = self.to_dict()
        for name, values in sections.items():
            d[name].update(values)
        return RunConfig.from_dict(d)


def config_hash(config_dict: dict) -> str:
    # where results are written does not change them, so output is left out
    body = {k: v for k, v in config_dict.items() if k != "output"}
    blob = json.dumps(body, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def bundled_text(name: str = "fig4_default") -> str:
    if name not in BUNDLED:
        raise ConfigError(f"no bundled profile named '{name}'")
    return resources.files("spsqkd").joinpath("data", BUNDLED[name]).read_text()


def load_config(source: Union[str, Path, None] = None) -> RunConfig:
    """Load a YAML (or JSON) config file, or a bundled profile by name.

    ``None`` gives ``fig4_default``.  A report file is accepted too: its
    embedded ``config`` block is used.
    """
    if source is None or str(source) in BUNDLED:
        text = bundled_text("fig4_default" if source is None else str(source))
    else:
        text = Path(source).read_text()
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    if isinstance(raw, dict) and "schema_version" in raw and "config" in raw:
        raw = raw["config"]
    return RunConfig.from_dict(raw)
