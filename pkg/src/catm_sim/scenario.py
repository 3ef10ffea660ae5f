"""Scenario schema, validation and file loading.

A Scenario is a plain nested dataclass tree; YAML or JSON files map onto
it field by field.  Unknown keys anywhere in the tree are configuration
errors reported with their full field path, before any simulation work.
"""

from __future__ import annotations

import dataclasses
import json
import types
import typing
from dataclasses import dataclass, field

import yaml

from .errors import ConfigError


@dataclass(frozen=True)
class LayoutSpec:
    rings: int = 0
    isd_m: float = 500.0
    sectors_per_site: int = 1
    min_drop_distance_m: float = 35.0
    shadow_sigma_db: float = 8.0
    enb_height_m: float = 30.0
    ue_height_m: float = 1.5
    body_loss_db: float = 1.0
    ue_antenna_gain_db: float = -3.0
    wraparound: bool = False


@dataclass(frozen=True)
class RadioSpec:
    bandwidth_prbs: int = 50
    narrowband: str | int = "auto"
    enb_total_power_dbm: float = 46.0   # 2 x 20 W
    enb_noise_figure_db: float = 5.0
    ue_noise_figure_db: float = 9.0

    def __post_init__(self):
        if isinstance(self.narrowband, str) and self.narrowband != "auto":
            raise ConfigError(
                f"narrowband must be 'auto' or an index, got {self.narrowband!r}")


@dataclass(frozen=True)
class LegacySpec:
    """Interference regime of the legacy LTE traffic around the narrowband.

    reserved: the narrowband is kept clear of legacy allocations;
    shared: legacy load spills onto the narrowband PRBs, adding a static
    expected-value interference floor on both links.
    """
    mode: str = "reserved"
    dl_load: float = 0.5
    ul_noise_rise_db: float = 3.0

    def __post_init__(self):
        if self.mode not in ("reserved", "shared"):
            raise ConfigError(f"legacy mode must be reserved|shared, got {self.mode!r}")
        if not 0.0 <= self.dl_load <= 1.0:
            raise ConfigError(f"legacy dl_load must be in [0,1], got {self.dl_load}")


@dataclass(frozen=True)
class SchedulerSpec:
    ibler_target: float = 0.10
    olla_step_up_db: float = 0.1
    initial_mcs: int = 5
    max_attempts: int = 4
    max_tbs_bits: int = 1000
    full_duplex: bool = False
    cqi_period_ms: int | None = None    # None = no periodic CQI

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ConfigError(f"max_attempts must be >= 1, got {self.max_attempts}")
        if self.cqi_period_ms is not None and self.cqi_period_ms not in (20, 40, 80):
            raise ConfigError(
                f"cqi_period_ms must be one of 20|40|80|null, got {self.cqi_period_ms}")


@dataclass(frozen=True)
class PowerSpec:
    mode: str = "olpc"
    p0_dbm: float = -100.0
    alpha: float = 1.0
    p_max_dbm: float = 20.0

    def __post_init__(self):
        if self.mode not in ("olpc", "clpc"):
            raise ConfigError(f"power mode must be olpc|clpc, got {self.mode!r}")


@dataclass(frozen=True)
class RachSpec:
    response_delay_ms: int = 12
    msg_exchange_ms: int = 15
    backoff_ms: int = 20
    max_attempts: int = 10
    detection_prob: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.detection_prob <= 1.0:
            raise ConfigError(
                f"detection_prob must be in (0,1], got {self.detection_prob}")


@dataclass(frozen=True)
class DrxSpec:
    cycle_ms: int = 1280
    on_duration_ms: int = 10


@dataclass(frozen=True)
class UeSpec:
    dormancy_timer_ms: int = 2000
    drx: DrxSpec | None = None
    coupling_loss_db: float | None = None   # overrides the drop's serving CL
    forced_rl_data: int | None = None       # pin the data repetition length
    rl_mpdcch: int | None = None            # pin the control repetition length
    rl_pucch: int | None = None             # pin the feedback repetition length

    def __post_init__(self):
        for name in ("forced_rl_data", "rl_mpdcch", "rl_pucch"):
            v = getattr(self, name)
            if v is not None and (v < 1 or v & (v - 1)):
                raise ConfigError(
                    f"{name} must be a power of two >= 1, got {v}")


@dataclass(frozen=True)
class TrafficGroupSpec:
    kind: str = "bursty"            # bursty | voip | full_buffer
    count: int = 1
    direction: str = "ul"           # bursty / full_buffer only
    packet_bits: int = 1000
    mean_interarrival_ms: float = 10000.0
    min_interarrival_ms: float = 2500.0
    budget_ms: int | None = None

    def __post_init__(self):
        if self.kind not in ("bursty", "voip", "full_buffer"):
            raise ConfigError(
                f"traffic kind must be bursty|voip|full_buffer, got {self.kind!r}")
        if self.direction not in ("ul", "dl"):
            raise ConfigError(f"direction must be ul|dl, got {self.direction!r}")
        if self.count < 1:
            raise ConfigError(f"traffic group count must be >= 1, got {self.count}")


@dataclass(frozen=True)
class OutputSpec:
    trace: bool = False


@dataclass(frozen=True)
class Scenario:
    name: str = "scenario"
    seed: int = 1
    duration_ms: int = 10000
    layout: LayoutSpec = field(default_factory=LayoutSpec)
    radio: RadioSpec = field(default_factory=RadioSpec)
    legacy: LegacySpec = field(default_factory=LegacySpec)
    scheduler: SchedulerSpec = field(default_factory=SchedulerSpec)
    power: PowerSpec = field(default_factory=PowerSpec)
    rach: RachSpec = field(default_factory=RachSpec)
    ue: UeSpec = field(default_factory=UeSpec)
    traffic: tuple[TrafficGroupSpec, ...] = (TrafficGroupSpec(),)
    outputs: OutputSpec = field(default_factory=OutputSpec)

    def __post_init__(self):
        if self.duration_ms < 0:
            raise ConfigError(f"duration_ms must be >= 0, got {self.duration_ms}")
        if not self.traffic:
            raise ConfigError("traffic must contain at least one group")

    @property
    def n_ues(self) -> int:
        return sum(g.count for g in self.traffic)


_NONE_TYPE = type(None)


def _coerce(tp, value, path: str):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = typing.get_args(tp)
        if value is None:
            if _NONE_TYPE in args:
                return None
            raise ConfigError(f"{path}: null not allowed")
        last_err = None
        for arg in args:
            if arg is _NONE_TYPE:
                continue
            try:
                return _coerce(arg, value, path)
            except ConfigError as e:
                last_err = e
        raise last_err if last_err else ConfigError(f"{path}: no matching type")
    if dataclasses.is_dataclass(tp):
        return _from_dict(tp, value, path)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list")
        elem = typing.get_args(tp)[0]
        return tuple(_coerce(elem, v, f"{path}[{i}]") for i, v in enumerate(value))
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{path}: unsupported field type {tp!r}")


def _from_dict(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"unknown key '{path}.{key}'")
    kwargs = {name: _coerce(hints[name], data[name], f"{path}.{name}")
              for name in data}
    try:
        return cls(**kwargs)
    except ConfigError as e:
        raise ConfigError(f"{path}: {e}") from None


def scenario_from_dict(data: dict) -> Scenario:
    return _from_dict(Scenario, data, "scenario")


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if data is None:
        data = {}
    return scenario_from_dict(data)


def scenario_to_dict(sc: Scenario) -> dict:
    return dataclasses.asdict(sc)


def dump_scenario(sc: Scenario, path) -> None:
    with open(path, "w") as fh:
        json.dump(scenario_to_dict(sc), fh, indent=2, sort_keys=True)
        fh.write("\n")
