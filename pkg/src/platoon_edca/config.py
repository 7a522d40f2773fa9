"""Scenario parameters and the TOML configuration loader.

Every parameter has a default taken from the reference highway scenario
(9 platoons of 8 vehicles on a four-lane road, 802.11p control channel
settings, 20 pkt/s per access category).  A config file only needs to list
the values it overrides::

    [scenario]
    t_end = 40.0

    [traffic]
    lambda0 = [[0.0, 20.0], [10.0, 50.0]]   # piecewise-constant schedule

Unknown sections or keys are rejected rather than ignored.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib


class ConfigError(ValueError):
    """Invalid configuration value or malformed config file."""

    def __init__(self, message: str, field_name: str | None = None):
        super().__init__(message)
        self.field_name = field_name


def _require(cond: bool, field_name: str, message: str) -> None:
    if not cond:
        raise ConfigError(f"{field_name}: {message}", field_name)


@dataclass(frozen=True)
class IdmParams:
    """Intelligent Driver Model parameters (SI units)."""

    a_max: float = 1.4
    b_comfort: float = 2.0
    s0: float = 3.0
    v0: float = 30.0
    headway_member: float = 1.5
    headway_leader: float = 2.0
    vehicle_length: float = 3.0

    def __post_init__(self):
        for f in dataclasses.fields(self):
            _require(getattr(self, f.name) > 0, f"idm.{f.name}", "must be > 0")
        _require(self.headway_leader >= self.headway_member, "idm.headway_leader",
                 "must be >= headway_member")


@dataclass(frozen=True)
class DisturbanceProfile:
    """Trapezoidal speed dip of the disturbed vehicle.

    Decelerate from ``v_stable`` to ``v_low`` over ``t_decel``, hold for
    ``t_hold``, then accelerate back over ``t_accel``.  ``v_low == v_stable``
    is accepted and means no disturbance.
    """

    v_stable: float = 25.0
    v_low: float = 5.0
    t0: float = 0.0
    t_decel: float = 10.0
    t_hold: float = 10.0
    t_accel: float = 10.0

    def __post_init__(self):
        _require(self.v_low > 0, "disturbance.v_low", "must be > 0")
        _require(self.v_low <= self.v_stable, "disturbance.v_low", "must be <= v_stable")
        for name in ("t_decel", "t_hold", "t_accel"):
            _require(getattr(self, name) > 0, f"disturbance.{name}", "must be > 0")

    @property
    def t1(self) -> float:
        return self.t0 + self.t_decel

    @property
    def t2(self) -> float:
        return self.t1 + self.t_hold

    @property
    def tf(self) -> float:
        return self.t2 + self.t_accel


@dataclass(frozen=True)
class EdcaParams:
    """EDCA contention parameters for the two access categories."""

    cw0_min: int = 3
    cw1_min: int = 3
    cw1_max: int = 7
    aifsn0: int = 2
    aifsn1: int = 3
    retry_limit: int = 2
    slot_time: float = 13e-6
    sifs: float = 32e-6

    def __post_init__(self):
        _require(self.cw0_min >= 0, "edca.cw0_min", "must be >= 0")
        _require(self.cw1_min >= 0, "edca.cw1_min", "must be >= 0")
        _require(self.cw1_max >= self.cw1_min, "edca.cw1_max", "must be >= cw1_min")
        ratio = (self.cw1_max + 1) / (self.cw1_min + 1)
        _require(ratio == 2 ** round(math.log2(ratio)), "edca.cw1_max",
                 "(cw1_max+1)/(cw1_min+1) must be a power of two")
        _require(self.aifsn1 >= self.aifsn0, "edca.aifsn1", "must be >= aifsn0")
        _require(self.retry_limit >= self.backoff_stages, "edca.retry_limit",
                 "must be >= number of window doublings")
        _require(self.slot_time > 0, "edca.slot_time", "must be > 0")
        _require(self.sifs >= 0, "edca.sifs", "must be >= 0")

    @property
    def w0(self) -> int:
        return self.cw0_min + 1

    @property
    def backoff_stages(self) -> int:
        """Number of retransmissions after which the AC1 window stops doubling."""
        return round(math.log2((self.cw1_max + 1) / (self.cw1_min + 1)))

    @property
    def extra_aifs_slots(self) -> int:
        return self.aifsn1 - self.aifsn0

    def w1(self, r: int) -> int:
        """AC1 contention window after ``r`` retransmissions."""
        return (self.cw1_min + 1) * 2 ** min(r, self.backoff_stages)

    def aifs(self, q: int) -> float:
        aifsn = (self.aifsn0, self.aifsn1)[q]
        return aifsn * self.slot_time + self.sifs


@dataclass(frozen=True)
class FrameParams:
    phy_header_bits: float = 48.0
    mac_header_bits: float = 112.0
    payload_bits: float = 200.0
    basic_rate: float = 1e6
    data_rate: float = 6e6
    propagation_delay: float = 2e-6

    def __post_init__(self):
        _require(self.basic_rate > 0, "frame.basic_rate", "must be > 0")
        _require(self.data_rate > 0, "frame.data_rate", "must be > 0")
        for name in ("phy_header_bits", "mac_header_bits", "payload_bits", "propagation_delay"):
            _require(getattr(self, name) >= 0, f"frame.{name}", "must be >= 0")


@dataclass(frozen=True)
class RateSchedule:
    """Piecewise-constant arrival rate: ``steps`` holds (start time, rate) pairs."""

    steps: tuple[tuple[float, float], ...] = ((0.0, 20.0),)

    def __post_init__(self):
        starts = [s for s, _ in self.steps]
        _require(len(self.steps) > 0, "traffic", "empty rate schedule")
        _require(starts == sorted(starts), "traffic", "schedule times must increase")
        _require(all(r >= 0 for _, r in self.steps), "traffic", "rates must be >= 0")

    @classmethod
    def constant(cls, rate: float) -> RateSchedule:
        return cls(((0.0, float(rate)),))

    def at(self, t: float) -> float:
        rate = self.steps[0][1]
        for start, r in self.steps:
            if t + 1e-12 >= start:
                rate = r
            else:
                break
        return rate


@dataclass(frozen=True)
class ScenarioConfig:
    """Complete description of one run (analysis or simulation)."""

    n_platoons: int = 9
    platoon_size: int = 8
    n_lanes: int = 4
    lane_width: float = 3.5
    lane_offsets: tuple[float, ...] = (0.0, 0.0, 0.0, 0.0)
    transmission_range: float = 500.0
    disturbed: tuple[int, int] = (2, 1)
    target: tuple[int, int] = (2, 1)
    freeze_motion: bool = False
    dt: float = 0.01
    t_start: float = 0.0
    t_end: float = 70.0
    idm: IdmParams = field(default_factory=IdmParams)
    disturbance: DisturbanceProfile = field(default_factory=DisturbanceProfile)
    edca: EdcaParams = field(default_factory=EdcaParams)
    frame: FrameParams = field(default_factory=FrameParams)
    lambda0: RateSchedule = field(default_factory=RateSchedule)
    lambda1: RateSchedule = field(default_factory=RateSchedule)
    # analytical solver knobs
    fp_tolerance: float = 1e-6
    fp_max_iter: int = 10_000
    klb_degree: int = 6
    klb_rho_max: float = 0.9
    initial_queue: str = "steady"
    # simulator knobs
    sim_window: float = 1.0
    ac1_phase: str = "staggered"

    def __post_init__(self):
        _require(self.n_platoons >= 1, "scenario.n_platoons", "must be >= 1")
        _require(self.platoon_size >= 1, "scenario.platoon_size", "must be >= 1")
        _require(self.n_lanes >= 1, "scenario.n_lanes", "must be >= 1")
        _require(len(self.lane_offsets) == self.n_lanes, "scenario.lane_offsets",
                 "needs one entry per lane")
        _require(self.transmission_range > 0, "scenario.transmission_range", "must be > 0")
        for name in ("disturbed", "target"):
            i, j = getattr(self, name)
            _require(1 <= i <= self.n_platoons and 1 <= j <= self.platoon_size,
                     f"scenario.{name}", "vehicle index out of range")
        _require(self.dt > 0, "scenario.dt", "must be > 0")
        _require(self.t_end > self.t_start, "scenario.t_end", "must be > t_start")
        _require(self.fp_tolerance > 0, "solver.fp_tolerance", "must be > 0")
        _require(self.fp_max_iter >= 1, "solver.fp_max_iter", "must be >= 1")
        _require(self.klb_degree >= 1, "solver.klb_degree", "must be >= 1")
        _require(0 < self.klb_rho_max < 1, "solver.klb_rho_max", "must be in (0, 1)")
        _require(self.initial_queue in ("steady", "empty"), "solver.initial_queue",
                 "must be 'steady' or 'empty'")
        _require(self.sim_window > 0, "sim.window", "must be > 0")
        _require(self.ac1_phase in ("staggered", "random"), "sim.ac1_phase",
                 "must be 'staggered' or 'random'")

    @property
    def n_vehicles(self) -> int:
        return self.n_platoons * self.platoon_size

    @property
    def n_steps(self) -> int:
        return int(round((self.t_end - self.t_start) / self.dt))

    def vehicle_index(self, ij: tuple[int, int]) -> int:
        """Flattened 0-based index of 1-based (platoon, member)."""
        i, j = ij
        return (i - 1) * self.platoon_size + (j - 1)

    @property
    def target_index(self) -> int:
        return self.vehicle_index(self.target)

    @property
    def disturbed_index(self) -> int:
        return self.vehicle_index(self.disturbed)


# config-file section -> (constructor keyword in ScenarioConfig or None, key map)
_SCENARIO_KEYS = {
    "n_platoons", "platoon_size", "n_lanes", "lane_width", "lane_offsets",
    "transmission_range", "disturbed", "target", "freeze_motion", "dt",
    "t_start", "t_end",
}
_SOLVER_KEYS = {"fp_tolerance", "fp_max_iter", "klb_degree", "klb_rho_max", "initial_queue"}
_NESTED = {"idm": IdmParams, "disturbance": DisturbanceProfile, "edca": EdcaParams,
           "frame": FrameParams}


def _schedule(value: Any, name: str) -> RateSchedule:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return RateSchedule.constant(value)
    try:
        steps = tuple((float(t), float(r)) for t, r in value)
    except (TypeError, ValueError):
        raise ConfigError(f"traffic.{name}: expected a number or [[t, rate], ...]",
                          f"traffic.{name}") from None
    return RateSchedule(steps)


def config_from_dict(data: dict[str, Any]) -> ScenarioConfig:
    """Build a :class:`ScenarioConfig` from parsed TOML sections."""
    kwargs: dict[str, Any] = {}
    for section, body in data.items():
        if not isinstance(body, dict):
            raise ConfigError(f"top-level key {section!r} must be a [section]", section)
        if section == "scenario":
            for key, value in body.items():
                if key not in _SCENARIO_KEYS:
                    raise ConfigError(f"unknown key scenario.{key}", f"scenario.{key}")
                if key in ("lane_offsets", "disturbed", "target"):
                    value = tuple(value)
                kwargs[key] = value
        elif section == "solver":
            for key, value in body.items():
                if key not in _SOLVER_KEYS:
                    raise ConfigError(f"unknown key solver.{key}", f"solver.{key}")
                kwargs[key] = value
        elif section == "sim":
            for key, value in body.items():
                if key not in ("window", "ac1_phase"):
                    raise ConfigError(f"unknown key sim.{key}", f"sim.{key}")
                kwargs["sim_window" if key == "window" else key] = value
        elif section == "traffic":
            for key, value in body.items():
                if key not in ("lambda0", "lambda1"):
                    raise ConfigError(f"unknown key traffic.{key}", f"traffic.{key}")
                kwargs[key] = _schedule(value, key)
        elif section in _NESTED:
            cls = _NESTED[section]
            known = {f.name for f in dataclasses.fields(cls)}
            for key in body:
                if key not in known:
                    raise ConfigError(f"unknown key {section}.{key}", f"{section}.{key}")
            kwargs[section] = cls(**body)
        else:
            raise ConfigError(f"unknown section [{section}]", section)
    if "n_lanes" in kwargs and "lane_offsets" not in kwargs:
        kwargs["lane_offsets"] = (0.0,) * int(kwargs["n_lanes"])
    return ScenarioConfig(**kwargs)


def load_config(path: str | Path) -> ScenarioConfig:
    """Parse a TOML scenario file; omitted values take the defaults."""
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    try:
        return config_from_dict(data)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}", exc.field_name) from exc
