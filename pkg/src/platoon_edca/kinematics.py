"""Vehicle motion: trapezoidal disturbance plus IDM car following.

All vehicles are updated synchronously from the previous step's state with
constant-acceleration kinematics.  Only vehicles behind the disturbed vehicle
on its lane react (through IDM); every other vehicle cruises at the stable
speed.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .config import DisturbanceProfile, IdmParams, ScenarioConfig

_T_EPS = 1e-9


class KinematicsError(RuntimeError):
    pass


class SpacingViolation(KinematicsError):
    """A follower's bumper reached the rear of its predecessor."""

    def __init__(self, t: float, vehicles: list[int], gaps: np.ndarray):
        self.t = t
        self.vehicles = vehicles
        self.gaps = gaps
        super().__init__(f"t={t:.4f}s: non-positive spacing for vehicles {vehicles}")


class VehicleState(NamedTuple):
    x: float
    y: float
    v: float
    a: float
    platoon: int
    member: int
    lane: int


def equilibrium_spacing(v: float, headway: float, params: IdmParams) -> float:
    """Bumper-to-rear gap at which IDM acceleration vanishes for speed ``v``."""
    if not 0 <= v < params.v0:
        raise KinematicsError(f"no equilibrium spacing for v={v} (v0={params.v0})")
    return (params.s0 + v * headway) / np.sqrt(1.0 - (v / params.v0) ** 4)


def disturbance_acceleration(profile: DisturbanceProfile, t: float) -> float:
    if t < profile.t0 - _T_EPS:
        return 0.0
    if t < profile.t1 - _T_EPS:
        return (profile.v_low - profile.v_stable) / profile.t_decel
    if t < profile.t2 - _T_EPS:
        return 0.0
    if t < profile.tf - _T_EPS:
        return (profile.v_stable - profile.v_low) / profile.t_accel
    return 0.0


def idm_acceleration(v, v_leader, gap, headway, params: IdmParams):
    """IDM acceleration; accepts scalars or equal-shape arrays.

    ``gap`` is the bumper-to-rear distance to the vehicle ahead.
    """
    gap = np.asarray(gap, dtype=float)
    if np.any(gap <= 0):
        raise KinematicsError("IDM needs a positive gap")
    dv = np.asarray(v) - np.asarray(v_leader)
    desired = params.s0 + v * headway + v * dv / (2.0 * np.sqrt(params.a_max * params.b_comfort))
    acc = params.a_max * (1.0 - (np.asarray(v) / params.v0) ** 4 - (desired / gap) ** 2)
    return float(acc) if acc.ndim == 0 else acc


@dataclass(frozen=True)
class ScenarioState:
    """Positions and motion of all vehicles at one time step.

    Arrays are indexed by the flattened vehicle id ``(platoon-1)*m + (member-1)``.
    """

    step: int
    t: float
    x: np.ndarray
    y: np.ndarray
    v: np.ndarray
    a: np.ndarray
    lane: np.ndarray
    predecessor: np.ndarray  # index of the vehicle ahead on the same lane, -1 if none
    headway: np.ndarray
    reacts: np.ndarray  # True for IDM followers downstream of the disturbance
    disturbed: int
    platoon_size: int

    def vehicle(self, k: int) -> VehicleState:
        return VehicleState(float(self.x[k]), float(self.y[k]), float(self.v[k]),
                            float(self.a[k]), k // self.platoon_size + 1,
                            k % self.platoon_size + 1, int(self.lane[k]))

    def gaps(self, length: float) -> np.ndarray:
        """Bumper-to-rear gaps to the predecessor (inf for lane fronts)."""
        g = np.full(self.x.shape, np.inf)
        has = self.predecessor >= 0
        g[has] = self.x[self.predecessor[has]] - self.x[has] - length
        return g


def initial_state(config: ScenarioConfig) -> ScenarioState:
    """Equilibrium layout: platoons assigned to lanes round-robin.

    On each lane the platoons follow one another in index order; every gap is
    the IDM equilibrium spacing at the stable speed.  The origin sits at the
    disturbed vehicle's centre.
    """
    idm, m = config.idm, config.platoon_size
    v_stb = config.disturbance.v_stable
    n = config.n_vehicles
    x = np.zeros(n)
    lane = np.zeros(n, dtype=int)
    headway = np.empty(n)
    predecessor = np.full(n, -1, dtype=int)
    tail: dict[int, int] = {}
    for p in range(config.n_platoons):
        ln = p % config.n_lanes
        for j in range(m):
            k = p * m + j
            lane[k] = ln
            headway[k] = idm.headway_leader if j == 0 else idm.headway_member
            ahead = tail.get(ln)
            if ahead is None:
                x[k] = config.lane_offsets[ln]
            else:
                predecessor[k] = ahead
                x[k] = x[ahead] - idm.vehicle_length - equilibrium_spacing(
                    v_stb, headway[k], idm)
            tail[ln] = k

    d = config.disturbed_index
    x = x - x[d]
    y = (lane - lane[d]) * config.lane_width
    reacts = np.zeros(n, dtype=bool)
    for k in range(n):
        p = predecessor[k]
        while p >= 0:
            if p == d:
                reacts[k] = True
                break
            p = predecessor[p]

    v = np.full(n, v_stb)
    state = ScenarioState(0, config.t_start, x, y.astype(float), v, np.zeros(n), lane,
                          predecessor, headway, reacts, d, m)
    return replace(state, a=_accelerations(state, config))


def _accelerations(state: ScenarioState, config: ScenarioConfig) -> np.ndarray:
    a = np.zeros_like(state.v)
    a[state.disturbed] = disturbance_acceleration(config.disturbance, state.t)
    f = np.flatnonzero(state.reacts)
    if f.size:
        lead = state.predecessor[f]
        gap = state.x[lead] - state.x[f] - config.idm.vehicle_length
        bad = gap <= 0
        if bad.any():
            raise SpacingViolation(state.t, f[bad].tolist(), gap[bad])
        a[f] = idm_acceleration(state.v[f], state.v[lead], gap, state.headway[f], config.idm)
    return a


def step_scenario(state: ScenarioState, config: ScenarioConfig) -> ScenarioState:
    """Advance every vehicle by one ``config.dt``."""
    dt = config.dt
    step = state.step + 1
    t = config.t_start + step * dt
    if config.freeze_motion:
        return replace(state, step=step, t=t)
    x = state.x + state.v * dt + 0.5 * state.a * dt * dt
    v = np.clip(state.v + state.a * dt, 0.0, config.idm.v0)
    # cruising vehicles are held exactly at the stable speed
    hold = ~state.reacts
    hold[state.disturbed] = False
    v[hold] = config.disturbance.v_stable
    nxt = replace(state, step=step, t=t, x=x, v=v)
    return replace(nxt, a=_accelerations(nxt, config))
