"""Synthetic stop-and-go trajectories from Newell's simplified car-following model.

A lead vehicle enters the segment at free-flow speed and then repeats a
go/stop speed cycle. Every follower obeys

    x_n(t) = min(free-flow position, x_{n-1}(t - tau) - jam_spacing),
    tau = jam_spacing / |wave_speed|,

so disturbances travel upstream at exactly ``wave_speed``. Expanding the
recursion gives the closed form used here: the follower is the lower envelope
of the shifted leader and the shifted free-flow lines of all its predecessors,
which avoids re-interpolating trajectories vehicle after vehicle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .grid import KMH_PER_MS, Trajectory

SAMPLE_INTERVAL_S = 0.5
RAMP_S = 2.0


@dataclass(frozen=True)
class WaveScenario:
    """Parameters of one synthetic single-lane run.

    Vehicles are released every ``inflow_headway`` seconds plus up to 10 %
    random jitter. When that is shorter than the capacity headway
    ``tau + jam_spacing / v_free`` the entrance stays saturated, arrivals
    queue at the start of the segment and the jitter (hence ``seed``) has
    no visible effect; this is what keeps stop-and-go waves alive all the
    way upstream in the default scenario.
    """

    segment_length: float = 2000.0  # m
    duration: float = 3600.0  # s
    free_speed: float = 80.0  # km/h
    jam_spacing: float = 7.5  # m/veh
    wave_speed: float = -15.0  # km/h
    inflow_headway: float = 2.0  # s
    stopgo_period: float = 300.0  # s
    stopgo_duty: float = 0.3
    seed: int = 0
    lane: int = 1

    def __post_init__(self):
        if not self.free_speed > 0:
            raise ConfigurationError(f"free_speed must be positive, got {self.free_speed}")
        if not -25.0 <= self.wave_speed <= -5.0:
            raise ConfigurationError(f"wave_speed must lie in [-25, -5] km/h, got {self.wave_speed}")
        if not 60.0 <= self.stopgo_period <= 900.0:
            raise ConfigurationError(f"stopgo_period must lie in [60, 900] s, got {self.stopgo_period}")
        if not 0.0 <= self.stopgo_duty < 1.0:
            raise ConfigurationError(f"stopgo_duty must lie in [0, 1), got {self.stopgo_duty}")
        if not (self.segment_length > 0 and self.duration > 0 and self.inflow_headway > 0):
            raise ConfigurationError("segment_length, duration and inflow_headway must be positive")
        if not self.jam_spacing > 0:
            raise ConfigurationError(f"jam_spacing must be positive, got {self.jam_spacing}")
        if self.jam_spacing >= self.segment_length:
            raise ConfigurationError(
                f"jam_spacing {self.jam_spacing} m must be shorter than the segment "
                f"({self.segment_length} m)"
            )
        if self.free_speed / KMH_PER_MS > 70.0:
            raise ConfigurationError("free_speed exceeds the 70 m/s trajectory cap")

    @property
    def reaction_time(self) -> float:
        """Newell time shift tau in seconds."""
        return self.jam_spacing / (abs(self.wave_speed) / KMH_PER_MS)


class _Leader:
    """Position of the lead vehicle; it is at x = 0 at t = 0."""

    def __init__(self, sc: WaveScenario):
        self.vf = sc.free_speed / KMH_PER_MS
        self.period = sc.stopgo_period
        duty = sc.stopgo_duty
        self.stopping = duty > 0
        self.ramp = min(RAMP_S, duty * self.period, (1 - duty) * self.period)
        # ramp midpoints sit at the go/stop boundaries
        self.go_end = (1 - duty) * self.period - self.ramp
        self.stop_end = self.period - self.ramp
        # distance covered per cycle; ramps count half
        self.cycle_dist = self.vf * (1 - duty) * self.period

    def position(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        vf = self.vf
        if not self.stopping:
            return vf * s
        r, g, e = self.ramp, self.go_end, self.stop_end
        k = np.floor(s / self.period)
        phi = s - k * self.period
        u_down = np.clip(phi - g, 0.0, r)
        u_up = np.clip(phi - e, 0.0, r)
        within = (
            vf * np.minimum(phi, g)
            + vf * (u_down - u_down ** 2 / (2 * r))
            + vf * u_up ** 2 / (2 * r)
        )
        return np.where(s < 0, vf * s, k * self.cycle_dist + within)

    def time_reaching(self, x: float) -> float:
        """Earliest time at which the leader is at or beyond ``x``."""
        vf = self.vf
        if x <= 0 or not self.stopping:
            return x / vf
        r, g, e = self.ramp, self.go_end, self.stop_end
        k = math.floor(x / self.cycle_dist)
        rem = x - k * self.cycle_dist
        base = k * self.period
        if rem <= vf * g:
            return base + rem / vf
        plateau = vf * (g + r / 2)
        if rem <= plateau:
            q = min((rem - vf * g) / vf, r / 2)
            return base + g + r - math.sqrt(max(r * r - 2 * r * q, 0.0))
        return base + e + math.sqrt(2 * r * (rem - plateau) / vf)


def generate(scenario: WaveScenario) -> list[Trajectory]:
    """Trajectories of all vehicles while on ``[0, segment_length]``.

    Sampled every 0.5 s on ``[0, duration]``; each trajectory keeps one
    sample just outside the segment on either side so that grid clipping
    at the segment ends is exact.
    """
    sc = scenario
    rng = np.random.default_rng(sc.seed)
    leader = _Leader(sc)
    vf = leader.vf
    tau = sc.reaction_time
    delta = sc.jam_spacing
    length = sc.segment_length
    clock = np.arange(0.0, sc.duration + 1e-9, SAMPLE_INTERVAL_S)
    capacity_gap = vf * tau + delta

    out = []
    offset = 0.0  # C_n: vehicle n's free-flow line is vf * t - C_n
    n = 0
    while True:
        if n == 0:
            entry = 0.0
        else:
            entry = n * sc.inflow_headway + rng.uniform(0.0, 0.1 * sc.inflow_headway)
            offset = max(offset + capacity_gap, vf * entry)
        shift = n * tau
        gap = n * delta

        # sampling window from the bounds on when the vehicle can be at 0 and at L
        t_in = max(shift + leader.time_reaching(gap), offset / vf)
        if t_in > sc.duration:
            break
        t_out = max(shift + leader.time_reaching(gap + length), (length + offset) / vf)
        i0 = max(int(math.floor(t_in / SAMPLE_INTERVAL_S)) - 2, 0)
        i1 = min(int(math.ceil(t_out / SAMPLE_INTERVAL_S)) + 3, clock.size)
        t = clock[i0:i1]
        if n == 0:
            x = leader.position(t)
        else:
            x = np.minimum(leader.position(t - shift) - gap, vf * t - offset)
        first = max(int(np.searchsorted(x, 0.0, side="right")) - 1, 0)
        last = min(int(np.searchsorted(x, length, side="left")) + 1, x.size)
        t, x = t[first:last], x[first:last]
        if t.size >= 2 and x[-1] >= 0 and x[0] <= length:
            out.append(Trajectory(f"veh{n:06d}", sc.lane, t, x))
        n += 1
    return out
