"""
Synthetic vehicle GPS traces for desk-scale experiments.

Profiles stand in for the two public datasets when they are unavailable:
an urban arterial drive around Anthem, Arizona and a city drive around Zurich.
"""
import math
from dataclasses import dataclass
from typing import Dict

import numpy as np

from src.trace_ingest import Trace

EARTH_M = 6371000.0


@dataclass(frozen=True)
class TraceProfile:
    """Parameters for one synthetic drive"""
    name: str
    origin_latitude: float
    origin_longitude: float
    sample_interval: float = 0.1  # seconds, 10 Hz
    start_speed: float = 12.0  # m/s
    max_speed: float = 30.0
    accel_noise: float = 0.4  # m/s^2 per step
    yaw_noise: float = 0.004  # rad/s per step
    max_yaw_rate: float = 0.25
    position_noise: float = 0.3  # metres
    missing_speed_rate: float = 0.0


PROFILES: Dict[str, TraceProfile] = {
    "mmitss": TraceProfile("mmitss", 33.8450, -112.1350, start_speed=15.0),
    "zurich": TraceProfile(
        "zurich", 47.3769, 8.5417, start_speed=9.0, max_speed=17.0, yaw_noise=0.006,
        missing_speed_rate=0.01,
    ),
}


def synthesize_trace(length: int, seed: int, profile: str = "mmitss") -> Trace:
    """
    Generate a deterministic trajectory of `length` samples.

    Speed is a bounded random walk, heading integrates a mean-reverting yaw
    rate, and positions are integrated on a local tangent plane around the
    profile origin with Gaussian position noise on top.
    """
    if length < 2:
        raise ValueError(f"Synthetic trace needs at least 2 samples, got {length}")
    if profile not in PROFILES:
        raise ValueError(f"Unknown trace profile '{profile}', expected one of {', '.join(PROFILES)}")

    p = PROFILES[profile]
    rng = np.random.default_rng(seed)
    dt = p.sample_interval

    accel = rng.normal(0.0, p.accel_noise, length)
    yaw_kicks = rng.normal(0.0, p.yaw_noise, length)
    speed = np.empty(length)
    yaw_rate = np.empty(length)
    speed[0] = p.start_speed
    yaw_rate[0] = 0.0
    for i in range(1, length):
        speed[i] = min(max(speed[i - 1] + accel[i] * dt, 0.0), p.max_speed)
        yaw_rate[i] = min(max(0.98 * yaw_rate[i - 1] + yaw_kicks[i], -p.max_yaw_rate), p.max_yaw_rate)

    heading = rng.uniform(0.0, 2.0 * math.pi) + np.cumsum(yaw_rate * dt)
    north = np.cumsum(speed * dt * np.cos(heading))
    east = np.cumsum(speed * dt * np.sin(heading))
    north += rng.normal(0.0, p.position_noise, length)
    east += rng.normal(0.0, p.position_noise, length)

    latitude = p.origin_latitude + np.degrees(north / EARTH_M)
    longitude = p.origin_longitude + np.degrees(east / (EARTH_M * math.cos(math.radians(p.origin_latitude))))

    speed_channel = speed.copy()
    if p.missing_speed_rate > 0:
        interior = np.arange(1, length - 1)
        blanks = rng.choice(interior, size=int(len(interior) * p.missing_speed_rate), replace=False)
        speed_channel[blanks] = np.nan

    timestamps = 1.6e9 + np.arange(length) * dt
    values = np.column_stack([latitude, longitude, speed_channel])
    return Trace(timestamps=timestamps, values=values, source_id=f"synthetic-{profile}-{seed}")
