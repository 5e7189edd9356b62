"""Site geometry and deterministic circular UE mobility.

A single base station carries three 120-degree sectors. Every UE rides its
own randomized circle around the site, so a single run sweeps all three cell
borders; the randomized radius, phase and direction separate individual
trajectories by up to tens of meters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TICK_MS = 10  # SSB period
REPORT_PERIOD_TICKS = 4
REPORT_PERIOD_MS = TICK_MS * REPORT_PERIOD_TICKS  # 40 ms measurement reporting
BS_HEIGHT_M = 10.0
UE_HEIGHT_M = 1.5
SECTOR_BORESIGHTS_DEG = (90.0, 210.0, 330.0)


@dataclass(frozen=True)
class SiteLayout:
    """Single-site three-sector deployment; azimuth 0 deg points east, CCW."""

    bs_position: tuple[float, float, float] = (0.0, 0.0, BS_HEIGHT_M)
    bs_height_m: float = BS_HEIGHT_M
    ue_height_m: float = UE_HEIGHT_M
    sector_boresights_deg: tuple[float, float, float] = SECTOR_BORESIGHTS_DEG
    cell_ids: tuple[int, int, int] = (0, 1, 2)

    def __post_init__(self) -> None:
        if len(self.cell_ids) != 3 or len(set(self.cell_ids)) != 3:
            raise ValueError("layout must define exactly 3 distinct cells")
        if len(self.sector_boresights_deg) != 3:
            raise ValueError("layout must define exactly 3 sector boresights")
        if not (self.bs_height_m > self.ue_height_m > 0.0):
            raise ValueError("heights must satisfy bs_height > ue_height > 0")
        if abs(self.bs_position[2] - self.bs_height_m) > 1e-9:
            raise ValueError("bs_position z-coordinate must equal bs_height_m")
        b = sorted(x % 360.0 for x in self.sector_boresights_deg)
        gaps = {
            round((b[1] - b[0]) % 360.0, 6),
            round((b[2] - b[1]) % 360.0, 6),
            round((b[0] - b[2]) % 360.0, 6),
        }
        if gaps != {120.0}:
            raise ValueError("sector boresights must be mutually 120 degrees apart")


@dataclass(frozen=True)
class UeTrajectory:
    """Closed-form circular path: center, radius, speed, phase, direction."""

    center_xy: tuple[float, float]
    radius_m: float
    speed_mps: float
    start_angle_rad: float
    direction: int  # +1 counter-clockwise, -1 clockwise
    duration_s: float
    ue_id: str
    seed: int

    def __post_init__(self) -> None:
        if self.radius_m <= 0.0:
            raise ValueError("radius must be positive")
        if self.speed_mps <= 0.0:
            raise ValueError("speed must be positive")
        if self.direction not in (1, -1):
            raise ValueError("direction must be +1 or -1")
        if self.duration_s <= 0.0:
            raise ValueError("duration must be positive")

    @property
    def period_s(self) -> float:
        """Time for one full revolution."""
        return 2.0 * math.pi * self.radius_m / self.speed_mps

    @property
    def duration_ms(self) -> float:
        return self.duration_s * 1000.0


@dataclass
class SimClock:
    """10 ms tick clock; every 4th tick is a 40 ms measurement report instant."""

    tick_ms: int = TICK_MS
    report_period_ticks: int = REPORT_PERIOD_TICKS
    current_tick: int = 0

    def __post_init__(self) -> None:
        if self.tick_ms != TICK_MS:
            raise ValueError(f"tick is fixed at the {TICK_MS} ms SSB period")
        if self.report_period_ticks != REPORT_PERIOD_TICKS:
            raise ValueError(f"report period is fixed at {REPORT_PERIOD_TICKS} ticks")
        if self.current_tick < 0:
            raise ValueError("current_tick must be non-negative")

    @property
    def time_ms(self) -> int:
        return self.current_tick * self.tick_ms

    @property
    def at_report(self) -> bool:
        return self.current_tick % self.report_period_ticks == 0

    def advance(self) -> None:
        self.current_tick += 1


@dataclass
class ScenarioConfig:
    """Mobility scenario block: circle randomization bounds and run length."""

    radius_min_m: float = 40.0
    radius_max_m: float = 60.0
    speeds_mps: tuple[float, ...] = (25.0, 31.0)
    duration_s: float = 20.0
    num_ues: int = 10
    seed: int | None = None  # overrides the master seed for mobility/channel streams

    def __post_init__(self) -> None:
        if isinstance(self.speeds_mps, list):
            self.speeds_mps = tuple(self.speeds_mps)
        if not (0.0 < self.radius_min_m <= self.radius_max_m):
            raise ValueError("need 0 < radius_min_m <= radius_max_m")
        if len(self.speeds_mps) == 0 or any(v <= 0.0 for v in self.speeds_mps):
            raise ValueError("speed set must be non-empty and positive")
        if self.duration_s <= 0.0:
            raise ValueError("duration must be positive")
        if self.num_ues < 1:
            raise ValueError("need at least one UE")


def spawn_trajectory(
    seed: int,
    scenario: ScenarioConfig,
    ue_id: str = "ue000",
    center_xy: tuple[float, float] = (0.0, 0.0),
) -> UeTrajectory:
    """Draw a randomized circular trajectory.

    Draw order (fixed for reproducibility): radius, start angle, direction,
    speed index.
    """
    if scenario.duration_s <= 0.0:
        raise ValueError("duration must be positive")
    if len(scenario.speeds_mps) == 0:
        raise ValueError("speed set must be non-empty")
    rng = np.random.Generator(np.random.PCG64(seed))
    radius = float(rng.uniform(scenario.radius_min_m, scenario.radius_max_m))
    start_angle = float(rng.uniform(0.0, 2.0 * math.pi))
    direction = 1 if int(rng.integers(0, 2)) == 1 else -1
    speed = float(scenario.speeds_mps[int(rng.integers(0, len(scenario.speeds_mps)))])
    return UeTrajectory(
        center_xy=(float(center_xy[0]), float(center_xy[1])),
        radius_m=radius,
        speed_mps=speed,
        start_angle_rad=start_angle,
        direction=direction,
        duration_s=scenario.duration_s,
        ue_id=ue_id,
        seed=seed,
    )


def position_at(traj: UeTrajectory, t_ms: float, ue_height_m: float = UE_HEIGHT_M) -> np.ndarray:
    """UE position (x, y, z) at time ``t_ms`` on the circle."""
    if not (0.0 <= t_ms <= traj.duration_ms):
        raise ValueError(f"t_ms={t_ms} outside [0, {traj.duration_ms}]")
    omega = traj.speed_mps / traj.radius_m  # rad/s
    theta = traj.start_angle_rad + traj.direction * omega * (t_ms / 1000.0)
    return np.array(
        [
            traj.center_xy[0] + traj.radius_m * math.cos(theta),
            traj.center_xy[1] + traj.radius_m * math.sin(theta),
            ue_height_m,
        ]
    )


def trajectory_positions(
    traj: UeTrajectory, times_ms: np.ndarray, ue_height_m: float = UE_HEIGHT_M
) -> np.ndarray:
    """Vectorized :func:`position_at` for an array of times, shape (N, 3)."""
    times_ms = np.asarray(times_ms, dtype=float)
    if times_ms.size and (times_ms.min() < 0.0 or times_ms.max() > traj.duration_ms):
        raise ValueError("times outside trajectory duration")
    omega = traj.speed_mps / traj.radius_m
    theta = traj.start_angle_rad + traj.direction * omega * (times_ms / 1000.0)
    out = np.empty((times_ms.size, 3))
    out[:, 0] = traj.center_xy[0] + traj.radius_m * np.cos(theta)
    out[:, 1] = traj.center_xy[1] + traj.radius_m * np.sin(theta)
    out[:, 2] = ue_height_m
    return out


def report_grid_ms(duration_s: float) -> np.ndarray:
    """Report instants 0, 40, 80, ... up to and including the duration."""
    duration_ms = int(round(duration_s * 1000.0))
    return np.arange(0, duration_ms + 1, REPORT_PERIOD_MS, dtype=np.int64)


def bearing_from_bs(layout: SiteLayout, ue_pos: np.ndarray) -> tuple[float, float, float]:
    """Azimuth [0, 360), elevation (negative below BS height) and 3D distance."""
    d = np.asarray(ue_pos, dtype=float) - np.asarray(layout.bs_position, dtype=float)
    d3d = float(np.linalg.norm(d))
    if d3d < 1e-12:
        raise ValueError("UE position coincides with the BS")
    az = math.degrees(math.atan2(d[1], d[0])) % 360.0
    d2d = math.hypot(d[0], d[1])
    if d2d < 1e-12:
        el = 90.0 if d[2] > 0 else -90.0
        az = 0.0
    else:
        el = math.degrees(math.atan2(d[2], d2d))
    return az, el, d3d
