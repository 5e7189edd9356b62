"""Per-beam RSRP synthesis: beam gain, UMi pathloss, correlated shadowing,
optional fast fading, and layer-3 filtering into 40 ms measurement reports.

Each cell transmits a static grid of 12 SSB wide beams (3 azimuth columns x 4
elevation tiers). L1 RSRP is composed from geometry plus impairments; the L3
exponential filter removes short-term variation before event evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from eshopsim.scenario import SiteLayout, bearing_from_bs

FC_GHZ = 28.0
N_SSB = 12
L3_FILTER_COEFF = 0.5  # settles within ~4 reports

DEFAULT_AZ_OFFSETS_DEG = (-40.0, 0.0, 40.0)
DEFAULT_AZ_3DB_DEG = 40.0
DEFAULT_EL_TILTS_DEG = (-21.0, -7.0, 7.0, 21.0)
DEFAULT_EL_3DB_DEG = 14.0
DEFAULT_PEAK_GAIN_DBI = 14.0
DEFAULT_FRONT_BACK_LIMIT_DB = 30.0


@dataclass
class BeamGridConfig:
    """Beam pattern parameters; defaults tile one 120-degree sector."""

    az_offsets_deg: tuple[float, ...] = DEFAULT_AZ_OFFSETS_DEG
    az_3db_deg: float = DEFAULT_AZ_3DB_DEG
    el_tilts_deg: tuple[float, ...] = DEFAULT_EL_TILTS_DEG
    el_3db_deg: float = DEFAULT_EL_3DB_DEG
    peak_gain_dbi: float = DEFAULT_PEAK_GAIN_DBI
    front_back_limit_db: float = DEFAULT_FRONT_BACK_LIMIT_DB

    def __post_init__(self) -> None:
        if isinstance(self.az_offsets_deg, list):
            self.az_offsets_deg = tuple(self.az_offsets_deg)
        if isinstance(self.el_tilts_deg, list):
            self.el_tilts_deg = tuple(self.el_tilts_deg)
        if len(self.az_offsets_deg) * len(self.el_tilts_deg) != N_SSB:
            raise ValueError(f"beam grid must hold exactly {N_SSB} beams per cell")
        if self.az_3db_deg <= 0.0 or self.el_3db_deg <= 0.0:
            raise ValueError("3 dB beamwidths must be positive")
        if self.front_back_limit_db <= 0.0:
            raise ValueError("front-back limit must be positive")


@dataclass(frozen=True)
class Beam:
    beam_id: int
    boresight_az_deg: float
    boresight_el_deg: float
    az_3db_deg: float
    el_3db_deg: float
    peak_gain_dbi: float


class BeamGrid:
    """Static per-cell beam sets; beam_id = elevation_tier * 3 + azimuth_column."""

    def __init__(self, layout: SiteLayout, cfg: BeamGridConfig | None = None):
        self.cfg = cfg or BeamGridConfig()
        self.flm_db = self.cfg.front_back_limit_db
        self.cells: dict[int, tuple[Beam, ...]] = {}
        # vectorized boresight tables, indexed like layout.cell_ids
        self._az = np.empty((3, N_SSB))
        self._el = np.empty((3, N_SSB))
        for ci, (cell_id, boresight) in enumerate(
            zip(layout.cell_ids, layout.sector_boresights_deg)
        ):
            beams = []
            for ei, el in enumerate(self.cfg.el_tilts_deg):
                for ai, az_off in enumerate(self.cfg.az_offsets_deg):
                    bid = ei * len(self.cfg.az_offsets_deg) + ai
                    beams.append(
                        Beam(
                            beam_id=bid,
                            boresight_az_deg=(boresight + az_off) % 360.0,
                            boresight_el_deg=el,
                            az_3db_deg=self.cfg.az_3db_deg,
                            el_3db_deg=self.cfg.el_3db_deg,
                            peak_gain_dbi=self.cfg.peak_gain_dbi,
                        )
                    )
            assert len(beams) == N_SSB
            self.cells[cell_id] = tuple(beams)
            self._az[ci] = [b.boresight_az_deg for b in beams]
            self._el[ci] = [b.boresight_el_deg for b in beams]

    def gains_dbi(self, az_deg: float, el_deg: float) -> np.ndarray:
        """Beam gains toward (az, el) for all cells, shape (3, 12)."""
        daz = wrap_angle_deg(az_deg - self._az)
        del_ = wrap_angle_deg(el_deg - self._el)
        atten = 12.0 * (
            (daz / self.cfg.az_3db_deg) ** 2 + (del_ / self.cfg.el_3db_deg) ** 2
        )
        return self.cfg.peak_gain_dbi - np.minimum(atten, self.flm_db)


def wrap_angle_deg(x):
    """Wrap angle differences to (-180, 180]."""
    return -((-np.asarray(x) + 180.0) % 360.0 - 180.0)


def beam_gain(beam: Beam, az_deg: float, el_deg: float, flm_db: float = DEFAULT_FRONT_BACK_LIMIT_DB) -> float:
    """Parabolic two-plane pattern with a front-back floor, in dBi."""
    daz = float(wrap_angle_deg(az_deg - beam.boresight_az_deg))
    del_ = float(wrap_angle_deg(el_deg - beam.boresight_el_deg))
    atten = 12.0 * ((daz / beam.az_3db_deg) ** 2 + (del_ / beam.el_3db_deg) ** 2)
    return beam.peak_gain_dbi - min(atten, flm_db)


def path_loss(d3d_m: float, los: bool, fc_ghz: float = FC_GHZ, ue_height_m: float = 1.5) -> float:
    """38.901 UMi street-canyon closed forms below the breakpoint distance.

    NLoS is clamped to be no smaller than LoS at the same distance.
    """
    if d3d_m < 1.0:
        raise ValueError("pathloss model needs d3d >= 1 m")
    pl_los = 32.4 + 21.0 * math.log10(d3d_m) + 20.0 * math.log10(fc_ghz)
    if los:
        return pl_los
    pl_nlos = (
        22.4
        + 35.3 * math.log10(d3d_m)
        + 21.3 * math.log10(fc_ghz)
        - 0.3 * (ue_height_m - 1.5)
    )
    return max(pl_los, pl_nlos)


@dataclass
class ChannelParams:
    """Channel configuration block."""

    fc_ghz: float = FC_GHZ
    bandwidth_mhz: float = 100.0
    tx_power_per_ssb_dbm: float = 30.0
    los_mode: str = "los"  # "los" | "nlos"
    shadow_sigma_los_db: float = 4.0
    shadow_sigma_nlos_db: float = 7.8
    decorrelation_distance_m: float = 10.0
    fast_fading_sigma_db: float = 2.0
    fast_fading_enabled: bool = True
    beam_grid: BeamGridConfig = field(default_factory=BeamGridConfig)

    def __post_init__(self) -> None:
        if isinstance(self.beam_grid, dict):
            self.beam_grid = BeamGridConfig(**self.beam_grid)
        if self.fc_ghz != FC_GHZ:
            raise ValueError(f"carrier is fixed at {FC_GHZ} GHz")
        self.los_mode = self.los_mode.lower()
        if self.los_mode not in ("los", "nlos"):
            raise ValueError("los_mode must be 'los' or 'nlos'")
        if self.shadow_sigma_los_db <= 0.0 or self.shadow_sigma_nlos_db <= 0.0:
            raise ValueError("shadow sigmas must be positive")
        if self.decorrelation_distance_m <= 0.0:
            raise ValueError("decorrelation distance must be positive")
        if self.fast_fading_sigma_db < 0.0:
            raise ValueError("fast fading sigma must be non-negative")

    @property
    def los(self) -> bool:
        return self.los_mode == "los"

    @property
    def shadow_sigma_db(self) -> float:
        return self.shadow_sigma_los_db if self.los else self.shadow_sigma_nlos_db


def shadow_step(prev_db, delta_d_m: float, params: ChannelParams, rng: np.random.Generator):
    """Gauss-Markov shadowing update with stationary distribution N(0, sigma^2)."""
    if delta_d_m < 0.0:
        raise ValueError("delta_d must be non-negative")
    rho = math.exp(-delta_d_m / params.decorrelation_distance_m)
    sigma = params.shadow_sigma_db
    prev_db = np.asarray(prev_db, dtype=float)
    noise = rng.standard_normal(prev_db.shape) if prev_db.shape else rng.standard_normal()
    return rho * prev_db + math.sqrt(1.0 - rho * rho) * sigma * noise


def rsrp_l1(
    ue_pos: np.ndarray,
    cell_id: int,
    beam_id: int,
    layout: SiteLayout,
    grid: BeamGrid,
    params: ChannelParams,
    shadow_db: float = 0.0,
    fading_db: float = 0.0,
) -> float:
    """Compose one beam's L1 RSRP; impairment terms are passed in explicitly."""
    az, el, d3d = bearing_from_bs(layout, ue_pos)
    beam = grid.cells[cell_id][beam_id]
    gain = beam_gain(beam, az, el, flm_db=grid.flm_db)
    pl = path_loss(d3d, los=params.los, fc_ghz=params.fc_ghz, ue_height_m=layout.ue_height_m)
    return params.tx_power_per_ssb_dbm + gain - pl - shadow_db + fading_db


class ChannelState:
    """Per-UE stochastic channel: shadowing memory plus fading draws.

    Draw order per sample is fixed: one shadowing innovation per cell (cell_ids
    order), then the (3, 12) fast-fading block, keeping streams reproducible.
    """

    def __init__(
        self,
        layout: SiteLayout,
        grid: BeamGrid,
        params: ChannelParams,
        rng: np.random.Generator,
    ):
        self.layout = layout
        self.grid = grid
        self.params = params
        self.rng = rng
        self._shadow: np.ndarray | None = None  # (3,) dB per cell
        self._last_pos: np.ndarray | None = None

    def sample(self, ue_pos: np.ndarray) -> np.ndarray:
        """Raw L1 RSRP for all 36 beams at this position, shape (3, 12) dBm."""
        p = self.params
        az, el, d3d = bearing_from_bs(self.layout, ue_pos)
        if self._shadow is None:
            # stationary initialization
            self._shadow = p.shadow_sigma_db * self.rng.standard_normal(3)
        else:
            delta_d = float(np.linalg.norm(np.asarray(ue_pos) - self._last_pos))
            self._shadow = shadow_step(self._shadow, delta_d, p, self.rng)
        self._last_pos = np.asarray(ue_pos, dtype=float).copy()
        gains = self.grid.gains_dbi(az, el)
        pl = path_loss(d3d, los=p.los, fc_ghz=p.fc_ghz, ue_height_m=self.layout.ue_height_m)
        rsrp = p.tx_power_per_ssb_dbm + gains - pl - self._shadow[:, None]
        if p.fast_fading_enabled and p.fast_fading_sigma_db > 0.0:
            rsrp = rsrp + p.fast_fading_sigma_db * self.rng.standard_normal((3, N_SSB))
        return rsrp


class L3FilterState:
    """Exponential L3 filter F_n = (1-a) F_{n-1} + a M_n, seeded by the first sample."""

    def __init__(self, a: float = L3_FILTER_COEFF):
        if not (0.0 < a <= 1.0):
            raise ValueError("filter coefficient must lie in (0, 1]")
        self.a = a
        self.value: np.ndarray | None = None

    def update(self, raw) -> np.ndarray:
        raw = np.asarray(raw, dtype=float)
        if self.value is None:
            self.value = raw.copy()
        else:
            if raw.shape != self.value.shape:
                raise ValueError("raw sample shape changed mid-run")
            self.value = (1.0 - self.a) * self.value + self.a * raw
        return self.value.copy()


def l3_update(state: L3FilterState, raw) -> np.ndarray:
    """Functional alias for :meth:`L3FilterState.update`."""
    return state.update(raw)


@dataclass
class MeasurementReport:
    """40 ms snapshot of the 3 x 12 L3-filtered beam RSRP values."""

    t_ms: int
    cell_ids: tuple[int, int, int]
    rsrp_dbm: np.ndarray  # shape (3, 12)

    def __post_init__(self) -> None:
        self.rsrp_dbm = np.asarray(self.rsrp_dbm, dtype=float)
        if self.rsrp_dbm.shape != (3, N_SSB):
            raise ValueError(f"report must carry (3, {N_SSB}) beam values")
        if not np.isfinite(self.rsrp_dbm).all():
            raise ValueError("report values must be finite")
        if self.t_ms % 40 != 0:
            raise ValueError("reports land on the 40 ms grid")


def make_report(t_ms: int, cell_ids: tuple[int, int, int], filt: L3FilterState) -> MeasurementReport:
    """Snapshot the current L3 filter state into a timestamped report."""
    if filt.value is None:
        raise ValueError("L3 filter state not initialized")
    return MeasurementReport(t_ms=t_ms, cell_ids=tuple(cell_ids), rsrp_dbm=filt.value.copy())
