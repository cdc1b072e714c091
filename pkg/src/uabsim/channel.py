"""mmWave air-to-ground link model.

Implements the 3GPP TR 38.901 urban-macro (UMa) LoS probability and path
loss (Tables 7.4.2-1 and 7.4.1-1, optional shadow fading disabled for
reproducibility), an ideal-pattern beam gain over a 3x3 grid of circular
footprints, and the resulting per-link SNR in dB.

All scalar functions also accept numpy arrays so the environment can batch
whole GUE clouds per step; the scalar contract functions stay the single
source of truth for the formulas.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import SimConfig
from .errors import ConfigError

H_UT_M = 1.5           # ground-terminal antenna height assumed by the UMa model
SPEED_OF_LIGHT = 3e8


@dataclass(frozen=True)
class BeamLayout:
    """Geometry of the downward beam grid of one aerial base station."""

    num_beams: int
    centers: np.ndarray        # (num_beams, 2) offsets from the ground projection, row-major
    footprint_radius: float
    beam_gain_db: float
    solid_angle_sr: float


@dataclass(frozen=True)
class LinkBudget:
    ptx_dbm: float
    gtx_db: float
    grx_db: float              # in-beam receive gain; 0 dB outside any footprint
    pn_dbm: float
    fc_ghz: float


def beam_solid_angle(fov_deg: float, num_beams: int) -> float:
    """Solid angle (sr) of one beam when the vertical field of view is split
    evenly over ``num_beams`` beams: 2*pi*(1 - cos(fov/2)) / B."""
    if not 0 < fov_deg < 180:
        raise ValueError("fov_deg must lie in (0, 180)")
    if num_beams < 1:
        raise ValueError("num_beams must be >= 1")
    return 2.0 * math.pi * (1.0 - math.cos(math.radians(fov_deg) / 2.0)) / num_beams


def beam_gain_db(solid_angle_sr: float) -> float:
    """Ideal-pattern max gain for a beam of the given solid angle.

    Uses the classic approximation G = 41000 / theta_deg^2 with the solid
    angle expressed in square-degree-equivalent units; gain applies inside
    the beam and is 0 dB outside.
    """
    if solid_angle_sr <= 0:
        raise ValueError("solid angle must be positive")
    g_lin = 41000.0 / (solid_angle_sr * 360.0 / (2.0 * math.pi)) ** 2
    return 10.0 * math.log10(g_lin)


def coverage_radius(altitude_m: float, fov_deg: float) -> float:
    """Radius of the cone-ground intersection for a nadir-pointing antenna."""
    return altitude_m * math.tan(math.radians(fov_deg) / 2.0)


def make_beam_layout(altitude_m: float, fov_deg: float, num_beams: int = 9) -> BeamLayout:
    """Square grid of tangent circular footprints covering the field of view.

    For a k x k grid the footprint radius is r_cov / k and adjacent centers
    sit 2*r_cov / k apart, so the footprints are disjoint and their union
    area equals pi * r_cov^2.
    """
    side = math.isqrt(num_beams)
    if side * side != num_beams:
        raise ConfigError(f"num_beams must be a perfect square, got {num_beams}")
    r_cov = coverage_radius(altitude_m, fov_deg)
    radius = r_cov / side
    spacing = 2.0 * r_cov / side
    half = (side - 1) / 2.0
    centers = np.array(
        [[(col - half) * spacing, (row - half) * spacing]
         for row in range(side) for col in range(side)],
        dtype=float,
    )
    omega = beam_solid_angle(fov_deg, num_beams)
    return BeamLayout(
        num_beams=num_beams,
        centers=centers,
        footprint_radius=radius,
        beam_gain_db=beam_gain_db(omega),
        solid_angle_sr=omega,
    )


def budget_from_config(config: SimConfig, layout: BeamLayout) -> LinkBudget:
    return LinkBudget(
        ptx_dbm=config.ptx_dbm,
        gtx_db=config.gtx_db,
        grx_db=layout.beam_gain_db,
        pn_dbm=config.pn_dbm,
        fc_ghz=config.fc_ghz,
    )


def los_probability(d2d_m):
    """UMa LoS probability (TR 38.901 Table 7.4.2-1, h_UT <= 13 m)."""
    d = np.asarray(d2d_m, dtype=float)
    if np.any(d < 0):
        raise ValueError("d2d must be non-negative")
    with np.errstate(divide="ignore", invalid="ignore"):
        far = 18.0 / d + np.exp(-d / 63.0) * (1.0 - 18.0 / d)
    p = np.where(d <= 18.0, 1.0, far)
    return float(p) if p.ndim == 0 else p


def breakpoint_distance_m(fc_ghz: float, h_bs_m: float, h_ut_m: float = H_UT_M) -> float:
    """UMa breakpoint distance with effective antenna heights (h - 1 m)."""
    return 4.0 * (h_bs_m - 1.0) * (h_ut_m - 1.0) * fc_ghz * 1e9 / SPEED_OF_LIGHT


def path_loss_db(d2d_m, d3d_m, fc_ghz: float, los):
    """UMa path loss in dB (TR 38.901 Table 7.4.1-1), shadow fading disabled.

    LoS uses the two-slope model split at the breakpoint distance; NLoS is
    the max of the LoS value and the NLoS formula. The transmitter height is
    recovered from the 2D/3D distance pair.
    """
    d2d = np.asarray(d2d_m, dtype=float)
    d3d = np.asarray(d3d_m, dtype=float)
    if np.any(d3d < 1.0):
        raise ValueError("d3d below 1 m: outside model validity")
    if np.any(d3d + 1e-9 < d2d):
        raise ValueError("d3d must be >= d2d")
    h_bs = np.sqrt(np.maximum(d3d ** 2 - d2d ** 2, 0.0))
    d_bp = np.maximum(breakpoint_distance_m(fc_ghz, h_bs), 0.0)
    log_d3d = np.log10(d3d)
    log_fc = math.log10(fc_ghz)
    pl1 = 28.0 + 22.0 * log_d3d + 20.0 * log_fc
    with np.errstate(divide="ignore"):
        pl2 = (28.0 + 40.0 * log_d3d + 20.0 * log_fc
               - 9.0 * np.log10(d_bp ** 2 + (h_bs - H_UT_M) ** 2))
    pl_los = np.where(d2d <= d_bp, pl1, pl2)
    pl_nlos_raw = 13.54 + 39.08 * log_d3d + 20.0 * log_fc - 0.6 * (H_UT_M - 1.5)
    pl = np.where(np.asarray(los, dtype=bool), pl_los, np.maximum(pl_los, pl_nlos_raw))
    return float(pl) if pl.ndim == 0 else pl


def beam_offsets_to_index(offsets: np.ndarray, layout: BeamLayout):
    """Assign ground offsets (relative to the UABS projection) to beams.

    Nearest-center rule with the footprint radius as cutoff; nearest-center
    assignment keeps beams disjoint. Returns (index, in_beam) arrays.
    """
    off = np.asarray(offsets, dtype=float)
    d2 = np.sum((off[..., None, :] - layout.centers) ** 2, axis=-1)
    idx = np.argmin(d2, axis=-1)
    best = np.take_along_axis(d2, idx[..., None], axis=-1)[..., 0]
    in_beam = best <= layout.footprint_radius ** 2 + 1e-12
    return idx, in_beam


def beam_index_of(gue, uabs, layout: BeamLayout):
    """Beam index covering the ground user, or None when outside every footprint."""
    offset = np.asarray(tuple(gue), dtype=float) - np.asarray(tuple(uabs), dtype=float)
    idx, in_beam = beam_offsets_to_index(offset[None, :], layout)
    return int(idx[0]) if in_beam[0] else None


def snr_db(gue, uabs, altitude_m: float, layout: BeamLayout, budget: LinkBudget, los: bool) -> float:
    """Per-link SNR: ptx + gtx + grx - PL - pn, with grx gated on beam membership."""
    g = np.asarray(tuple(gue), dtype=float)
    u = np.asarray(tuple(uabs), dtype=float)
    d2d = float(np.hypot(*(g - u)))
    d3d = math.hypot(d2d, altitude_m)
    grx = budget.grx_db if beam_index_of(gue, uabs, layout) is not None else 0.0
    pl = path_loss_db(d2d, d3d, budget.fc_ghz, los)
    return budget.ptx_dbm + budget.gtx_db + grx - pl - budget.pn_dbm


def snr_matrix(
    gue_xy: np.ndarray,
    uabs_xy: np.ndarray,
    altitude_m: float,
    layout: BeamLayout,
    budget: LinkBudget,
    los: np.ndarray,
):
    """Vectorized SNR over all (gue, uabs) links.

    Returns (snr, beam_idx, in_beam), each of shape (num_gues, num_agents).
    """
    offsets = gue_xy[:, None, :] - uabs_xy[None, :, :]
    d2d = np.linalg.norm(offsets, axis=-1)
    d3d = np.hypot(d2d, altitude_m)
    beam_idx, in_beam = beam_offsets_to_index(offsets, layout)
    grx = np.where(in_beam, budget.grx_db, 0.0)
    pl = path_loss_db(d2d, d3d, budget.fc_ghz, los)
    snr = budget.ptx_dbm + budget.gtx_db + grx - pl - budget.pn_dbm
    return snr, beam_idx, in_beam
