"""Hexagonal site layout, UE drops and large-scale coupling.

Builds the static geometry a run needs: site centers on a hex lattice,
three-sector (or omni) cells, uniformly dropped UEs, lognormal shadowing
per UE/site pair, and the full UE-to-cell coupling-loss matrix.  UEs
attach to the cell with minimum coupling loss; there is no wraparound,
so multi-ring runs should only measure UEs served by the center site.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .radio import AntennaPattern, LinkState, antenna_gain, omni_gain, path_loss

SECTOR_AZIMUTHS_DEG = (0.0, 120.0, 240.0)


@dataclass(frozen=True)
class Cell:
    cell_id: int
    site_id: int
    x_m: float
    y_m: float
    azimuth_deg: float


@dataclass(frozen=True)
class UeDrop:
    ue_id: int
    x_m: float
    y_m: float
    drop_cell_id: int


@dataclass(frozen=True)
class Layout:
    """Static geometry plus the coupling matrix of one drop."""
    cells: tuple[Cell, ...]
    ues: tuple[UeDrop, ...]
    links: dict[tuple[int, int], LinkState]
    serving_cell: dict[int, int]

    def coupling_loss_db(self, ue_id: int, cell_id: int) -> float:
        return self.links[(ue_id, cell_id)].coupling_loss_db

    def center_site_ue_ids(self) -> list[int]:
        """UEs served by a site-0 sector; the measurement set without wraparound."""
        by_cell = {c.cell_id: c for c in self.cells}
        return [u.ue_id for u in self.ues
                if by_cell[self.serving_cell[u.ue_id]].site_id == 0]


def hex_site_centers(rings: int, isd_m: float) -> list[tuple[float, float]]:
    """Site centers of a hex lattice with `rings` tiers around the origin.

    Yields 1 + 3*rings*(rings+1) sites; neighbor spacing is exactly isd_m.
    """
    if rings < 0:
        raise ConfigError(f"rings must be >= 0, got {rings}")
    if isd_m <= 0:
        raise ConfigError(f"inter-site distance must be positive, got {isd_m}")
    centers = []
    for q in range(-rings, rings + 1):
        for r in range(-rings, rings + 1):
            if max(abs(q), abs(r), abs(q + r)) > rings:
                continue
            x = isd_m * (q + 0.5 * r)
            y = isd_m * r * math.sqrt(3.0) / 2.0
            centers.append((x, y))
    # stable order: ring radius, then angle
    centers.sort(key=lambda p: (round(math.hypot(*p), 6),
                                round(math.atan2(p[1], p[0]), 9)))
    return centers


def point_in_hexagon(x: float, y: float, isd_m: float) -> bool:
    """Inside the Voronoi hexagon (inradius isd/2) of a site at the origin."""
    for k in range(3):
        ang = math.radians(60.0 * k)
        if abs(x * math.cos(ang) + y * math.sin(ang)) > isd_m / 2.0 + 1e-9:
            return False
    return True


def _sample_in_sector(rng: np.random.Generator, isd_m: float, azimuth_deg: float,
                      n_sectors: int, min_dist_m: float) -> tuple[float, float]:
    # rejection sampling: hexagon, sector wedge, minimum distance
    r_max = isd_m / math.sqrt(3.0)
    for _ in range(10000):
        x = rng.uniform(-r_max, r_max)
        y = rng.uniform(-r_max, r_max)
        d = math.hypot(x, y)
        if d < min_dist_m or not point_in_hexagon(x, y, isd_m):
            continue
        if n_sectors > 1:
            off = (math.degrees(math.atan2(y, x)) - azimuth_deg + 180.0) % 360.0 - 180.0
            if abs(off) > 180.0 / n_sectors:
                continue
        return x, y
    raise ConfigError("could not place UE; check isd/min-distance settings")


def wrap_offsets(rings: int, isd_m: float) -> list[tuple[float, float]]:
    """Translation images under which a rings-r cluster tiles the plane.

    The cluster of 1+3r(r+1) sites repeats along the lattice vectors with
    axial coordinates (r, r+1) and (-(r+1), 2r+1); with wraparound on,
    each UE sees every site at its nearest image.
    """
    r = rings
    basis = [(r, r + 1), (-(r + 1), 2 * r + 1)]
    cart = [(isd_m * (q + 0.5 * a), isd_m * a * math.sqrt(3.0) / 2.0)
            for q, a in basis]
    out = []
    for m in (-1, 0, 1):
        for n in (-1, 0, 1):
            out.append((m * cart[0][0] + n * cart[1][0],
                        m * cart[0][1] + n * cart[1][1]))
    return out


def _link_state(ue: UeDrop, cell: Cell, shadow_db: float, *,
                pattern: AntennaPattern, omni: bool, enb_height_m: float,
                ue_height_m: float, body_loss_db: float,
                ue_antenna_gain_db: float,
                offsets: list[tuple[float, float]] | None = None) -> LinkState:
    dx = ue.x_m - cell.x_m
    dy = ue.y_m - cell.y_m
    if offsets is not None:
        dx, dy = min(((dx - ox, dy - oy) for ox, oy in offsets),
                     key=lambda v: math.hypot(*v))
    dist = math.hypot(dx, dy)
    elevation = math.degrees(math.atan2(enb_height_m - ue_height_m, max(dist, 1.0)))
    if omni:
        gain = omni_gain(pattern, elevation)
    else:
        az_off = math.degrees(math.atan2(dy, dx)) - cell.azimuth_deg
        gain = antenna_gain(pattern, az_off, elevation)
    return LinkState(distance_m=dist,
                     path_loss_db=path_loss(dist),
                     shadow_db=shadow_db,
                     body_loss_db=body_loss_db,
                     antenna_gain_db=gain,
                     ue_antenna_gain_db=ue_antenna_gain_db)


def build_layout(n_ues: int, rng: np.random.Generator, *,
                 rings: int = 0,
                 isd_m: float = 500.0,
                 sectors_per_site: int = 3,
                 min_drop_distance_m: float = 35.0,
                 shadow_sigma_db: float = 8.0,
                 enb_height_m: float = 30.0,
                 ue_height_m: float = 1.5,
                 body_loss_db: float = 1.0,
                 ue_antenna_gain_db: float = -3.0,
                 wraparound: bool = False,
                 pattern: AntennaPattern | None = None) -> Layout:
    """Drop `n_ues` uniformly (round-robin across cells) and attach by min CL."""
    if n_ues <= 0:
        raise ConfigError(f"need at least one UE, got {n_ues}")
    if sectors_per_site not in (1, 3):
        raise ConfigError(f"sectors_per_site must be 1 or 3, got {sectors_per_site}")
    if pattern is None:
        pattern = AntennaPattern()
    omni = sectors_per_site == 1

    sites = hex_site_centers(rings, isd_m)
    cells = []
    for site_id, (sx, sy) in enumerate(sites):
        for s in range(sectors_per_site):
            cells.append(Cell(cell_id=len(cells), site_id=site_id,
                              x_m=sx, y_m=sy,
                              azimuth_deg=SECTOR_AZIMUTHS_DEG[s]))

    ues = []
    for ue_id in range(n_ues):
        cell = cells[ue_id % len(cells)]
        x, y = _sample_in_sector(rng, isd_m, cell.azimuth_deg,
                                 sectors_per_site, min_drop_distance_m)
        ues.append(UeDrop(ue_id=ue_id, x_m=cell.x_m + x, y_m=cell.y_m + y,
                          drop_cell_id=cell.cell_id))

    # one shadowing value per UE/site pair, shared by that site's sectors
    shadows = {(u.ue_id, s): float(rng.normal(0.0, shadow_sigma_db))
               for u in ues for s in range(len(sites))}

    offsets = wrap_offsets(rings, isd_m) if wraparound else None
    links: dict[tuple[int, int], LinkState] = {}
    serving: dict[int, int] = {}
    for ue in ues:
        best_cell, best_cl = -1, math.inf
        for cell in cells:
            ls = _link_state(ue, cell, shadows[(ue.ue_id, cell.site_id)],
                             pattern=pattern, omni=omni,
                             enb_height_m=enb_height_m, ue_height_m=ue_height_m,
                             body_loss_db=body_loss_db,
                             ue_antenna_gain_db=ue_antenna_gain_db,
                             offsets=offsets)
            links[(ue.ue_id, cell.cell_id)] = ls
            if ls.coupling_loss_db < best_cl:
                best_cell, best_cl = cell.cell_id, ls.coupling_loss_db
        serving[ue.ue_id] = best_cell

    return Layout(cells=tuple(cells), ues=tuple(ues), links=links,
                  serving_cell=serving)
