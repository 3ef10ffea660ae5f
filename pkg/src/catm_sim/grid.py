"""Carrier layout and per-TTI resource bookkeeping.

A Cat-M deployment parks its devices in one 6-PRB narrowband of the host
LTE carrier.  Because the legacy scheduler allocates in resource block
groups (RBGs), every RBG that overlaps the narrowband is lost to legacy
traffic; narrowbands differ in how many PRBs they waste, so placement
matters.  The ResourceGrid then tracks, for the chosen narrowband, which
PRBs and MPDCCH aggregation units are booked in each future TTI.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

from .errors import ConfigError, InputError

MPDCCH_POOL_UNITS = 24          # aggregation units per TTI per narrowband
NARROWBAND_PRBS = 6
AGG_LEVELS = (2, 4, 8, 16, 24)  # valid MPDCCH aggregation levels


def _load_layout_table() -> dict:
    raw = resources.files("catm_sim.data").joinpath("narrowbands.json").read_text()
    return json.loads(raw)["bandwidths"]


_LAYOUT_TABLE = _load_layout_table()


@dataclass(frozen=True)
class Narrowband:
    index: int
    first_prb: int

    @property
    def prbs(self) -> range:
        return range(self.first_prb, self.first_prb + NARROWBAND_PRBS)


@dataclass(frozen=True)
class BandwidthProfile:
    """Host carrier description: PRB count and legacy RBG size."""
    total_prbs: int
    rbg_size: int

    @classmethod
    def for_bandwidth(cls, total_prbs: int,
                      rbg_size: int | None = None) -> "BandwidthProfile":
        key = str(total_prbs)
        if key not in _LAYOUT_TABLE:
            raise ConfigError(
                f"unsupported carrier size {total_prbs} PRBs; "
                f"known: {sorted(int(k) for k in _LAYOUT_TABLE)}")
        size = rbg_size if rbg_size is not None else _LAYOUT_TABLE[key]["rbg_size"]
        if size < 1:
            raise ConfigError(f"rbg_size must be >= 1, got {size}")
        return cls(total_prbs=total_prbs, rbg_size=size)

    def rbgs(self) -> list[range]:
        """RBG index -> PRB range; the last group may be short."""
        out = []
        for start in range(0, self.total_prbs, self.rbg_size):
            out.append(range(start, min(start + self.rbg_size, self.total_prbs)))
        return out


def enumerate_narrowbands(profile: BandwidthProfile) -> list[Narrowband]:
    starts = _LAYOUT_TABLE[str(profile.total_prbs)]["starts"]
    return [Narrowband(i, s) for i, s in enumerate(starts)]


def blocked_prbs(profile: BandwidthProfile, nb: Narrowband) -> int:
    """PRBs lost to the legacy scheduler: total size of all RBGs that
    overlap the narrowband."""
    nb_prbs = set(nb.prbs)
    lost = 0
    for rbg in profile.rbgs():
        if nb_prbs.intersection(rbg):
            lost += len(rbg)
    return lost


def choose_narrowband(profile: BandwidthProfile) -> Narrowband:
    """Pick the narrowband wasting the fewest legacy PRBs; ties go to the
    highest index (band edge)."""
    nbs = enumerate_narrowbands(profile)
    best = None
    best_waste = None
    for nb in nbs:
        w = blocked_prbs(profile, nb)
        if best is None or w < best_waste or (w == best_waste and nb.index > best.index):
            best, best_waste = nb, w
    return best


@dataclass(frozen=True)
class Reservation:
    ttis: tuple[int, ...]
    plane: str              # "ul" | "dl" | "mpdcch"
    prbs: tuple[int, ...]   # PRB indices (empty for mpdcch)
    units: int              # aggregation units (0 for prb planes)
    owner: object


@dataclass(frozen=True)
class Rejection:
    tti: int
    constraint: str         # "prb" | "mpdcch"


@dataclass
class _TtiUsage:
    ul_mask: int = 0
    dl_mask: int = 0
    mpdcch_used: int = 0


class ResourceGrid:
    """Occupancy of the narrowband across TTIs, split into an UL PRB plane,
    a DL PRB plane and the MPDCCH aggregation-unit pool.

    Reservations are atomic: a request spanning several TTIs either books
    all of them or none and reports the first binding constraint.
    """

    FULL_MASK = (1 << NARROWBAND_PRBS) - 1

    def __init__(self):
        self._usage: dict[int, _TtiUsage] = {}
        # lifetime conservation audit
        self.booked_prb_ttis = 0
        self.released_prb_ttis = 0
        self.booked_mpdcch_unit_ttis = 0

    def _at(self, tti: int) -> _TtiUsage:
        u = self._usage.get(tti)
        if u is None:
            u = self._usage[tti] = _TtiUsage()
        return u

    def free_prbs(self, tti: int, plane: str) -> int:
        u = self._usage.get(tti)
        if u is None:
            return NARROWBAND_PRBS
        mask = u.ul_mask if plane == "ul" else u.dl_mask
        return NARROWBAND_PRBS - bin(mask).count("1")

    def free_mpdcch_units(self, tti: int) -> int:
        u = self._usage.get(tti)
        return MPDCCH_POOL_UNITS - (u.mpdcch_used if u else 0)

    def reserve_prbs(self, ttis, plane: str, n_prbs: int,
                     owner) -> Reservation | Rejection:
        """Book the same n_prbs lowest free PRBs in every listed TTI."""
        if plane not in ("ul", "dl"):
            raise InputError(f"plane must be 'ul' or 'dl', got {plane!r}")
        if not 1 <= n_prbs <= NARROWBAND_PRBS:
            raise InputError(f"n_prbs must be in 1..{NARROWBAND_PRBS}, got {n_prbs}")
        ttis = tuple(ttis)
        if not ttis:
            raise InputError("reservation needs at least one TTI")
        # a repeated transmission sits on the same PRBs in every TTI
        # (no frequency hopping), so the set must be free across the span
        occupied = 0
        for t in ttis:
            u = self._usage.get(t)
            cur = 0 if u is None else (u.ul_mask if plane == "ul" else u.dl_mask)
            occupied |= cur
            if NARROWBAND_PRBS - bin(occupied).count("1") < n_prbs:
                return Rejection(tti=t, constraint="prb")
        chosen = []
        for prb in range(NARROWBAND_PRBS):
            if not occupied & (1 << prb):
                chosen.append(prb)
                if len(chosen) == n_prbs:
                    break
        bits = 0
        for prb in chosen:
            bits |= 1 << prb
        for t in ttis:
            u = self._at(t)
            if plane == "ul":
                u.ul_mask |= bits
            else:
                u.dl_mask |= bits
        self.booked_prb_ttis += n_prbs * len(ttis)
        return Reservation(ttis=ttis, plane=plane, prbs=tuple(chosen),
                           units=0, owner=owner)

    def reserve_mpdcch(self, ttis, units: int, owner) -> Reservation | Rejection:
        """Book `units` aggregation units in every listed TTI (an AGL-a
        grant with repetition r consumes a units in each of r TTIs)."""
        if units < 1:
            raise InputError(f"mpdcch units must be >= 1, got {units}")
        if units > MPDCCH_POOL_UNITS:
            raise InputError(
                f"mpdcch units {units} exceed the pool of {MPDCCH_POOL_UNITS}")
        ttis = tuple(ttis)
        if not ttis:
            raise InputError("reservation needs at least one TTI")
        for t in ttis:
            if self.free_mpdcch_units(t) < units:
                return Rejection(tti=t, constraint="mpdcch")
        for t in ttis:
            self._at(t).mpdcch_used += units
        self.booked_mpdcch_unit_ttis += units * len(ttis)
        return Reservation(ttis=ttis, plane="mpdcch", prbs=(), units=units,
                           owner=owner)

    def release(self, res: Reservation) -> None:
        """Return a reservation's resources (exact inverse of the booking)."""
        if res.plane == "mpdcch":
            for t in res.ttis:
                u = self._usage.get(t)
                if u is None or u.mpdcch_used < res.units:
                    raise InputError("release does not match an active booking")
                u.mpdcch_used -= res.units
            return
        bits = 0
        for p in res.prbs:
            bits |= 1 << p
        for t in res.ttis:
            u = self._usage.get(t)
            cur = u.ul_mask if res.plane == "ul" else u.dl_mask
            if u is None or (cur & bits) != bits:
                raise InputError("release does not match an active booking")
            if res.plane == "ul":
                u.ul_mask &= ~bits
            else:
                u.dl_mask &= ~bits
        self.released_prb_ttis += len(res.prbs) * len(res.ttis)

    def prune_before(self, tti: int) -> None:
        """Drop bookkeeping for TTIs that can no longer be scheduled."""
        for t in [t for t in self._usage if t < tti]:
            del self._usage[t]

    def audit(self) -> None:
        for t, u in self._usage.items():
            if u.mpdcch_used > MPDCCH_POOL_UNITS or u.mpdcch_used < 0:
                raise InputError(f"mpdcch pool corrupt at tti {t}")
            if u.ul_mask > self.FULL_MASK or u.dl_mask > self.FULL_MASK:
                raise InputError(f"prb mask corrupt at tti {t}")
