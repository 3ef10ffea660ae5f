"""Per-device protocol state: RRC lifecycle, DRX, random access, the
half-duplex subframe calendar and uplink power control.

A Cat-M device has a single RF chain.  The calendar is the one source of
truth for what the radio does in each TTI; every scheduling decision must
book here, and a booking fails if it would force simultaneous TX and RX or
violate the retuning guard between opposite directions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

from .errors import ConfigError, InputError
from .timing import GUARD_TTIS

TX = "TX"
RX = "RX"
GUARD = "GUARD"
FREE = "FREE"


class RrcState(Enum):
    IDLE = "IDLE"
    ACCESSING = "ACCESSING"   # random access in progress
    CONNECTED = "CONNECTED"


@dataclass
class Conflict:
    tti: int
    direction: str           # direction already booked at / adjacent to tti


class HalfDuplexCalendar:
    """Booked subframes of one device, with TX/RX exclusivity and a one-TTI
    retuning guard between opposite directions."""

    def __init__(self, full_duplex: bool = False):
        self._booked: dict[str, set[int]] = {TX: set(), RX: set()}
        self.full_duplex = full_duplex
        self.violations = 0  # stays 0 unless check bypass bugs exist

    def _at(self, tti: int) -> str | None:
        for d in (TX, RX):
            if tti in self._booked[d]:
                return d
        return None

    def state(self, tti: int) -> str:
        s = self._at(tti)
        if s is not None:
            return s
        if not self.full_duplex:
            for adj in (tti - 1, tti + 1):
                other = self._at(adj)
                if other is not None:
                    return GUARD
        return FREE

    def check(self, ttis, direction: str) -> Conflict | None:
        """First blocking TTI for booking `direction` over `ttis`, or None."""
        if direction not in (TX, RX):
            raise InputError(f"direction must be TX or RX, got {direction!r}")
        wanted = set(ttis)
        if not wanted:
            raise InputError("booking needs at least one TTI")
        other_dir = RX if direction == TX else TX
        for t in sorted(wanted):
            if t in self._booked[direction]:
                # one channel per direction at a time
                return Conflict(tti=t, direction=direction)
            if self.full_duplex:
                continue
            if t in self._booked[other_dir]:
                return Conflict(tti=t, direction=other_dir)
            for adj in (t - GUARD_TTIS, t + GUARD_TTIS):
                if adj in wanted:
                    continue
                if adj in self._booked[other_dir]:
                    return Conflict(tti=t, direction=other_dir)
        return None

    def book(self, ttis, direction: str) -> Conflict | None:
        ttis = list(ttis)
        c = self.check(ttis, direction)
        if c is not None:
            return c
        self._booked[direction].update(ttis)
        return None

    def cancel(self, ttis, direction: str | None = None) -> None:
        dirs = (direction,) if direction is not None else (TX, RX)
        for d in dirs:
            self._booked[d].difference_update(ttis)

    def booked_ttis(self) -> dict[int, str]:
        out: dict[int, str] = {}
        for d in (TX, RX):
            for t in self._booked[d]:
                out[t] = d if t not in out else out[t] + "+" + d
        return out

    def prune_before(self, tti: int) -> None:
        for d in (TX, RX):
            self._booked[d] = {t for t in self._booked[d]
                               if t >= tti - GUARD_TTIS}

    def audit(self) -> None:
        """Re-validate the retained span against the half-duplex rules."""
        if self.full_duplex:
            return
        for t in self._booked[TX]:
            if t in self._booked[RX]:
                raise InputError(f"TX and RX both booked at tti {t}")
            for adj in (t - GUARD_TTIS, t + GUARD_TTIS):
                if adj in self._booked[RX]:
                    raise InputError(f"guard violation between tti {t} (TX) "
                                     f"and {adj} (RX)")


@dataclass
class PowerControlState:
    """Open/closed loop PUSCH power control.

    tx_power = min(p_max, p0 + 10log10(n_prbs) + alpha*CL + accum); the
    closed-loop accumulator is forced to 0 in OLPC mode and cleared on RRC
    release in CLPC mode, so a device that reconnects per report never
    diverges from open loop.
    """
    mode: str = "olpc"            # "olpc" | "clpc"
    p0_dbm: float = -100.0
    alpha: float = 1.0
    p_max_dbm: float = 20.0      # Cat-M reduced power class
    tpc_accum_db: float = 0.0

    def __post_init__(self):
        if self.mode not in ("olpc", "clpc"):
            raise ConfigError(f"power control mode {self.mode!r} unknown")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in [0,1], got {self.alpha}")

    def tx_power_dbm(self, coupling_loss_db: float, n_prbs: int) -> float:
        if n_prbs < 1:
            raise InputError(f"n_prbs must be >= 1, got {n_prbs}")
        accum = self.tpc_accum_db if self.mode == "clpc" else 0.0
        want = (self.p0_dbm + 10.0 * math.log10(n_prbs)
                + self.alpha * coupling_loss_db + accum)
        return min(self.p_max_dbm, want)

    def apply_tpc(self, step_db: float) -> None:
        if self.mode == "clpc":
            self.tpc_accum_db += step_db

    def reset(self) -> None:
        self.tpc_accum_db = 0.0


@dataclass(frozen=True)
class DrxConfig:
    cycle_ms: int
    on_duration_ms: int

    def __post_init__(self):
        if self.cycle_ms <= 0 or not 0 < self.on_duration_ms <= self.cycle_ms:
            raise ConfigError("DRX on-duration must fit inside a positive cycle")


@dataclass(frozen=True)
class CeConfig:
    """Coverage-enhancement repetition assignment for one device."""
    rl_mpdcch: int = 1
    rl_pucch: int = 1
    rl_data_ladder: tuple[int, ...] = (1, 2, 4, 8, 16, 32, 64, 128, 256)
    agl: int = 2
    preamble_repetitions: int = 1


# (coupling loss upper bound, value) tiers; None = no upper bound
AGL_TIERS = ((130.0, 4), (140.0, 8), (150.0, 16), (None, 24))
RL_MPDCCH_TIERS = ((130.0, 1), (140.0, 2), (150.0, 4), (None, 8))
RL_PUCCH_TIERS = ((130.0, 1), (140.0, 2), (150.0, 4), (None, 8))
PREAMBLE_TIERS = ((130.0, 1), (140.0, 4), (150.0, 16), (None, 64))


def tier_value(tiers, coupling_loss_db: float):
    for bound, value in tiers:
        if bound is None or coupling_loss_db < bound:
            return value
    raise InputError("tier table must end with an unbounded entry")


def ce_config_for(coupling_loss_db: float,
                  rl_data_ladder=(1, 2, 4, 8, 16, 32, 64, 128, 256)) -> CeConfig:
    return CeConfig(
        rl_mpdcch=tier_value(RL_MPDCCH_TIERS, coupling_loss_db),
        rl_pucch=tier_value(RL_PUCCH_TIERS, coupling_loss_db),
        rl_data_ladder=tuple(rl_data_ladder),
        agl=tier_value(AGL_TIERS, coupling_loss_db),
        preamble_repetitions=tier_value(PREAMBLE_TIERS, coupling_loss_db))


@dataclass
class RachConfig:
    """Simplified 4-step random access; the message exchange after the
    preamble is kept as fixed delays instead of scheduled transmissions."""
    response_delay_ms: int = 12   # last preamble TTI -> RAR processed
    msg_exchange_ms: int = 15     # RAR -> contention resolved, RRC connected
    backoff_ms: int = 20
    max_attempts: int = 10


@dataclass
class RachAttempt:
    started_tti: int
    attempts: int = 0
    overhead_prb_ttis: int = 0
    connect_tti: int | None = None


class UeContext:
    """Protocol state of one device (identity and radio state live in the
    engine; this class owns RRC/DRX/RACH/calendar/power control)."""

    def __init__(self, ue_id: int, ce: CeConfig, pc: PowerControlState,
                 dormancy_timer_ms: int = 2000, drx: DrxConfig | None = None,
                 full_duplex: bool = False):
        self.ue_id = ue_id
        self.ce = ce
        self.pc = pc
        self.dormancy_timer_ms = dormancy_timer_ms
        self.drx = drx
        self.calendar = HalfDuplexCalendar(full_duplex=full_duplex)
        self.rrc = RrcState.IDLE
        self.last_activity_tti: int | None = None
        self.connected_since_tti: int | None = None
        self.rach: RachAttempt | None = None
        self.releases = 0
        self.rach_attempts_total = 0
        self.rach_overhead_total = 0

    # -- activity / dormancy ------------------------------------------------

    def touch(self, tti: int) -> None:
        """Record data activity; postpones the dormancy release."""
        self.last_activity_tti = tti

    def dormancy_deadline(self) -> int | None:
        if self.rrc is not RrcState.CONNECTED or self.last_activity_tti is None:
            return None
        return self.last_activity_tti + self.dormancy_timer_ms

    def maybe_release(self, tti: int, busy: bool) -> bool:
        """Release the connection when the dormancy timer expired and no
        data is pending or in flight."""
        dl = self.dormancy_deadline()
        if dl is None or tti < dl or busy:
            return False
        self.release(tti)
        return True

    def release(self, tti: int) -> None:
        self.rrc = RrcState.IDLE
        self.connected_since_tti = None
        self.last_activity_tti = None
        self.pc.reset()
        self.releases += 1

    # -- DRX ----------------------------------------------------------------

    def monitoring(self, tti: int, harq_active: bool = False) -> bool:
        """True when the device watches MPDCCH this TTI."""
        if self.rrc is not RrcState.CONNECTED:
            return False
        if self.drx is None or harq_active:
            return True
        anchor = self.connected_since_tti or 0
        return (tti - anchor) % self.drx.cycle_ms < self.drx.on_duration_ms

    def next_monitoring_tti(self, tti: int) -> int:
        """Earliest TTI >= tti inside an on-duration."""
        if self.drx is None:
            return tti
        anchor = self.connected_since_tti or 0
        off = (tti - anchor) % self.drx.cycle_ms
        if off < self.drx.on_duration_ms:
            return tti
        return tti + (self.drx.cycle_ms - off)

    # -- RACH ---------------------------------------------------------------

    def start_access(self, tti: int) -> None:
        if self.rrc is not RrcState.IDLE:
            raise InputError("random access requires IDLE")
        self.rrc = RrcState.ACCESSING
        self.rach = RachAttempt(started_tti=tti)

    def connect(self, tti: int) -> None:
        self.rrc = RrcState.CONNECTED
        self.connected_since_tti = tti
        self.last_activity_tti = tti
        self.rach = None
