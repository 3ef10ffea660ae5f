"""Per-cell MAC: grant timelines, HARQ bookkeeping, link adaptation and
the VoIP aggregation policy.

Timing arithmetic is inclusive: a channel that starts at TTI n with R
repetitions occupies [n, n+R-1], and every cross-channel offset counts
from the last occupied TTI.  With the fixed offsets below an UL exchange
with single repetitions spans exactly 8 ms (grant at 0, data at 4, next
grant at 8), which is what lets three processes interleave on a
half-duplex device while eight fit on a full-duplex one.
"""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources

from . import ue as ue_mod
from .errors import ConfigError, InputError
from .grid import NARROWBAND_PRBS, ResourceGrid, Rejection
from .radio import REPETITION_LADDER, BlerModel, combining_gain_db
from .timing import (DATA_TO_FEEDBACK, FEEDBACK_TO_REGRANT, MPDCCH_TO_PDSCH,
                     MPDCCH_TO_PUSCH)
from .traffic import DL, UL, Packet

MAX_TBS_BITS = 1000
MCS_COUNT = 16
HARQ_PROCESSES = 8
VOICE_INTERVAL_MS = 20


def load_tbs_table() -> tuple[int, ...]:
    """Transport block bits per PRB, indexed by MCS."""
    path = resources.files("catm_sim.data").joinpath("tbs_table.json")
    with path.open("r", encoding="utf-8") as fh:
        data = json.load(fh)
    bpp = tuple(int(x) for x in data["bits_per_prb"])
    if len(bpp) != MCS_COUNT:
        raise ConfigError(f"tbs table must list {MCS_COUNT} MCS entries")
    if bpp[0] <= 0 or any(b > a for a, b in zip(bpp[1:], bpp)):
        raise ConfigError("tbs table must be positive and non-decreasing")
    return bpp


def tbs_bits(bpp: tuple[int, ...], mcs: int, n_prbs: int,
             max_tbs: int = MAX_TBS_BITS) -> int:
    if not 0 <= mcs < len(bpp):
        raise InputError(f"mcs out of range: {mcs}")
    if not 1 <= n_prbs <= NARROWBAND_PRBS:
        raise InputError(f"n_prbs must be in 1..{NARROWBAND_PRBS}, got {n_prbs}")
    return min(bpp[mcs] * n_prbs, max_tbs)


# --------------------------------------------------------------------------
# grant timelines


@dataclass(frozen=True)
class Timeline:
    """Inclusive [first, last] spans of every channel of one HARQ exchange."""
    direction: str
    mpdcch: tuple[int, int]
    data: tuple[int, int]
    feedback: tuple[int, int] | None   # PUCCH span, DL only
    regrant_tti: int                   # earliest next MPDCCH for this process

    @property
    def cycle_ms(self) -> int:
        return self.regrant_tti - self.mpdcch[0]

    def ue_rx_ttis(self) -> list[int]:
        ttis = list(range(self.mpdcch[0], self.mpdcch[1] + 1))
        if self.direction == DL:
            ttis += list(range(self.data[0], self.data[1] + 1))
        return ttis

    def ue_tx_ttis(self) -> list[int]:
        if self.direction == UL:
            return list(range(self.data[0], self.data[1] + 1))
        return list(range(self.feedback[0], self.feedback[1] + 1))


def _check_rl(name: str, value: int) -> None:
    if value not in REPETITION_LADDER:
        raise ConfigError(f"{name} must be on the repetition ladder, got {value}")


def derive_timeline(direction: str, rl_mpdcch: int, rl_data: int,
                    rl_feedback: int | None = None,
                    start_tti: int = 0) -> Timeline:
    """Lay out one grant: control, data, and (DL) feedback occupancy."""
    if direction not in (UL, DL):
        raise ConfigError(f"direction must be ul or dl, got {direction!r}")
    _check_rl("rl_mpdcch", rl_mpdcch)
    _check_rl("rl_data", rl_data)
    m_first = start_tti
    m_last = m_first + rl_mpdcch - 1
    if direction == UL:
        d_first = m_last + MPDCCH_TO_PUSCH
        d_last = d_first + rl_data - 1
        return Timeline(UL, (m_first, m_last), (d_first, d_last), None,
                        d_last + FEEDBACK_TO_REGRANT)
    if rl_feedback is None:
        raise ConfigError("downlink timelines need a feedback repetition length")
    _check_rl("rl_feedback", rl_feedback)
    d_first = m_last + MPDCCH_TO_PDSCH
    d_last = d_first + rl_data - 1
    f_first = d_last + DATA_TO_FEEDBACK
    f_last = f_first + rl_feedback - 1
    return Timeline(DL, (m_first, m_last), (d_first, d_last),
                    (f_first, f_last), f_last + FEEDBACK_TO_REGRANT)


def max_concurrent_harq(rl_mpdcch: int, rl_data: int,
                        rl_feedback: int | None, direction: str,
                        period_ms: int, full_duplex: bool = False) -> int:
    """Largest number of staggered copies of one grant pattern that fit in a
    period without violating the device's duplex constraints.

    Exhaustive: patterns are placed at every offset combination (first one
    pinned at 0, which any rotation allows) and the best count is returned.
    """
    if period_ms <= 0:
        raise ConfigError(f"period must be positive, got {period_ms}")
    tl = derive_timeline(direction, rl_mpdcch, rl_data, rl_feedback, 0)
    period = max(int(period_ms), tl.cycle_ms)
    rx_pat = tl.ue_rx_ttis()
    tx_pat = tl.ue_tx_ttis()

    bound = period // max(1, len(rx_pat))
    bound = min(bound, period // max(1, len(tx_pat)))
    if not full_duplex:
        bound = min(bound, period // (len(rx_pat) + len(tx_pat)))
    if bound <= 1:
        return 1 if bound == 1 else 0

    guard = ue_mod.GUARD_TTIS

    def fits(offset: int, rx_used: set[int], tx_used: set[int]) -> bool:
        for t in rx_pat:
            tt = (offset + t) % period
            if tt in rx_used:
                return False
            if not full_duplex:
                for g in range(-guard, guard + 1):
                    if (tt + g) % period in tx_used:
                        return False
        for t in tx_pat:
            tt = (offset + t) % period
            if tt in tx_used:
                return False
            if not full_duplex:
                for g in range(-guard, guard + 1):
                    if (tt + g) % period in rx_used:
                        return False
        return True

    def place(offset: int, rx_used: set[int], tx_used: set[int], on: bool):
        for t in rx_pat:
            tt = (offset + t) % period
            rx_used.add(tt) if on else rx_used.discard(tt)
        for t in tx_pat:
            tt = (offset + t) % period
            tx_used.add(tt) if on else tx_used.discard(tt)

    best = 1
    rx_used: set[int] = set()
    tx_used: set[int] = set()
    place(0, rx_used, tx_used, True)

    def extend(next_offset: int, count: int) -> None:
        nonlocal best
        best = max(best, count)
        if count == bound:
            return
        for off in range(next_offset, period):
            if count + (period - off) <= best:
                break
            if fits(off, rx_used, tx_used):
                place(off, rx_used, tx_used, True)
                extend(off + 1, count + 1)
                place(off, rx_used, tx_used, False)
                if best == bound:
                    return

    extend(1, 1)
    return best


# --------------------------------------------------------------------------
# link adaptation


@dataclass
class LinkAdaptationState:
    """Outer-loop margin on top of the measured SINR estimate.

    The down-step is tied to the up-step so that the drift is zero exactly
    at the target first-attempt error rate: accepting a fraction t of
    negative feedback balances (1-t) positive steps.
    """
    ibler_target: float = 0.10
    step_up_db: float = 0.1
    olla_offset_db: float = 0.0
    clamp_db: float = 10.0
    initial_mcs: int = 5

    def __post_init__(self):
        if not 0.0 < self.ibler_target < 1.0:
            raise ConfigError("ibler_target must be in (0, 1)")
        if self.step_up_db <= 0.0 or self.clamp_db <= 0.0:
            raise ConfigError("olla steps and clamp must be positive")
        if not 0 <= self.initial_mcs < MCS_COUNT:
            raise ConfigError(f"initial_mcs out of range: {self.initial_mcs}")

    @property
    def step_down_db(self) -> float:
        return self.step_up_db * (1.0 - self.ibler_target) / self.ibler_target

    def reset(self) -> None:
        self.olla_offset_db = 0.0


def outer_loop_update(la: LinkAdaptationState, ack: bool) -> float:
    """Nudge the offset on first-transmission feedback; returns the offset."""
    if ack:
        la.olla_offset_db += la.step_up_db
    else:
        la.olla_offset_db -= la.step_down_db
    la.olla_offset_db = max(-la.clamp_db, min(la.clamp_db, la.olla_offset_db))
    return la.olla_offset_db


@dataclass(frozen=True)
class Selection:
    rl_data: int
    mcs: int
    n_prbs: int
    tbs_bits: int
    predicted_bler: float
    coverage_limited: bool = False


def select_transmission(queue_bits: int, sinr_per_prb_db, la: LinkAdaptationState,
                        bler_model: BlerModel, bpp: tuple[int, ...],
                        rl_ladder: tuple[int, ...],
                        max_prbs: int = NARROWBAND_PRBS,
                        max_tbs: int = MAX_TBS_BITS) -> Selection:
    """Cheapest transmission format predicted to meet the error target.

    Repetition levels are tried in ascending order; the first level with
    any compliant (mcs, n_prbs) combination wins, and within it the
    combination carrying the most bits (preferring more PRBs, then the
    lower code rate) is chosen.  `sinr_per_prb_db(n)` must already include
    the power split across n PRBs.  If even the top of the ladder cannot
    meet the target the device is coverage limited: it still gets the top
    level, at the most robust format available.
    """
    if queue_bits <= 0:
        raise InputError(f"queue_bits must be positive, got {queue_bits}")
    if not rl_ladder:
        raise ConfigError("empty repetition ladder")
    for rl in rl_ladder:
        _check_rl("rl_data", rl)

    def combo(rl: int, mcs: int, n: int) -> tuple[int, float]:
        carried = min(tbs_bits(bpp, mcs, n, max_tbs), queue_bits)
        eff = sinr_per_prb_db(n) + combining_gain_db(rl) + la.olla_offset_db
        return carried, bler_model.bler(eff, mcs, carried)

    for rl in sorted(rl_ladder):
        best = None
        for n in range(1, max_prbs + 1):
            for mcs in range(len(bpp)):
                carried, p = combo(rl, mcs, n)
                if p <= la.ibler_target:
                    key = (-carried, -n, mcs)
                    if best is None or key < best[0]:
                        best = (key, Selection(rl, mcs, n, carried, p))
        if best is not None:
            return best[1]

    rl = max(rl_ladder)
    fallback = None
    for n in range(1, max_prbs + 1):
        carried, p = combo(rl, 0, n)
        key = (p, -carried, n)
        if fallback is None or key < fallback[0]:
            fallback = (key, Selection(rl, 0, n, carried, p, True))
    return fallback[1]


# --------------------------------------------------------------------------
# VoIP aggregation


def aggregation_factor(harq_cycle_ms: int,
                       packet_interval_ms: int = VOICE_INTERVAL_MS) -> int:
    """Packets to bundle per block so the queue drains as fast as it fills."""
    if harq_cycle_ms <= 0 or packet_interval_ms <= 0:
        raise InputError("cycle and packet interval must be positive")
    return max(1, math.ceil(harq_cycle_ms / packet_interval_ms))


def split_equal(total_bits: int, max_tbs: int = MAX_TBS_BITS) -> list[int]:
    """Split an oversized bundle into equal blocks, largest first."""
    if total_bits <= 0:
        raise InputError(f"total_bits must be positive, got {total_bits}")
    n_seg = math.ceil(total_bits / max_tbs)
    base, rem = divmod(total_bits, n_seg)
    return [base + 1] * rem + [base] * (n_seg - rem)


@dataclass
class VoipBuild:
    packets: list[Packet]       # bundled, in queue order
    segment_bits: list[int]     # one transport block per entry
    violated: list[Packet]      # unreachable inside the budget, abandoned


def voip_build(packets, harq_cycle_ms: int, now_ms: int,
               max_tbs: int = MAX_TBS_BITS,
               packet_interval_ms: int = VOICE_INTERVAL_MS) -> VoipBuild:
    """Bundle the queue head for one exchange and weed out hopeless packets.

    A packet whose deadline falls before the predicted completion of the
    bundle (one cycle per segment, first attempt assumed good) can never
    make it and is abandoned rather than transmitted.
    """
    packets = list(packets)
    if not packets:
        raise InputError("voip build needs a non-empty queue")
    k = aggregation_factor(harq_cycle_ms, packet_interval_ms)
    taken = packets[:k]
    violated: list[Packet] = []
    while taken:
        total = sum(p.remaining_bits for p in taken)
        segments = split_equal(total, max_tbs) if total > 0 else []
        done_ms = now_ms + len(segments) * harq_cycle_ms
        hopeless = [p for p in taken
                    if p.deadline_ms is not None and p.deadline_ms < done_ms]
        if not hopeless:
            return VoipBuild(taken, segments, violated)
        violated += hopeless
        taken = [p for p in taken if p not in hopeless]
    return VoipBuild([], [], violated)


# --------------------------------------------------------------------------
# HARQ processes and grants


class HarqState(Enum):
    EMPTY = "empty"
    WAITING_TX = "waiting_tx"          # negative feedback received, retx due
    IN_FLIGHT = "in_flight"
    AWAITING_FEEDBACK = "awaiting_feedback"


@dataclass
class TransportBlock:
    ue_id: int
    direction: str
    mcs: int
    n_prbs: int
    tbs_bits: int
    rl_data: int                        # fixed for the life of the block
    created_tti: int
    contributions: list[tuple[Packet, int]]
    tx_power_dbm: float | None = None   # frozen at the first attempt (UL)
    coverage_limited: bool = False
    combined_energy: float = 0.0        # linear SINR sum over all copies
    total_copies: int = 0

    def add_attempt(self, sinr_per_copy_db: float) -> float:
        """Accumulate one attempt's copies; returns the combined SINR."""
        self.combined_energy += self.rl_data * 10.0 ** (sinr_per_copy_db / 10.0)
        self.total_copies += self.rl_data
        eff = 10.0 * math.log10(self.combined_energy)
        return eff - 0.5 * math.log2(self.total_copies)


@dataclass
class HarqProcess:
    process_id: int
    state: HarqState = HarqState.EMPTY
    block: TransportBlock | None = None
    attempt_count: int = 0
    max_attempts: int = 4
    first_arrival_tti: int | None = None

    def clear(self) -> None:
        self.state = HarqState.EMPTY
        self.block = None
        self.attempt_count = 0
        self.first_arrival_tti = None


@dataclass(frozen=True)
class Grant:
    ue_id: int
    direction: str
    mcs: int
    tbs_bits: int
    n_prbs: int
    agl: int
    rl_mpdcch: int
    rl_data: int
    rl_ack: int | None
    timeline: Timeline
    process_id: int
    new_data: bool
    coverage_limited: bool
    reservations: tuple


# --------------------------------------------------------------------------
# the per-cell scheduler


def _new_harq_bank() -> dict[str, list[HarqProcess]]:
    return {d: [HarqProcess(i) for i in range(HARQ_PROCESSES)]
            for d in (UL, DL)}


@dataclass
class UeLink:
    """Scheduler-side view of one attached device."""
    ue_id: int
    ctx: ue_mod.UeContext
    coupling_loss_db: float
    ul_sinr_db: object                 # callable: n_prbs -> per-PRB SINR estimate
    dl_sinr_db: object
    la_ul: LinkAdaptationState = field(default_factory=LinkAdaptationState)
    la_dl: LinkAdaptationState = field(default_factory=LinkAdaptationState)
    voip: bool = False
    max_attempts: int = 4
    forced_rl_data: int | None = None
    forced_mcs: int | None = None
    forced_n_prbs: int | None = None
    sr_pending: bool = False
    queues: dict[str, deque] = field(
        default_factory=lambda: {UL: deque(), DL: deque()})
    harq: dict[str, list[HarqProcess]] = field(default_factory=_new_harq_bank)

    def la(self, direction: str) -> LinkAdaptationState:
        return self.la_ul if direction == UL else self.la_dl

    def sinr_fn(self, direction: str):
        return self.ul_sinr_db if direction == UL else self.dl_sinr_db

    def harq_active(self) -> bool:
        return any(p.state is not HarqState.EMPTY
                   for d in (UL, DL) for p in self.harq[d])

    def queue_bits(self, direction: str) -> int:
        return sum(p.remaining_bits for p in self.queues[direction])

    def free_process(self, direction: str) -> HarqProcess | None:
        for p in self.harq[direction]:
            if p.state is HarqState.EMPTY:
                return p
        return None


class CellMac:
    """One cell's grant builder.

    Per TTI the candidate order is: pending retransmissions, devices that
    signalled for resources, voice bundles by earliest deadline, then
    everything else round-robin.  Each candidate books control units, data
    PRBs, (DL) feedback PRBs and the device calendar atomically, or is
    skipped until the next TTI.
    """

    def __init__(self, cell_id: int, grid: ResourceGrid | None = None,
                 bler_model: BlerModel | None = None,
                 bpp: tuple[int, ...] | None = None,
                 max_tbs: int = MAX_TBS_BITS):
        self.cell_id = cell_id
        self.grid = grid if grid is not None else ResourceGrid()
        self.bler_model = bler_model if bler_model is not None else BlerModel.from_file()
        self.bpp = bpp if bpp is not None else load_tbs_table()
        self.max_tbs = max_tbs
        self.links: dict[int, UeLink] = {}
        self.grants_committed = 0
        self.grants_skipped = 0
        self.blocks_delivered = 0
        self.blocks_dropped = 0
        self.voip_violated: list = []   # abandoned packets, drained by the engine
        self._rr_pos = 0
        self._sel_cache: dict[tuple, Selection] = {}

    # -- membership ---------------------------------------------------------

    def attach(self, link: UeLink) -> None:
        if link.ue_id in self.links:
            raise InputError(f"ue {link.ue_id} already attached")
        self.links[link.ue_id] = link

    def detach(self, ue_id: int) -> None:
        self.links.pop(ue_id, None)

    # -- the per-TTI entry point ---------------------------------------------

    def schedule_tti(self, tti: int) -> list[Grant]:
        grants: list[Grant] = []
        granted: set[tuple[int, str]] = set()

        for link, direction, proc in self._retx_candidates(tti):
            if (link.ue_id, direction) in granted:
                continue
            g = self._grant_retx(tti, link, direction, proc)
            if g is not None:
                grants.append(g)
                granted.add((link.ue_id, direction))

        rr_advanced = False
        for link, direction, rr_idx in self._new_candidates(tti):
            if (link.ue_id, direction) in granted:
                continue
            g = self._grant_new(tti, link, direction)
            if g is not None:
                grants.append(g)
                granted.add((link.ue_id, direction))
                if rr_idx is not None and not rr_advanced:
                    self._rr_pos = rr_idx + 1
                    rr_advanced = True

        return grants

    # -- candidate enumeration ------------------------------------------------

    def _connected(self, link: UeLink, tti: int) -> bool:
        return (link.ctx.rrc is ue_mod.RrcState.CONNECTED
                and link.ctx.monitoring(tti, harq_active=link.harq_active()))

    def _retx_candidates(self, tti: int):
        for ue_id in sorted(self.links):
            link = self.links[ue_id]
            if not self._connected(link, tti):
                continue
            for direction in (UL, DL):
                for proc in link.harq[direction]:
                    if proc.state is HarqState.WAITING_TX:
                        yield link, direction, proc

    def _new_candidates(self, tti: int):
        ready = [l for l in (self.links[u] for u in sorted(self.links))
                 if self._connected(l, tti)]

        # devices that had to ask for uplink resources go first
        for link in ready:
            if link.sr_pending and link.queue_bits(UL) > 0:
                yield link, UL, None

        voip = []
        for link in ready:
            if not link.voip:
                continue
            for direction in (UL, DL):
                q = link.queues[direction]
                if q:
                    head = q[0]
                    deadline = head.deadline_ms
                    key = (deadline if deadline is not None else head.arrival_ms,
                           link.ue_id, 0 if direction == UL else 1)
                    voip.append((key, link, direction))
        for _, link, direction in sorted(voip, key=lambda c: c[0]):
            yield link, direction, None

        plain = []
        for link in ready:
            if link.voip:
                continue
            for direction in (UL, DL):
                if link.queues[direction]:
                    plain.append((link, direction))
        if plain:
            pos = self._rr_pos % len(plain)
            for i in range(len(plain)):
                idx = (pos + i) % len(plain)
                link, direction = plain[idx]
                yield link, direction, idx

    # -- grant construction ----------------------------------------------------

    def _select(self, link: UeLink, direction: str, queue_bits: int) -> Selection:
        if link.forced_mcs is not None:
            la = link.la(direction)
            mcs = link.forced_mcs
            n = link.forced_n_prbs if link.forced_n_prbs is not None else 1
            ladder = link.ctx.ce.rl_data_ladder
            rl = (link.forced_rl_data if link.forced_rl_data is not None
                  else min(ladder))
            carried = min(tbs_bits(self.bpp, mcs, n, self.max_tbs), queue_bits)
            eff = (link.sinr_fn(direction)(n) + combining_gain_db(rl)
                   + la.olla_offset_db)
            return Selection(rl, mcs, n, carried,
                             self.bler_model.bler(eff, mcs, carried))
        # forcing only the repetition length pins the ladder but keeps
        # MCS / PRB adaptation (repetition sweeps)
        ladder = ((link.forced_rl_data,) if link.forced_rl_data is not None
                  else link.ctx.ce.rl_data_ladder)
        sinr_fn = link.sinr_fn(direction)
        la = link.la(direction)
        key = (link.ue_id, direction, sinr_fn(1), sinr_fn(NARROWBAND_PRBS),
               la.olla_offset_db, min(queue_bits, self.max_tbs), ladder)
        sel = self._sel_cache.get(key)
        if sel is None:
            sel = select_transmission(queue_bits, sinr_fn, la, self.bler_model,
                                      self.bpp, ladder,
                                      max_tbs=self.max_tbs)
            if len(self._sel_cache) > 4096:
                self._sel_cache.clear()
            self._sel_cache[key] = sel
        return sel

    def _grant_new(self, tti: int, link: UeLink, direction: str) -> Grant | None:
        queue = link.queues[direction]
        queue_bits = link.queue_bits(direction)
        if queue_bits <= 0:
            return None
        proc = link.free_process(direction)
        if proc is None:
            self.grants_skipped += 1
            return None
        sel = self._select(link, direction, queue_bits)
        target_bits = sel.tbs_bits

        if link.voip:
            cycle = derive_timeline(
                direction, link.ctx.ce.rl_mpdcch, sel.rl_data,
                link.ctx.ce.rl_pucch if direction == DL else None).cycle_ms
            build = voip_build(queue, cycle, tti, max_tbs=self.max_tbs)
            for p in build.violated:
                p.violated_ms = tti
                queue.remove(p)
                self.voip_violated.append(p)
            if not build.segment_bits:
                return None
            target_bits = min(sel.tbs_bits, build.segment_bits[0])

        grant = self._commit(tti, link, direction, proc, sel, target_bits,
                             new_data=True)
        if grant is None:
            return None
        block = proc.block
        budget = grant.tbs_bits
        packed = 0
        while queue and budget > 0:
            pkt = queue[0]
            take = min(pkt.remaining_bits, budget)
            pkt.remaining_bits -= take
            budget -= take
            packed += take
            block.contributions.append((pkt, take))
            if pkt.remaining_bits == 0:
                queue.popleft()
        proc.first_arrival_tti = min(p.arrival_ms
                                     for p, _ in block.contributions)
        if link.sr_pending and direction == UL:
            link.sr_pending = False
        return grant

    def _grant_retx(self, tti: int, link: UeLink, direction: str,
                    proc: HarqProcess) -> Grant | None:
        block = proc.block
        sel = Selection(block.rl_data, block.mcs, block.n_prbs,
                        block.tbs_bits, 0.0, block.coverage_limited)
        return self._commit(tti, link, direction, proc, sel, block.tbs_bits,
                            new_data=False)

    def _commit(self, tti: int, link: UeLink, direction: str,
                proc: HarqProcess, sel: Selection, block_bits: int,
                new_data: bool) -> Grant | None:
        ce = link.ctx.ce
        rl_ack = ce.rl_pucch if direction == DL else None
        tl = derive_timeline(direction, ce.rl_mpdcch, sel.rl_data, rl_ack, tti)

        cal = link.ctx.calendar
        rx, tx = tl.ue_rx_ttis(), tl.ue_tx_ttis()
        if cal.book(rx, ue_mod.RX) is not None:
            self.grants_skipped += 1
            return None
        if cal.book(tx, ue_mod.TX) is not None:
            cal.cancel(rx, ue_mod.RX)
            self.grants_skipped += 1
            return None

        owner = (self.cell_id, link.ue_id, direction, tti)
        reservations = []

        def rollback() -> None:
            for r in reservations:
                self.grid.release(r)
            cal.cancel(rx, ue_mod.RX)
            cal.cancel(tx, ue_mod.TX)
            self.grants_skipped += 1

        r = self.grid.reserve_mpdcch(range(tl.mpdcch[0], tl.mpdcch[1] + 1),
                                     ce.agl, owner)
        if isinstance(r, Rejection):
            rollback()
            return None
        reservations.append(r)
        r = self.grid.reserve_prbs(range(tl.data[0], tl.data[1] + 1),
                                   direction, sel.n_prbs, owner)
        if isinstance(r, Rejection):
            rollback()
            return None
        reservations.append(r)
        if tl.feedback is not None:
            r = self.grid.reserve_prbs(range(tl.feedback[0], tl.feedback[1] + 1),
                                       UL, 1, owner)
            if isinstance(r, Rejection):
                rollback()
                return None
            reservations.append(r)

        if new_data:
            tx_power = None
            if direction == UL:
                tx_power = link.ctx.pc.tx_power_dbm(link.coupling_loss_db,
                                                    sel.n_prbs)
            proc.block = TransportBlock(
                ue_id=link.ue_id, direction=direction, mcs=sel.mcs,
                n_prbs=sel.n_prbs, tbs_bits=block_bits, rl_data=sel.rl_data,
                created_tti=tti, contributions=[], tx_power_dbm=tx_power,
                coverage_limited=sel.coverage_limited)
            proc.attempt_count = 0
            proc.max_attempts = link.max_attempts
        proc.state = HarqState.IN_FLIGHT
        proc.attempt_count += 1

        link.ctx.touch(tti)
        self.grants_committed += 1
        return Grant(ue_id=link.ue_id, direction=direction, mcs=sel.mcs,
                     tbs_bits=block_bits, n_prbs=sel.n_prbs, agl=ce.agl,
                     rl_mpdcch=ce.rl_mpdcch, rl_data=sel.rl_data,
                     rl_ack=rl_ack, timeline=tl, process_id=proc.process_id,
                     new_data=new_data, coverage_limited=sel.coverage_limited,
                     reservations=tuple(reservations))

    # -- outcome bookkeeping -----------------------------------------------------

    def mark_feedback_pending(self, link: UeLink, direction: str,
                              process_id: int) -> None:
        link.harq[direction][process_id].state = HarqState.AWAITING_FEEDBACK

    def apply_feedback(self, link: UeLink, direction: str, process_id: int,
                       ack: bool, tti: int) -> str:
        """Resolve one block's feedback; returns delivered|retx|dropped."""
        proc = link.harq[direction][process_id]
        if proc.state is not HarqState.AWAITING_FEEDBACK or proc.block is None:
            raise InputError(f"process {process_id} has no feedback pending")
        if proc.attempt_count == 1:
            outer_loop_update(link.la(direction), ack)
        if ack:
            for pkt, bits in proc.block.contributions:
                pkt.acked_bits += bits
                if pkt.acked_bits == pkt.bits and pkt.remaining_bits == 0:
                    pkt.delivered_ms = tti
            proc.clear()
            self.blocks_delivered += 1
            return "delivered"
        if proc.attempt_count < proc.max_attempts:
            proc.state = HarqState.WAITING_TX
            return "retx"
        for pkt, _ in proc.block.contributions:
            if pkt.dropped_ms is None:
                pkt.dropped_ms = tti
            if pkt.remaining_bits > 0 and pkt in link.queues[direction]:
                link.queues[direction].remove(pkt)
        proc.clear()
        self.blocks_dropped += 1
        return "dropped"
