"""The TTI-stepped world: arrivals, protocol steps, scheduling, outcomes.

Each TTI runs six phases in a fixed order: (1) traffic arrivals, (2) UE
RRC/RACH/SR/CQI steps, (3) per-cell scheduling, (4) transmission outcomes
using the interference snapshot of the previous TTI, (5) HARQ feedback
bookkeeping, (6) KPI accumulation.  Feedback for a block is applied on the
TTI before its earliest re-grant opportunity, so a (1,1) uplink flow
re-grants every 8 ms.

Interference: a transmission only sees co-channel activity that was on air
in the previous TTI (captured at the first data TTI and held constant for
the attempt), which keeps same-TTI scheduling across cells order-free.
"""

from __future__ import annotations

import dataclasses
import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import kpi as kpi_mod
from .errors import ConfigError, InvariantError
from .grid import (NARROWBAND_PRBS, MPDCCH_POOL_UNITS, BandwidthProfile,
                   Rejection, ResourceGrid, choose_narrowband,
                   enumerate_narrowbands)
from .layout import build_layout
from .radio import BlerModel, noise_floor_dbm
from .scenario import Scenario, scenario_to_dict
from .scheduler import (CellMac, Grant, HarqState, LinkAdaptationState,
                        TransportBlock, UeLink, load_tbs_table)
from .traffic import (DL, UL, BurstyConfig, BurstySource, Packet, VoipConfig,
                      VoipSource, next_packet_id)
from .ue import (RX, TX, DrxConfig, PowerControlState, RrcState,
                 UeContext, ce_config_for)


def _mw(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0)


def _dbm(mw: float) -> float:
    return 10.0 * math.log10(mw)


@dataclass
class _ActiveTx:
    """One on-air emission interval on the narrowband."""
    cell_id: int
    ue_id: int | None          # None for eNB (downlink) emissions
    plane: str                 # "ul" | "dl"
    prbs: tuple[int, ...]
    first_tti: int
    last_tti: int
    per_prb_dbm: float


@dataclass
class _Pending:
    """An in-flight HARQ attempt between grant and feedback."""
    grant: Grant
    block: TransportBlock
    data_prbs: tuple[int, ...]
    sinr_db: float | None = None
    ack: bool | None = None


class UeSim:
    """Engine-side state of one device (traffic, RACH progress, KPI)."""

    def __init__(self, ue_id: int, cell_id: int, ctx: UeContext, link: UeLink,
                 kind: str, source, phy_rng, acc: kpi_mod.UeAccumulator,
                 budget_ms: int | None, fb_direction: str, fb_bits: int):
        self.ue_id = ue_id
        self.cell_id = cell_id
        self.ctx = ctx
        self.link = link
        self.kind = kind
        self.source = source
        self.phy_rng = phy_rng
        self.acc = acc
        self.budget_ms = budget_ms
        self.fb_direction = fb_direction   # full-buffer only
        self.fb_bits = fb_bits
        self.staged_ul: deque[Packet] = deque()
        self.sr_due = False
        self.sr_inflight = False
        self.next_cqi_tti: int | None = None
        self.legacy_dl_mw = 0.0            # static expected legacy floor per PRB

    def busy(self) -> bool:
        return (self.link.harq_active()
                or bool(self.link.queues[UL]) or bool(self.link.queues[DL])
                or bool(self.staged_ul) or self.sr_due or self.sr_inflight)


class World:
    """One simulation run; single-threaded, deterministic for a seed."""

    def __init__(self, scenario: Scenario):
        sc = scenario
        self.sc = sc
        self.duration = sc.duration_ms
        self.bler_model = BlerModel.from_file()
        self.bpp = load_tbs_table()

        profile = BandwidthProfile.for_bandwidth(sc.radio.bandwidth_prbs)
        nbs = enumerate_narrowbands(profile)
        if sc.radio.narrowband == "auto":
            self.narrowband = choose_narrowband(profile)
        else:
            idx = sc.radio.narrowband
            if not 0 <= idx < len(nbs):
                raise ConfigError(f"narrowband index {idx} out of range "
                                  f"0..{len(nbs) - 1}")
            self.narrowband = nbs[idx]

        self.enb_prb_dbm = (sc.radio.enb_total_power_dbm
                            - 10.0 * math.log10(sc.radio.bandwidth_prbs))
        self.ue_noise_dbm = noise_floor_dbm(1, sc.radio.ue_noise_figure_db)
        enb_noise = noise_floor_dbm(1, sc.radio.enb_noise_figure_db)
        if sc.legacy.mode == "shared":
            enb_noise += sc.legacy.ul_noise_rise_db
        self.enb_noise_dbm = enb_noise

        ss = np.random.SeedSequence(sc.seed)
        layout_ss, traffic_ss, phy_ss = ss.spawn(3)
        n_ues = sc.n_ues
        self.layout = build_layout(
            n_ues, np.random.default_rng(layout_ss),
            rings=sc.layout.rings, isd_m=sc.layout.isd_m,
            sectors_per_site=sc.layout.sectors_per_site,
            min_drop_distance_m=sc.layout.min_drop_distance_m,
            shadow_sigma_db=sc.layout.shadow_sigma_db,
            enb_height_m=sc.layout.enb_height_m,
            ue_height_m=sc.layout.ue_height_m,
            body_loss_db=sc.layout.body_loss_db,
            ue_antenna_gain_db=sc.layout.ue_antenna_gain_db,
            wraparound=sc.layout.wraparound)

        self.cells = [CellMac(c.cell_id, ResourceGrid(), self.bler_model,
                              self.bpp, sc.scheduler.max_tbs_bits)
                      for c in self.layout.cells]
        self.cell_acc = {c.cell_id: {"ul": 0, "dl": 0, "mpdcch": 0}
                         for c in self.layout.cells}

        traffic_children = traffic_ss.spawn(n_ues)
        phy_children = phy_ss.spawn(n_ues)
        self.ues: list[UeSim] = []
        self.ue_by_id: dict[int, UeSim] = {}
        ue_id = 0
        for group in sc.traffic:
            for _ in range(group.count):
                self._add_ue(ue_id, group,
                             np.random.default_rng(traffic_children[ue_id]),
                             np.random.default_rng(phy_children[ue_id]))
                ue_id += 1

        # event wheels keyed by TTI; processed in phases 2, 4 and 5
        self._ue_events: dict[int, list[tuple]] = {}
        self._phy_events: dict[int, list[tuple]] = {}
        self._fb_events: dict[int, list[tuple]] = {}
        self._pending: dict[tuple, _Pending] = {}
        self._active: list[_ActiveTx] = []
        self._counted: set[int] = set()    # packet ids already resolved in KPI
        self.power_trace: list[tuple[int, int, str, float]] = []
        self.trace_rows: list[tuple] = []
        self.tti = 0

    # -- construction ---------------------------------------------------------

    def _add_ue(self, ue_id: int, group, traffic_rng, phy_rng) -> None:
        sc = self.sc
        serving = self.layout.serving_cell[ue_id]
        cl = sc.ue.coupling_loss_db
        if cl is None:
            cl = self.layout.coupling_loss_db(ue_id, serving)
        ce = ce_config_for(cl)
        if sc.ue.rl_mpdcch is not None or sc.ue.rl_pucch is not None:
            ce = dataclasses.replace(
                ce,
                rl_mpdcch=sc.ue.rl_mpdcch or ce.rl_mpdcch,
                rl_pucch=sc.ue.rl_pucch or ce.rl_pucch)
        pc = PowerControlState(mode=sc.power.mode, p0_dbm=sc.power.p0_dbm,
                               alpha=sc.power.alpha,
                               p_max_dbm=sc.power.p_max_dbm)
        drx = (DrxConfig(sc.ue.drx.cycle_ms, sc.ue.drx.on_duration_ms)
               if sc.ue.drx else None)
        ctx = UeContext(ue_id, ce, pc,
                        dormancy_timer_ms=sc.ue.dormancy_timer_ms, drx=drx,
                        full_duplex=sc.scheduler.full_duplex)

        def ul_sinr(n_prbs: int, _pc=pc, _cl=cl) -> float:
            return (_pc.tx_power_dbm(_cl, n_prbs)
                    - 10.0 * math.log10(n_prbs) - _cl - self.enb_noise_dbm)

        legacy_mw = 0.0
        if sc.legacy.mode == "shared":
            for cell in self.layout.cells:
                if cell.cell_id == serving:
                    continue
                legacy_mw += sc.legacy.dl_load * _mw(
                    self.enb_prb_dbm
                    - self.layout.coupling_loss_db(ue_id, cell.cell_id))
        dl_floor_dbm = _dbm(_mw(self.ue_noise_dbm) + legacy_mw)

        def dl_sinr(n_prbs: int, _cl=cl, _floor=dl_floor_dbm) -> float:
            return self.enb_prb_dbm - _cl - _floor

        la_kwargs = dict(ibler_target=sc.scheduler.ibler_target,
                         step_up_db=sc.scheduler.olla_step_up_db,
                         initial_mcs=sc.scheduler.initial_mcs)
        link = UeLink(ue_id, ctx, cl, ul_sinr, dl_sinr,
                      la_ul=LinkAdaptationState(**la_kwargs),
                      la_dl=LinkAdaptationState(**la_kwargs),
                      voip=group.kind == "voip",
                      max_attempts=sc.scheduler.max_attempts,
                      forced_rl_data=sc.ue.forced_rl_data)
        self.cells[serving].attach(link)

        if group.kind == "bursty":
            src = BurstySource(ue_id, BurstyConfig(
                packet_bits=group.packet_bits,
                min_interarrival_ms=group.min_interarrival_ms,
                mean_interarrival_ms=group.mean_interarrival_ms,
                direction=group.direction), traffic_rng)
        elif group.kind == "voip":
            src = VoipSource(ue_id, VoipConfig(), traffic_rng)
        else:
            src = None

        acc = kpi_mod.UeAccumulator(ue_id=ue_id, cell_id=serving,
                                    coupling_loss_db=cl)
        ue = UeSim(ue_id, serving, ctx, link, group.kind, src, phy_rng, acc,
                   group.budget_ms, group.direction, group.packet_bits)
        ue.legacy_dl_mw = legacy_mw
        self.ues.append(ue)
        self.ue_by_id[ue_id] = ue

    # -- event plumbing --------------------------------------------------------

    @staticmethod
    def _push(wheel: dict[int, list], tti: int, event: tuple) -> None:
        wheel.setdefault(tti, []).append(event)

    # -- phase 1: arrivals -------------------------------------------------------

    def _enqueue(self, ue: UeSim, pkt: Packet, tti: int) -> None:
        acc = ue.acc
        acc.offered_packets += 1
        acc.offered_bits += pkt.bits
        if pkt.budget_ms is not None:
            acc.budget_packets += 1
        if pkt.direction == DL:
            ue.link.queues[DL].append(pkt)
        else:
            if (ue.ctx.rrc is RrcState.CONNECTED
                    and (ue.link.queues[UL] or ue.link.sr_pending
                         or any(p.state is not HarqState.EMPTY
                                for p in ue.link.harq[UL]))):
                # buffer status rides on the ongoing uplink exchange
                ue.link.queues[UL].append(pkt)
            else:
                ue.staged_ul.append(pkt)
                if ue.ctx.rrc is RrcState.CONNECTED:
                    ue.sr_due = True
        if ue.ctx.rrc is RrcState.IDLE:
            self._begin_rach(ue, tti)

    def _arrivals(self, tti: int) -> None:
        for ue in self.ues:
            if ue.kind == "full_buffer":
                # keep at least two packets pending so the queue never runs
                # dry between grants (dry spells would re-trigger SR)
                backlog = (ue.link.queue_bits(ue.fb_direction)
                           + sum(p.remaining_bits for p in ue.staged_ul))
                while backlog < 2 * ue.fb_bits:
                    pkt = Packet(next_packet_id(), ue.ue_id, ue.fb_direction,
                                 ue.fb_bits, tti)
                    self._enqueue(ue, pkt, tti)
                    backlog += pkt.bits
                continue
            if ue.source.peek_ms() <= tti:
                for pkt in ue.source.pop_due(tti):
                    if ue.budget_ms is not None and pkt.budget_ms is None:
                        pkt.budget_ms = ue.budget_ms
                    self._enqueue(ue, pkt, tti)

    # -- phase 2: protocol steps ---------------------------------------------------

    def _begin_rach(self, ue: UeSim, tti: int) -> None:
        ue.ctx.start_access(tti)
        self._push(self._ue_events, tti, ("preamble", ue.ue_id))

    def _rach_give_up(self, ue: UeSim, tti: int) -> None:
        ue.ctx.rrc = RrcState.IDLE
        ue.ctx.rach = None
        for q in (ue.staged_ul, ue.link.queues[UL], ue.link.queues[DL]):
            while q:
                pkt = q.popleft()
                pkt.dropped_ms = tti
                self._count_finished(ue, pkt, dropped=True)

    def _step_ue_event(self, ev: tuple, tti: int) -> None:
        kind, ue_id = ev[0], ev[1]
        ue = self.ue_by_id[ue_id]
        ctx = ue.ctx
        rach_cfg = self.sc.rach
        if kind == "preamble":
            if ctx.rrc is not RrcState.ACCESSING:
                return
            reps = ctx.ce.preamble_repetitions
            ctx.rach.attempts += 1
            ctx.rach.overhead_prb_ttis += reps
            ctx.rach_attempts_total += 1
            ctx.rach_overhead_total += reps
            ue.acc.rach_attempts += 1
            ue.acc.rach_overhead_prb_ttis += reps
            ctx.calendar.book(range(tti, tti + reps), TX)
            self.power_trace.append(
                (tti, ue_id, "prach", ctx.pc.tx_power_dbm(ue.link.coupling_loss_db, 1)))
            self._push(self._ue_events, tti + reps - 1 + rach_cfg.response_delay_ms,
                       ("rar", ue_id))
        elif kind == "rar":
            if ctx.rrc is not RrcState.ACCESSING:
                return
            ctx.calendar.book((tti,), RX)
            if ue.phy_rng.random() < rach_cfg.detection_prob:
                self._push(self._ue_events, tti + rach_cfg.msg_exchange_ms,
                           ("connected", ue_id))
            elif ctx.rach.attempts >= rach_cfg.max_attempts:
                self._rach_give_up(ue, tti)
            else:
                self._push(self._ue_events, tti + rach_cfg.backoff_ms,
                           ("preamble", ue_id))
        elif kind == "connected":
            if ctx.rrc is not RrcState.ACCESSING:
                return
            ctx.connect(tti)
            ue.link.la_ul.reset()
            ue.link.la_dl.reset()
            while ue.staged_ul:
                ue.link.queues[UL].append(ue.staged_ul.popleft())
            ue.link.sr_pending = bool(ue.link.queues[UL])
            ue.sr_due = False
            if self.sc.scheduler.cqi_period_ms is not None:
                ue.next_cqi_tti = tti + self.sc.scheduler.cqi_period_ms
        elif kind == "sr_done":
            ue.sr_inflight = False
            if ctx.rrc is RrcState.CONNECTED:
                while ue.staged_ul:
                    ue.link.queues[UL].append(ue.staged_ul.popleft())
                ue.link.sr_pending = True

    def _book_pucch(self, ue: UeSim, tti: int, label: str) -> bool:
        """One UE-initiated PUCCH burst (SR or CQI): calendar + grid + air."""
        ce = ue.ctx.ce
        span = range(tti, tti + ce.rl_pucch)
        cal = ue.ctx.calendar
        if cal.book(span, TX) is not None:
            return False
        grid = self.cells[ue.cell_id].grid
        res = grid.reserve_prbs(span, UL, 1, owner=(label, ue.ue_id, tti))
        if isinstance(res, Rejection):
            cal.cancel(span, TX)
            return False
        power = ue.ctx.pc.tx_power_dbm(ue.link.coupling_loss_db, 1)
        self._active.append(_ActiveTx(ue.cell_id, ue.ue_id, UL, res.prbs,
                                      tti, tti + ce.rl_pucch - 1, power))
        self.power_trace.append((tti, ue.ue_id, label, power))
        self.cell_acc[ue.cell_id]["ul"] += len(res.prbs) * ce.rl_pucch
        return True

    def _ue_steps(self, tti: int) -> None:
        for ev in self._ue_events.pop(tti, ()):
            self._step_ue_event(ev, tti)
        for ue in self.ues:
            ctx = ue.ctx
            if ctx.rrc is not RrcState.CONNECTED:
                continue
            if ue.sr_due and not ue.sr_inflight:
                if self._book_pucch(ue, tti, "sr"):
                    ue.sr_inflight = True
                    ue.sr_due = False
                    self._push(self._ue_events, tti + ctx.ce.rl_pucch,
                               ("sr_done", ue.ue_id))
            if ue.next_cqi_tti is not None and tti >= ue.next_cqi_tti:
                self._book_pucch(ue, tti, "cqi")
                ue.next_cqi_tti = tti + self.sc.scheduler.cqi_period_ms
            if ctx.maybe_release(tti, ue.busy()):
                self._on_release(ue)

    def _on_release(self, ue: UeSim) -> None:
        ue.acc.rrc_releases += 1
        ue.link.la_ul.reset()
        ue.link.la_dl.reset()
        ue.link.sr_pending = False
        ue.sr_due = False
        ue.next_cqi_tti = None

    # -- phase 3: scheduling ------------------------------------------------------

    def _schedule(self, tti: int) -> None:
        for cell, mac in zip(self.layout.cells, self.cells):
            for grant in mac.schedule_tti(tti):
                self._register_grant(mac, grant, tti)
            if mac.voip_violated:
                for pkt in mac.voip_violated:
                    self._count_finished(self.ue_by_id[pkt.ue_id], pkt,
                                         violated=True)
                mac.voip_violated.clear()

    def _register_grant(self, mac: CellMac, grant: Grant, tti: int) -> None:
        ue = self.ue_by_id[grant.ue_id]
        link = ue.link
        proc = link.harq[grant.direction][grant.process_id]
        block = proc.block
        tl = grant.timeline
        data_res = grant.reservations[1]
        key = (mac.cell_id, grant.ue_id, grant.direction, grant.process_id)
        self._pending[key] = _Pending(grant, block, data_res.prbs)
        self._push(self._phy_events, tl.data[0], ("capture", key))
        self._push(self._phy_events, tl.data[1], ("outcome", key))
        self._push(self._fb_events, tl.regrant_tti - 1,
                   ("fb", key, tl.data[1] + 1))

        span = len(data_res.ttis)
        if grant.direction == UL:
            per_prb = block.tx_power_dbm - 10.0 * math.log10(grant.n_prbs)
            self._active.append(_ActiveTx(mac.cell_id, grant.ue_id, UL,
                                          data_res.prbs, tl.data[0],
                                          tl.data[1], per_prb))
            self.power_trace.append((tl.data[0], grant.ue_id, "pusch",
                                     block.tx_power_dbm))
            self.cell_acc[mac.cell_id]["ul"] += len(data_res.prbs) * span
        else:
            self._active.append(_ActiveTx(mac.cell_id, None, DL,
                                          data_res.prbs, tl.data[0],
                                          tl.data[1], self.enb_prb_dbm))
            self.cell_acc[mac.cell_id]["dl"] += len(data_res.prbs) * span
            fb_res = grant.reservations[2]
            power = ue.ctx.pc.tx_power_dbm(link.coupling_loss_db, 1)
            self._active.append(_ActiveTx(mac.cell_id, grant.ue_id, UL,
                                          fb_res.prbs, tl.feedback[0],
                                          tl.feedback[1], power))
            self.power_trace.append((tl.feedback[0], grant.ue_id, "pucch",
                                     power))
            self.cell_acc[mac.cell_id]["ul"] += len(fb_res.prbs) * len(fb_res.ttis)
        mp_res = grant.reservations[0]
        self.cell_acc[mac.cell_id]["mpdcch"] += mp_res.units * len(mp_res.ttis)

    # -- phase 4: outcomes --------------------------------------------------------

    def _interference_mw(self, snapshot_tti: int, victim_cell: int,
                         plane: str, prbs: tuple[int, ...],
                         ue: UeSim) -> float:
        total = 0.0
        nprbs = len(prbs)
        prb_set = set(prbs)
        for tx in self._active:
            if tx.plane != plane or tx.cell_id == victim_cell:
                continue
            if not (tx.first_tti <= snapshot_tti <= tx.last_tti):
                continue
            overlap = len(prb_set.intersection(tx.prbs))
            if not overlap:
                continue
            if plane == DL:
                cl = self.layout.coupling_loss_db(ue.ue_id, tx.cell_id)
            else:
                cl = self.layout.coupling_loss_db(tx.ue_id, victim_cell)
            total += (overlap / nprbs) * _mw(tx.per_prb_dbm - cl)
        return total

    def _attempt_sinr(self, pend: _Pending, tti: int) -> float:
        grant = pend.grant
        ue = self.ue_by_id[grant.ue_id]
        snapshot = tti - 1
        if grant.direction == DL:
            signal = self.enb_prb_dbm - ue.link.coupling_loss_db
            floor = _mw(self.ue_noise_dbm) + ue.legacy_dl_mw
        else:
            signal = (pend.block.tx_power_dbm
                      - 10.0 * math.log10(grant.n_prbs)
                      - ue.link.coupling_loss_db)
            floor = _mw(self.enb_noise_dbm)
        itf = self._interference_mw(snapshot, ue.cell_id, grant.direction,
                                    pend.data_prbs, ue)
        return signal - _dbm(floor + itf)

    def _outcomes(self, tti: int) -> None:
        for ev in self._phy_events.pop(tti, ()):
            key = ev[1]
            pend = self._pending.get(key)
            if pend is None:
                continue
            if ev[0] == "capture":
                pend.sinr_db = self._attempt_sinr(pend, tti)
            else:
                ue = self.ue_by_id[pend.grant.ue_id]
                eff = pend.block.add_attempt(pend.sinr_db)
                p_err = self.bler_model.bler(eff, pend.block.mcs,
                                             pend.block.tbs_bits)
                pend.ack = ue.phy_rng.random() >= p_err
                ue.acc.sinr_sum_db += pend.sinr_db
                ue.acc.sinr_count += 1
                if pend.grant.coverage_limited:
                    ue.acc.coverage_limited = True
                mac = self.cells[key[0]]
                mac.mark_feedback_pending(ue.link, pend.grant.direction,
                                          pend.grant.process_id)

    # -- phase 5: feedback --------------------------------------------------------

    def _count_finished(self, ue: UeSim, pkt: Packet, *, delivered=False,
                        dropped=False, violated=False,
                        stamp: int | None = None) -> None:
        if pkt.packet_id in self._counted:
            return
        self._counted.add(pkt.packet_id)
        acc = ue.acc
        if delivered:
            acc.delivered_packets += 1
            acc.delivered_bits += pkt.bits
            latency = stamp - pkt.arrival_ms
            acc.latencies_ms.append(latency)
            if pkt.budget_ms is not None and latency > pkt.budget_ms:
                acc.budget_violations += 1
        elif dropped:
            acc.dropped_packets += 1
            if pkt.budget_ms is not None:
                acc.budget_violations += 1
        elif violated:
            acc.violated_packets += 1
            acc.budget_violations += 1

    def _apply_tpc(self, ue: UeSim, block: TransportBlock) -> None:
        pc = ue.ctx.pc
        if pc.mode != "clpc" or block.direction != UL:
            return
        # received-power error against the open-loop setpoint
        err = (block.tx_power_dbm - 10.0 * math.log10(block.n_prbs)
               - ue.link.coupling_loss_db - pc.p0_dbm)
        if err <= -3.0:
            pc.apply_tpc(3.0)
        elif err <= -0.5:
            pc.apply_tpc(1.0)
        elif err >= 0.5:
            pc.apply_tpc(-1.0)

    def _feedback(self, tti: int) -> None:
        for ev in self._fb_events.pop(tti, ()):
            _, key, stamp = ev
            pend = self._pending.pop(key, None)
            if pend is None:
                continue
            cell_id, ue_id, direction, pid = key
            ue = self.ue_by_id[ue_id]
            mac = self.cells[cell_id]
            contributions = list(pend.block.contributions)
            result = mac.apply_feedback(ue.link, direction, pid, pend.ack,
                                        stamp)
            if result == "delivered":
                ue.acc.blocks_delivered += 1
                for pkt, _bits in contributions:
                    if pkt.delivered_ms == stamp:
                        self._count_finished(ue, pkt, delivered=True,
                                             stamp=stamp)
                self._apply_tpc(ue, pend.block)
            elif result == "dropped":
                ue.acc.blocks_dropped += 1
                for pkt, _bits in contributions:
                    if pkt.dropped_ms == stamp:
                        self._count_finished(ue, pkt, dropped=True)
                self._apply_tpc(ue, pend.block)

    # -- main loop ----------------------------------------------------------------

    def step(self, tti: int) -> None:
        self._active = [a for a in self._active if a.last_tti >= tti - 1]
        self._arrivals(tti)
        self._ue_steps(tti)
        self._schedule(tti)
        self._outcomes(tti)
        self._feedback(tti)
        if self.sc.outputs.trace:
            for mac in self.cells:
                self.trace_rows.append(
                    (tti, mac.cell_id, mac.grid.free_prbs(tti, "ul"),
                     mac.grid.free_prbs(tti, "dl"),
                     mac.grid.free_mpdcch_units(tti)))
        if tti % 4096 == 4095:
            self._prune(tti)

    def _prune(self, tti: int) -> None:
        for mac in self.cells:
            mac.grid.prune_before(tti - 8)
        for ue in self.ues:
            ue.ctx.calendar.prune_before(tti - 8)

    def _next_tti(self, tti: int) -> int:
        nxt = tti + 1
        if nxt >= self.duration:
            return nxt
        for ue in self.ues:
            if ue.kind == "full_buffer" or ue.busy():
                return nxt
        candidates = [self.duration]
        for wheel in (self._ue_events, self._phy_events, self._fb_events):
            candidates.extend(t for t in wheel if t >= nxt)
        for ue in self.ues:
            if ue.source is not None:
                candidates.append(int(math.ceil(ue.source.peek_ms())))
            if ue.ctx.rrc is RrcState.CONNECTED:
                deadline = ue.ctx.dormancy_deadline()
                if deadline is not None:
                    candidates.append(deadline)
                if ue.next_cqi_tti is not None:
                    candidates.append(ue.next_cqi_tti)
        return max(nxt, min(candidates))

    def run(self) -> kpi_mod.KpiReport:
        tti = 0
        while tti < self.duration:
            self.step(tti)
            tti = self._next_tti(tti)
        self.tti = tti
        return self._finalize()

    # -- reporting ------------------------------------------------------------------

    def _pending_packets(self, ue: UeSim) -> int:
        seen: set[int] = set()
        pools = [ue.staged_ul, ue.link.queues[UL], ue.link.queues[DL]]
        for pool in pools:
            for pkt in pool:
                if pkt.packet_id not in self._counted:
                    seen.add(pkt.packet_id)
        for direction in (UL, DL):
            for proc in ue.link.harq[direction]:
                if proc.block is None:
                    continue
                for pkt, _bits in proc.block.contributions:
                    if pkt.packet_id not in self._counted:
                        seen.add(pkt.packet_id)
        return len(seen)

    def _finalize(self) -> kpi_mod.KpiReport:
        for ue in self.ues:
            ue.ctx.calendar.audit()
        for mac in self.cells:
            mac.grid.audit()
        ue_rows = []
        pooled: list[int] = []
        for ue in self.ues:
            ue.acc.pending_packets = self._pending_packets(ue)
            balance = (ue.acc.delivered_packets + ue.acc.dropped_packets
                       + ue.acc.violated_packets + ue.acc.pending_packets)
            if balance != ue.acc.offered_packets:
                raise InvariantError(
                    f"ue {ue.ue_id}: packet conservation broken "
                    f"({ue.acc.offered_packets} offered vs {balance} accounted)")
            pooled.extend(ue.acc.latencies_ms)
            ue_rows.append(kpi_mod.finalize_ue(ue.acc, self.duration))
        cell_rows = []
        dur = max(self.duration, 1)
        for mac in self.cells:
            used = self.cell_acc[mac.cell_id]
            cell_rows.append(kpi_mod.CellKpi(
                cell_id=mac.cell_id,
                grants_committed=mac.grants_committed,
                grants_skipped=mac.grants_skipped,
                prb_ttis_ul=used["ul"], prb_ttis_dl=used["dl"],
                mpdcch_unit_ttis=used["mpdcch"],
                prb_util_ul=used["ul"] / (dur * NARROWBAND_PRBS),
                prb_util_dl=used["dl"] / (dur * NARROWBAND_PRBS),
                mpdcch_util=used["mpdcch"] / (dur * MPDCCH_POOL_UNITS)))
        totals = kpi_mod.build_totals(ue_rows, cell_rows, pooled, self.duration)
        if not totals["packet_conservation_ok"]:
            raise InvariantError("aggregate packet conservation broken")
        if self.layout.cells[-1].site_id > 0:
            measured = tuple(self.layout.center_site_ue_ids())
        else:
            measured = tuple(u.ue_id for u in self.ues)
        return kpi_mod.KpiReport(
            duration_ms=self.duration,
            ues=tuple(ue_rows), cells=tuple(cell_rows), totals=totals,
            scenario_echo=scenario_to_dict(self.sc),
            power_trace=tuple(self.power_trace),
            measured_ue_ids=measured)


def run_scenario(scenario: Scenario) -> kpi_mod.KpiReport:
    return World(scenario).run()
