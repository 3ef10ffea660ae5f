"""Scheduler tests: timelines, concurrency enumeration, link adaptation,
VoIP bundling, and the per-cell grant builder."""
import itertools
import math
from collections import deque

import numpy as np
import pytest

from catm_sim import scheduler as sch
from catm_sim import ue as ue_mod
from catm_sim.errors import ConfigError, InputError
from catm_sim.radio import BlerModel, combining_gain_db
from catm_sim.traffic import DL, UL, Packet

MODEL = BlerModel.from_file()
BPP = sch.load_tbs_table()


# --------------------------------------------------------------------------
# timelines


class TestTimeline:
    def test_ul_single_repetition(self):
        tl = sch.derive_timeline(UL, 1, 1)
        assert tl.mpdcch == (0, 0)
        assert tl.data == (4, 4)
        assert tl.feedback is None
        assert tl.regrant_tti == 8
        assert tl.cycle_ms == 8
        assert tl.ue_rx_ttis() == [0]
        assert tl.ue_tx_ttis() == [4]

    def test_dl_example(self):
        # control over 4 TTIs, data over 8 starting 2 after the control end
        tl = sch.derive_timeline(DL, 4, 8, rl_feedback=2)
        assert tl.mpdcch == (0, 3)
        assert tl.data == (5, 12)
        assert tl.data[1] - tl.data[0] + 1 == 8
        assert tl.feedback == (16, 17)
        assert tl.regrant_tti == 21
        assert tl.ue_rx_ttis() == list(range(0, 4)) + list(range(5, 13))
        assert tl.ue_tx_ttis() == [16, 17]

    def test_start_offset_shifts(self):
        tl = sch.derive_timeline(UL, 2, 4, start_tti=100)
        assert tl.mpdcch == (100, 101)
        assert tl.data == (105, 108)
        assert tl.regrant_tti == 112

    def test_cycle_formulas(self):
        for rm, rd in itertools.product((1, 2, 4, 8), repeat=2):
            assert sch.derive_timeline(UL, rm, rd).cycle_ms == rm + rd + 6
            for ra in (1, 2, 4, 8):
                tl = sch.derive_timeline(DL, rm, rd, ra)
                assert tl.cycle_ms == rm + rd + ra + 7

    def test_bad_repetitions(self):
        with pytest.raises(ConfigError):
            sch.derive_timeline(UL, 0, 1)
        with pytest.raises(ConfigError):
            sch.derive_timeline(UL, 1, 3)
        with pytest.raises(ConfigError):
            sch.derive_timeline(DL, 1, 1)          # missing feedback length
        with pytest.raises(ConfigError):
            sch.derive_timeline("sideways", 1, 1)


# --------------------------------------------------------------------------
# concurrency enumeration, with an independent brute-force oracle


def oracle_max_concurrent(rm, rd, ra, direction, period_ms, full_duplex=False):
    """Brute force over all offset combinations; constants rederived here."""
    if direction == UL:
        rx = list(range(rm))
        tx = list(range(rm + 3, rm + 3 + rd))
        cycle = rm + rd + 6
    else:
        rx = list(range(rm)) + list(range(rm + 1, rm + 1 + rd))
        tx = list(range(rm + rd + 4, rm + rd + 4 + ra))
        cycle = rm + rd + ra + 7
    period = max(period_ms, cycle)

    def valid(offsets):
        rxs, txs = set(), set()
        for o in offsets:
            for t in rx:
                tt = (o + t) % period
                if tt in rxs:
                    return False
                rxs.add(tt)
            for t in tx:
                tt = (o + t) % period
                if tt in txs:
                    return False
                txs.add(tt)
        if not full_duplex:
            for t in txs:
                for g in (-1, 0, 1):
                    if (t + g) % period in rxs:
                        return False
        return True

    top = min(period // len(rx), period // len(tx))
    if not full_duplex:
        top = min(top, period // (len(rx) + len(tx)))
    for k in range(top, 0, -1):
        for combo in itertools.combinations(range(period), k):
            if valid(combo):
                return k
    return 0


class TestMaxConcurrent:
    def test_single_repetition_half_duplex(self):
        assert sch.max_concurrent_harq(1, 1, None, UL, 8) == 3

    def test_single_repetition_full_duplex(self):
        assert sch.max_concurrent_harq(1, 1, None, UL, 8, full_duplex=True) == 8

    def test_data_spanning_period(self):
        assert sch.max_concurrent_harq(1, 8, None, UL, 8) == 1
        assert sch.max_concurrent_harq(2, 16, None, UL, 16) == 1

    def test_period_below_cycle_is_stretched(self):
        # the cycle is the shortest realizable period
        assert (sch.max_concurrent_harq(1, 1, None, UL, 1)
                == sch.max_concurrent_harq(1, 1, None, UL, 8))

    def test_ul_matches_oracle_up_to_32(self):
        ladder = (1, 2, 4, 8, 16, 32)
        for rm, rd in itertools.product(ladder, repeat=2):
            got = sch.max_concurrent_harq(rm, rd, None, UL, 1)
            want = oracle_max_concurrent(rm, rd, None, UL, 1)
            assert got == want, (rm, rd, got, want)

    def test_dl_matches_oracle(self):
        ladder = (1, 2, 4, 8)
        for rm, rd, ra in itertools.product(ladder, repeat=3):
            got = sch.max_concurrent_harq(rm, rd, ra, DL, 1)
            want = oracle_max_concurrent(rm, rd, ra, DL, 1)
            assert got == want, (rm, rd, ra, got, want)

    def test_full_duplex_matches_oracle(self):
        for rm, rd in itertools.product((1, 2, 4), repeat=2):
            got = sch.max_concurrent_harq(rm, rd, None, UL, 8, full_duplex=True)
            want = oracle_max_concurrent(rm, rd, None, UL, 8, full_duplex=True)
            assert got == want, (rm, rd, got, want)

    def test_bad_period(self):
        with pytest.raises(ConfigError):
            sch.max_concurrent_harq(1, 1, None, UL, 0)


# --------------------------------------------------------------------------
# link adaptation


class TestOuterLoop:
    def test_step_ratio(self):
        la = sch.LinkAdaptationState(ibler_target=0.10, step_up_db=0.01)
        assert la.step_down_db == pytest.approx(0.09)

    def test_updates(self):
        la = sch.LinkAdaptationState(ibler_target=0.10, step_up_db=0.01)
        sch.outer_loop_update(la, ack=True)
        assert la.olla_offset_db == pytest.approx(0.01)
        sch.outer_loop_update(la, ack=False)
        assert la.olla_offset_db == pytest.approx(0.01 - 0.09)

    def test_clamp(self):
        la = sch.LinkAdaptationState(step_up_db=0.5)
        la.olla_offset_db = 10.0
        assert sch.outer_loop_update(la, ack=True) == 10.0
        la.olla_offset_db = -10.0
        assert sch.outer_loop_update(la, ack=False) == -10.0

    def test_reset(self):
        la = sch.LinkAdaptationState()
        la.olla_offset_db = 3.0
        la.reset()
        assert la.olla_offset_db == 0.0

    def test_long_run_nack_fraction_tracks_target(self):
        # closed loop through the real format selection: the offset makes the
        # picks more aggressive until the realized error rate sits on target
        la = sch.LinkAdaptationState(ibler_target=0.10, step_up_db=0.1)
        ladder = (1, 2, 4, 8, 16, 32, 64, 128, 256)
        rng = np.random.default_rng(7)
        true_sinr = 2.0
        cache = {}
        nacks = 0
        total, warmup = 10000, 2000
        for i in range(total):
            key = round(la.olla_offset_db, 6)
            sel = cache.get(key)
            if sel is None:
                sel = sch.select_transmission(1000, lambda n: true_sinr, la,
                                              MODEL, BPP, ladder)
                cache[key] = sel
            p = MODEL.bler(true_sinr + combining_gain_db(sel.rl_data),
                           sel.mcs, sel.tbs_bits)
            ack = rng.random() >= p
            if i >= warmup and not ack:
                nacks += 1
            sch.outer_loop_update(la, ack)
        frac = nacks / (total - warmup)
        assert abs(frac - 0.10) < 0.03

    def test_bad_config(self):
        with pytest.raises(ConfigError):
            sch.LinkAdaptationState(ibler_target=0.0)
        with pytest.raises(ConfigError):
            sch.LinkAdaptationState(step_up_db=-1.0)


# --------------------------------------------------------------------------
# transmission format selection, with a lattice oracle


def oracle_select(queue_bits, sinr_fn, la, ladder, max_prbs=6, max_tbs=1000):
    """Search the whole (rl, mcs, n) lattice with explicit ordering."""
    for rl in sorted(ladder):
        feasible = []
        for n in range(1, max_prbs + 1):
            for mcs in range(16):
                carried = min(BPP[mcs] * n, max_tbs, queue_bits)
                eff = sinr_fn(n) + combining_gain_db(rl) + la.olla_offset_db
                p = MODEL.bler(eff, mcs, carried)
                if p <= la.ibler_target:
                    feasible.append((-carried, -n, mcs, rl, p))
        if feasible:
            c, n, mcs, rl, p = min(feasible)
            return (rl, mcs, -n, -c, False)
    rl = max(ladder)
    ranked = []
    for n in range(1, max_prbs + 1):
        carried = min(BPP[0] * n, max_tbs, queue_bits)
        eff = sinr_fn(n) + combining_gain_db(rl) + la.olla_offset_db
        ranked.append((MODEL.bler(eff, 0, carried), -carried, n, carried))
    p, _, n, carried = min(ranked)
    return (rl, 0, n, carried, True)


class TestSelectTransmission:
    LADDER = (1, 2, 4, 8, 16, 32, 64, 128, 256)

    def run(self, queue_bits, sinr_fn, **kw):
        la = kw.pop("la", sch.LinkAdaptationState())
        return sch.select_transmission(queue_bits, sinr_fn, la, MODEL, BPP,
                                       kw.pop("ladder", self.LADDER), **kw)

    def test_high_sinr_no_repetitions(self):
        sel = self.run(10000, lambda n: 30.0)
        assert sel.rl_data == 1
        assert sel.tbs_bits == 1000
        assert not sel.coverage_limited
        assert sel.predicted_bler <= 0.10

    def test_high_sinr_single_prb_picks_top_mcs(self):
        sel = self.run(10000, lambda n: 35.0, max_prbs=1)
        assert sel.rl_data == 1
        assert sel.mcs == 15
        assert sel.tbs_bits == 640

    def test_coverage_limited(self):
        sel = self.run(1000, lambda n: -25.0)
        assert sel.coverage_limited
        assert sel.rl_data == 256
        assert sel.mcs == 0
        assert sel.n_prbs == 1
        assert sel.predicted_bler > 0.10

    def test_mid_sinr_sits_on_the_boundary(self):
        la = sch.LinkAdaptationState()
        sel = self.run(1000, lambda n: -2.0, la=la)
        assert 1 < sel.rl_data <= 256
        assert not sel.coverage_limited
        assert sel.predicted_bler <= 0.10
        # the next-cheaper repetition level has no compliant format at all
        prev = self.LADDER[self.LADDER.index(sel.rl_data) - 1]
        best_prev = min(
            MODEL.bler(-2.0 + combining_gain_db(prev) + la.olla_offset_db,
                       mcs, min(BPP[mcs] * n, 1000))
            for n in range(1, 7) for mcs in range(16))
        assert best_prev > 0.10

    def test_matches_lattice_oracle(self):
        la = sch.LinkAdaptationState()
        rng = np.random.default_rng(11)
        for _ in range(120):
            base = float(rng.uniform(-30.0, 25.0))
            queue = int(rng.choice([40, 100, 320, 720, 1000, 5000]))
            power_limited = bool(rng.integers(0, 2))
            if power_limited:
                fn = lambda n, b=base: b - 10.0 * math.log10(n)
            else:
                fn = lambda n, b=base: b
            sel = self.run(queue, fn, la=la)
            rl, mcs, n, carried, limited = oracle_select(
                queue, fn, la, self.LADDER)
            assert (sel.rl_data, sel.mcs, sel.n_prbs, sel.tbs_bits,
                    sel.coverage_limited) == (rl, mcs, n, carried, limited)

    def test_olla_offset_shifts_selection(self):
        la_neutral = sch.LinkAdaptationState()
        la_down = sch.LinkAdaptationState()
        la_down.olla_offset_db = -10.0
        a = self.run(1000, lambda n: 2.0, la=la_neutral)
        b = self.run(1000, lambda n: 2.0, la=la_down)
        assert b.rl_data >= a.rl_data

    def test_input_validation(self):
        with pytest.raises(InputError):
            self.run(0, lambda n: 10.0)
        with pytest.raises(ConfigError):
            self.run(100, lambda n: 10.0, ladder=())


# --------------------------------------------------------------------------
# VoIP bundling


class TestVoipBundling:
    def test_aggregation_factor(self):
        assert sch.aggregation_factor(40) == 2
        assert sch.aggregation_factor(8) == 1
        assert sch.aggregation_factor(20) == 1
        assert sch.aggregation_factor(41) == 3
        with pytest.raises(InputError):
            sch.aggregation_factor(0)

    def test_split_equal_examples(self):
        assert sch.split_equal(2160) == [720, 720, 720]
        assert sch.split_equal(1000) == [1000]
        assert sch.split_equal(1001) == [501, 500]

    def test_split_equal_properties(self):
        rng = np.random.default_rng(3)
        for _ in range(300):
            total = int(rng.integers(1, 20000))
            segs = sch.split_equal(total)
            assert sum(segs) == total
            assert max(segs) <= 1000
            assert max(segs) - min(segs) <= 1

    def pkt(self, arrival, bits=320, budget=200):
        return Packet(0, 0, UL, bits, arrival, budget_ms=budget)

    def test_bundle_respects_cycle(self):
        pkts = [self.pkt(0), self.pkt(20), self.pkt(40)]
        build = sch.voip_build(pkts, harq_cycle_ms=40, now_ms=50)
        assert len(build.packets) == 2
        assert build.segment_bits == [640]
        assert build.violated == []

    def test_oversized_bundle_splits(self):
        pkts = [self.pkt(0, bits=1080, budget=100000),
                self.pkt(20, bits=1080, budget=100000)]
        build = sch.voip_build(pkts, harq_cycle_ms=40, now_ms=40)
        assert build.segment_bits == [720, 720, 720]

    def test_hopeless_packet_is_abandoned(self):
        stale = self.pkt(0)              # deadline 200
        fresh = self.pkt(180)
        build = sch.voip_build([stale, fresh], harq_cycle_ms=40, now_ms=170)
        assert build.violated == [stale]
        assert build.packets == [fresh]

    def test_everything_hopeless(self):
        build = sch.voip_build([self.pkt(0)], harq_cycle_ms=40, now_ms=300)
        assert build.packets == []
        assert build.segment_bits == []
        assert len(build.violated) == 1


# --------------------------------------------------------------------------
# the per-cell grant builder


def make_link(ue_id, cl=120.0, sinr=25.0, voip=False, drx=None, **kw):
    ctx = ue_mod.UeContext(ue_id, ue_mod.ce_config_for(cl),
                           ue_mod.PowerControlState(), drx=drx)
    ctx.start_access(0)
    ctx.connect(0)
    return sch.UeLink(ue_id=ue_id, ctx=ctx, coupling_loss_db=cl,
                      ul_sinr_db=lambda n: sinr, dl_sinr_db=lambda n: sinr,
                      voip=voip, **kw)


def make_mac():
    return sch.CellMac(cell_id=0, bler_model=MODEL, bpp=BPP)


def queue_packet(link, direction, bits=1000, arrival=0, budget=None):
    p = Packet(0, link.ue_id, direction, bits, arrival, budget_ms=budget)
    link.queues[direction].append(p)
    return p


class TestCellMac:
    def test_empty_queues_touch_nothing(self):
        mac = make_mac()
        mac.attach(make_link(1))
        assert mac.schedule_tti(0) == []
        assert mac.grid.booked_prb_ttis == 0
        assert mac.grid.free_mpdcch_units(0) == 24

    def test_single_uplink_grant(self):
        mac = make_mac()
        link = make_link(1, cl=120.0)
        mac.attach(link)
        pkt = queue_packet(link, UL, bits=1000)
        grants = mac.schedule_tti(0)
        assert len(grants) == 1
        g = grants[0]
        assert g.direction == UL and g.new_data
        assert g.rl_mpdcch == 1 and g.agl == 4      # sub-130 dB tier
        assert g.tbs_bits == 1000
        assert g.timeline.mpdcch == (0, 0)
        assert pkt.remaining_bits == 0
        assert not link.queues[UL]
        proc = link.harq[UL][g.process_id]
        assert proc.state is sch.HarqState.IN_FLIGHT
        assert proc.attempt_count == 1
        assert proc.block.tx_power_dbm is not None
        assert link.ctx.calendar.state(g.timeline.data[0]) == ue_mod.TX

    def test_downlink_grant_books_feedback(self):
        mac = make_mac()
        link = make_link(1, cl=120.0)
        mac.attach(link)
        queue_packet(link, DL, bits=500)
        (g,) = mac.schedule_tti(0)
        assert g.direction == DL
        assert g.rl_ack == 1
        assert g.timeline.feedback is not None
        planes = sorted(r.plane for r in g.reservations)
        assert planes == ["dl", "mpdcch", "ul"]     # data, control, ack
        f0 = g.timeline.feedback[0]
        assert link.ctx.calendar.state(f0) == ue_mod.TX

    def test_wide_grant_exhausts_control_pool(self):
        mac = make_mac()
        for ue in (1, 2):
            link = make_link(ue, cl=155.0)          # deep coverage: AGL 24
            mac.attach(link)
            queue_packet(link, UL)
        grants = mac.schedule_tti(0)
        assert len(grants) == 1
        assert grants[0].agl == 24
        assert mac.grid.free_mpdcch_units(0) == 0
        assert mac.grants_skipped >= 1

    def test_mixed_aggregation_levels_share_pool(self):
        mac = make_mac()
        for ue, cl in ((1, 135.0), (2, 135.0), (3, 125.0)):
            link = make_link(ue, cl=cl, sinr=25.0)
            link.forced_mcs = 5
            link.forced_n_prbs = 2 if cl > 130 else 1
            link.forced_rl_data = 1
            mac.attach(link)
            queue_packet(link, UL, bits=200)
        grants = mac.schedule_tti(0)
        assert len(grants) == 3                     # 8 + 8 + 4 <= 24
        assert sorted(g.agl for g in grants) == [4, 8, 8]
        assert mac.grid.free_mpdcch_units(0) == 4

    def test_retransmission_has_priority_and_fixed_rl(self):
        mac = make_mac()
        a, b = make_link(1, cl=155.0), make_link(2, cl=155.0)
        mac.attach(a)
        mac.attach(b)
        queue_packet(a, UL)
        (g1,) = mac.schedule_tti(0)                 # AGL 24 frame, pool full
        assert g1.ue_id == 1
        proc = a.harq[UL][g1.process_id]
        mac.mark_feedback_pending(a, UL, g1.process_id)
        assert mac.apply_feedback(a, UL, g1.process_id, False,
                                  g1.timeline.regrant_tti) == "retx"
        queue_packet(b, UL)
        t = g1.timeline.regrant_tti
        grants = mac.schedule_tti(t)
        assert len(grants) == 1
        g2 = grants[0]
        assert g2.ue_id == 1 and not g2.new_data    # retx beats new data
        assert g2.rl_data == g1.rl_data
        assert proc.attempt_count == 2

    def test_feedback_paths(self):
        mac = make_mac()
        link = make_link(1)
        mac.attach(link)
        pkt = queue_packet(link, UL, bits=400, arrival=0)
        (g,) = mac.schedule_tti(0)
        mac.mark_feedback_pending(link, UL, g.process_id)
        before = link.la_ul.olla_offset_db
        out = mac.apply_feedback(link, UL, g.process_id, True, 5)
        assert out == "delivered"
        assert pkt.delivered_ms == 5 and pkt.acked_bits == 400
        assert link.harq[UL][g.process_id].state is sch.HarqState.EMPTY
        assert link.la_ul.olla_offset_db == pytest.approx(
            before + link.la_ul.step_up_db)

    def test_drop_after_max_attempts(self):
        mac = make_mac()
        link = make_link(1, max_attempts=2)
        mac.attach(link)
        pkt = queue_packet(link, UL, bits=400)
        (g,) = mac.schedule_tti(0)
        proc = link.harq[UL][g.process_id]
        mac.mark_feedback_pending(link, UL, g.process_id)
        assert mac.apply_feedback(link, UL, g.process_id, False, 8) == "retx"
        (g2,) = mac.schedule_tti(8)
        assert not g2.new_data
        mac.mark_feedback_pending(link, UL, g2.process_id)
        assert mac.apply_feedback(link, UL, g2.process_id, False, 16) == "dropped"
        assert pkt.dropped_ms == 16
        assert pkt.delivered_ms is None
        assert proc.state is sch.HarqState.EMPTY
        assert mac.blocks_dropped == 1

    def test_olla_only_reacts_to_first_attempt(self):
        mac = make_mac()
        link = make_link(1, max_attempts=3)
        mac.attach(link)
        queue_packet(link, UL)
        (g,) = mac.schedule_tti(0)
        mac.mark_feedback_pending(link, UL, g.process_id)
        mac.apply_feedback(link, UL, g.process_id, False, 8)
        after_first = link.la_ul.olla_offset_db
        (g2,) = mac.schedule_tti(8)
        mac.mark_feedback_pending(link, UL, g2.process_id)
        mac.apply_feedback(link, UL, g2.process_id, True, 16)
        assert link.la_ul.olla_offset_db == after_first

    def test_voip_earliest_deadline_goes_first(self):
        mac = make_mac()
        link = make_link(1, voip=True)
        mac.attach(link)
        queue_packet(link, DL, bits=320, arrival=0, budget=200)    # deadline 200
        queue_packet(link, UL, bits=320, arrival=40, budget=100)   # deadline 140
        grants = mac.schedule_tti(50)
        assert [g.direction for g in grants] == [UL]
        # the delayed side eventually books once the calendar frees up
        later = []
        for t in range(51, 70):
            later += mac.schedule_tti(t)
        assert [g.direction for g in later] == [DL]

    def test_partial_packet_stays_queued_then_drops_with_block(self):
        mac = make_mac()
        link = make_link(1, max_attempts=1)
        link.forced_mcs = 0
        link.forced_n_prbs = 1
        link.forced_rl_data = 1
        mac.attach(link)
        pkt = queue_packet(link, UL, bits=1000)
        (g,) = mac.schedule_tti(0)
        assert g.tbs_bits == 40
        assert pkt.remaining_bits == 960
        assert link.queues[UL][0] is pkt
        mac.mark_feedback_pending(link, UL, g.process_id)
        assert mac.apply_feedback(link, UL, g.process_id, False, 8) == "dropped"
        assert pkt.dropped_ms == 8
        assert not link.queues[UL]

    def test_drx_blocks_new_grants_but_not_retx(self):
        mac = make_mac()
        link = make_link(1, drx=ue_mod.DrxConfig(1280, 10))
        mac.attach(link)
        queue_packet(link, UL)
        assert mac.schedule_tti(500) == []          # outside the on-duration
        (g,) = mac.schedule_tti(1280)               # next on-duration opens
        mac.mark_feedback_pending(link, UL, g.process_id)
        mac.apply_feedback(link, UL, g.process_id, False, g.timeline.regrant_tti)
        grants = mac.schedule_tti(1280 + 15)        # off-duty, but HARQ active
        assert len(grants) == 1 and not grants[0].new_data

    def test_grant_postpones_dormancy(self):
        mac = make_mac()
        link = make_link(1)
        mac.attach(link)
        queue_packet(link, UL)
        mac.schedule_tti(7)
        assert link.ctx.last_activity_tti == 7

    def test_idle_ue_is_never_scheduled(self):
        mac = make_mac()
        link = make_link(1)
        link.ctx.release(0)
        mac.attach(link)
        queue_packet(link, UL)
        assert mac.schedule_tti(0) == []
