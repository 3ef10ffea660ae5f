"""Canned experiment setups behind the CLI preset names.

Each run_* function builds the scenario sweep, executes it (optionally on a
process pool) and returns (fieldnames, rows) ready for a CSV.  The two
analytic presets (fig4d, table2) need no simulation: they evaluate coverage
directly from the link budget and BLER model.
"""
from __future__ import annotations

import hashlib
import math
import multiprocessing

from . import timing
from .engine import run_scenario
from .kpi import KpiReport
from .radio import BlerModel, mcl_search
from .scenario import (LayoutSpec, PowerSpec, Scenario, SchedulerSpec,
                       TrafficGroupSpec, UeSpec)
from .scheduler import load_tbs_table


def run_reports(scenarios, jobs: int = 1) -> list[KpiReport]:
    """Run independent scenarios, in order, optionally on a process pool."""
    scenarios = list(scenarios)
    if jobs <= 1 or len(scenarios) <= 1:
        return [run_scenario(s) for s in scenarios]
    with multiprocessing.Pool(min(jobs, len(scenarios))) as pool:
        return pool.map(run_scenario, scenarios)


def per_packet_throughput_bps(u) -> float:
    """Bits of a typical packet over its median delivery time."""
    if not u.delivered_packets or not u.latency_p50_ms:
        return 0.0
    mean_bits = u.delivered_bits / u.delivered_packets
    return mean_bits / (u.latency_p50_ms / 1000.0)


def mean_user_throughput_bps(report: KpiReport) -> float:
    vals = [per_packet_throughput_bps(u) for u in report.ues
            if u.delivered_packets]
    return sum(vals) / len(vals) if vals else 0.0


# -- fig3: repetition length vs user throughput, single bursty device ----------

FIG3_RLS = (1, 2, 4, 8, 16, 32)
FIG3_COUPLING_LOSSES = (100.0, 110.0, 120.0, 130.0, 140.0, 145.0, 150.0)


def fig3_scenario(rl_data: int, coupling_loss_db: float, seed: int = 1,
                  duration_ms: int = 60000) -> Scenario:
    """One bursty downlink device at a pinned coupling loss.  The data
    repetition length is forced; control and feedback repetitions stay at
    4 and 8 across the whole sweep."""
    return Scenario(
        name=f"fig3_rl{rl_data}_cl{coupling_loss_db:g}",
        seed=seed, duration_ms=duration_ms,
        layout=LayoutSpec(sectors_per_site=1),
        traffic=(TrafficGroupSpec(kind="bursty", count=1, direction="dl"),),
        ue=UeSpec(coupling_loss_db=coupling_loss_db, forced_rl_data=rl_data,
                  rl_mpdcch=4, rl_pucch=8))


def run_fig3(seeds=(1,), duration_ms: int = 60000, jobs: int = 1,
             coupling_losses=FIG3_COUPLING_LOSSES, rls=FIG3_RLS):
    grid = [(cl, rl, seed) for cl in coupling_losses
            for rl in rls for seed in seeds]
    reports = run_reports(
        (fig3_scenario(rl, cl, seed, duration_ms) for cl, rl, seed in grid),
        jobs)
    rows = []
    for (cl, rl, seed), rep in zip(grid, reports):
        u = rep.ues[0]
        rows.append({
            "coupling_loss_db": cl, "rl_data": rl, "seed": seed,
            "throughput_bps": round(per_packet_throughput_bps(u), 3),
            "delivered_packets": u.delivered_packets,
            "dropped_packets": u.dropped_packets,
            "latency_p50_ms": u.latency_p50_ms,
            "coverage_limited": int(u.coverage_limited),
        })
    return ["coupling_loss_db", "rl_data", "seed", "throughput_bps",
            "delivered_packets", "dropped_packets", "latency_p50_ms",
            "coverage_limited"], rows


# -- fig4a: outer-loop operating point sensitivity -----------------------------

FIG4A_IBLER_TARGETS = (0.05, 0.10, 0.20)
FIG4A_OLLA_STEPS = (0.01, 0.5)      # slow / fast adaptation


def fig4a_scenario(ibler_target: float, olla_step_db: float, seed: int = 1,
                   n_ues: int = 10, duration_ms: int = 60000) -> Scenario:
    """Uplink bursty devices dropped across one cell; only the outer-loop
    target and step size vary between runs."""
    return Scenario(
        name=f"fig4a_t{ibler_target:g}_s{olla_step_db:g}",
        seed=seed, duration_ms=duration_ms,
        layout=LayoutSpec(sectors_per_site=1),
        scheduler=SchedulerSpec(ibler_target=ibler_target,
                                olla_step_up_db=olla_step_db),
        traffic=(TrafficGroupSpec(kind="bursty", count=n_ues,
                                  direction="ul"),))


def run_fig4a(seeds=(1,), duration_ms: int = 60000, jobs: int = 1):
    grid = [(t, s, seed) for t in FIG4A_IBLER_TARGETS
            for s in FIG4A_OLLA_STEPS for seed in seeds]
    reports = run_reports(
        (fig4a_scenario(t, s, seed, duration_ms=duration_ms)
         for t, s, seed in grid), jobs)
    rows = []
    for (t, s, seed), rep in zip(grid, reports):
        rows.append({
            "ibler_target": t, "olla_step_db": s, "seed": seed,
            "mean_user_throughput_bps": round(mean_user_throughput_bps(rep), 3),
            "delivered_packets": rep.totals["delivered_packets"],
            "residual_bler": round(rep.totals["residual_bler"], 6),
            "latency_p50_ms": rep.totals["latency_p50_ms"],
        })
    return ["ibler_target", "olla_step_db", "seed",
            "mean_user_throughput_bps", "delivered_packets", "residual_bler",
            "latency_p50_ms"], rows


# -- fig4b: closed vs open loop power control -----------------------------------

def fig4b_scenario(power_mode: str, seed: int = 1, n_ues: int = 5,
                   duration_ms: int = 60000) -> Scenario:
    """Sparse uplink bursts and a short dormancy timer: the device sends one
    report and sleeps, so the closed-loop accumulator (reset on release)
    never has time to diverge from the open-loop setpoint."""
    return Scenario(
        name=f"fig4b_{power_mode}", seed=seed, duration_ms=duration_ms,
        layout=LayoutSpec(sectors_per_site=1),
        power=PowerSpec(mode=power_mode),
        ue=UeSpec(dormancy_timer_ms=2000),
        traffic=(TrafficGroupSpec(kind="bursty", count=n_ues, direction="ul",
                                  mean_interarrival_ms=10000.0),))


def power_trace_digest(report: KpiReport) -> str:
    h = hashlib.sha256()
    for tti, ue_id, channel, dbm in report.power_trace:
        h.update(f"{tti},{ue_id},{channel},{dbm:.9f}\n".encode())
    return h.hexdigest()


def run_fig4b(seeds=(1,), duration_ms: int = 60000, jobs: int = 1):
    grid = [(mode, seed) for mode in ("olpc", "clpc") for seed in seeds]
    reports = run_reports(
        (fig4b_scenario(mode, seed, duration_ms=duration_ms)
         for mode, seed in grid), jobs)
    rows = []
    for (mode, seed), rep in zip(grid, reports):
        rows.append({
            "power_mode": mode, "seed": seed,
            "mean_user_throughput_bps": round(mean_user_throughput_bps(rep), 3),
            "delivered_packets": rep.totals["delivered_packets"],
            "latency_p50_ms": rep.totals["latency_p50_ms"],
            "power_trace_sha256": power_trace_digest(rep),
        })
    return ["power_mode", "seed", "mean_user_throughput_bps",
            "delivered_packets", "latency_p50_ms", "power_trace_sha256"], rows


# -- fig4c: open-loop setpoint sweep --------------------------------------------

FIG4C_P0_DBM = (-110.0, -100.0, -90.0)


def fig4c_scenario(p0_dbm: float, seed: int = 1, n_ues: int = 10,
                   duration_ms: int = 60000) -> Scenario:
    """Uplink bursty sweep of the open-loop setpoint.  Lower setpoints keep
    devices under the power cap with headroom for multi-PRB grants at a
    lower code rate; high setpoints push cell-edge devices into the cap."""
    return Scenario(
        name=f"fig4c_p0{p0_dbm:g}", seed=seed, duration_ms=duration_ms,
        layout=LayoutSpec(sectors_per_site=1),
        power=PowerSpec(mode="olpc", p0_dbm=p0_dbm),
        traffic=(TrafficGroupSpec(kind="bursty", count=n_ues,
                                  direction="ul"),))


def run_fig4c(seeds=(1,), duration_ms: int = 60000, jobs: int = 1):
    grid = [(p0, seed) for p0 in FIG4C_P0_DBM for seed in seeds]
    reports = run_reports(
        (fig4c_scenario(p0, seed, duration_ms=duration_ms)
         for p0, seed in grid), jobs)
    rows = []
    for (p0, seed), rep in zip(grid, reports):
        sinrs = [u.mean_data_sinr_db for u in rep.ues
                 if u.mean_data_sinr_db is not None]
        rows.append({
            "p0_dbm": p0, "seed": seed,
            "mean_user_throughput_bps": round(mean_user_throughput_bps(rep), 3),
            "mean_data_sinr_db": (round(sum(sinrs) / len(sinrs), 3)
                                  if sinrs else ""),
            "prb_util_ul": round(rep.totals["prb_util_ul"], 6),
            "residual_bler": round(rep.totals["residual_bler"], 6),
        })
    return ["p0_dbm", "seed", "mean_user_throughput_bps", "mean_data_sinr_db",
            "prb_util_ul", "residual_bler"], rows


# -- fig4d: coverage vs transport block size (analytic) --------------------------

FIG4D_RL_DATA = 32
FIG4D_RL_MPDCCH = 4


def fig4d_rows(model: BlerModel | None = None, tx_power_dbm: float = 20.0):
    """Maximum coupling loss for each initial MCS choice on one PRB.  The
    block carries bits_per_prb(mcs); smaller blocks decode at lower SINR,
    so coverage falls monotonically as the initial MCS grows."""
    model = model if model is not None else BlerModel.from_file()
    bpp = load_tbs_table()
    rows = []
    for mcs, bits in enumerate(bpp):
        mcl = mcl_search(model, FIG4D_RL_MPDCCH, FIG4D_RL_DATA, bits, mcs,
                         tx_power_dbm)
        rows.append({"mcs": mcs, "tbs_bits": bits,
                     "mcl_db": round(mcl, 3) if mcl is not None else ""})
    return ["mcs", "tbs_bits", "mcl_db"], rows


def run_fig4d(seeds=(1,), duration_ms: int = 0, jobs: int = 1):
    del seeds, duration_ms, jobs    # analytic: nothing to sweep
    return fig4d_rows()


# -- table2: voice coverage vs PUSCH repetition under a delay budget -------------

TABLE2_RLS = (8, 16, 32)
TABLE2_MCS = 5
TABLE2_RL_MPDCCH = 4
TABLE2_MAX_ATTEMPTS = 6
VOIP_FRAME_BITS = 320
VOIP_FRAME_PERIOD_MS = 20
VOIP_DELAY_BUDGET_MS = 200


def table2_mcl(rl_data: int, model: BlerModel | None = None,
               tx_power_dbm: float = 20.0) -> float | None:
    """Voice coverage at one PUSCH repetition length.

    A longer repetition stretches the HARQ cycle past the 20 ms frame
    spacing, so k = ceil(cycle/20) frames must ride in one block; the
    waiting time of the oldest frame eats (k-1) frame periods out of the
    200 ms budget.  Larger blocks decode worse, which is what caps the
    benefit of more repetitions."""
    model = model if model is not None else BlerModel.from_file()
    cycle = timing.ul_cycle_ms(TABLE2_RL_MPDCCH, rl_data)
    k = math.ceil(cycle / VOIP_FRAME_PERIOD_MS)
    tbs = k * VOIP_FRAME_BITS
    budget = VOIP_DELAY_BUDGET_MS - (k - 1) * VOIP_FRAME_PERIOD_MS
    return mcl_search(model, TABLE2_RL_MPDCCH, rl_data, tbs, TABLE2_MCS,
                      tx_power_dbm, delay_budget_ms=budget,
                      max_attempts=TABLE2_MAX_ATTEMPTS)


def table2_rows(model: BlerModel | None = None):
    model = model if model is not None else BlerModel.from_file()
    rows = []
    for rl in TABLE2_RLS:
        cycle = timing.ul_cycle_ms(TABLE2_RL_MPDCCH, rl)
        k = math.ceil(cycle / VOIP_FRAME_PERIOD_MS)
        mcl = table2_mcl(rl, model)
        rows.append({
            "rl_pusch": rl, "harq_cycle_ms": cycle, "aggregated_frames": k,
            "tbs_bits": k * VOIP_FRAME_BITS,
            "budget_left_ms": VOIP_DELAY_BUDGET_MS - (k - 1) * VOIP_FRAME_PERIOD_MS,
            "mcl_db": round(mcl, 3) if mcl is not None else "",
        })
    return ["rl_pusch", "harq_cycle_ms", "aggregated_frames", "tbs_bits",
            "budget_left_ms", "mcl_db"], rows


def run_table2(seeds=(1,), duration_ms: int = 0, jobs: int = 1):
    del seeds, duration_ms, jobs
    return table2_rows()


# -- voip: desk-scale mixed-traffic capacity run ----------------------------------

def voip_scenario(seed: int = 1, duration_ms: int = 60000) -> Scenario:
    """Seven tri-sector sites serving 10 voice and 40 bursty devices; the
    KPI set measures only center-site devices to avoid edge bias."""
    return Scenario(
        name="voip", seed=seed, duration_ms=duration_ms,
        layout=LayoutSpec(rings=1, sectors_per_site=3),
        scheduler=SchedulerSpec(cqi_period_ms=80),
        traffic=(TrafficGroupSpec(kind="voip", count=10),
                 TrafficGroupSpec(kind="bursty", count=40)))


def run_voip(seeds=(1,), duration_ms: int = 60000, jobs: int = 1):
    reports = run_reports(
        (voip_scenario(seed, duration_ms) for seed in seeds), jobs)
    rows = []
    for seed, rep in zip(seeds, reports):
        t = rep.totals
        rows.append({
            "seed": seed,
            "offered_packets": t["offered_packets"],
            "delivered_packets": t["delivered_packets"],
            "dropped_packets": t["dropped_packets"],
            "violated_packets": t["violated_packets"],
            "pending_packets": t["pending_packets"],
            "latency_p50_ms": t["latency_p50_ms"],
            "latency_p95_ms": t["latency_p95_ms"],
            "latency_p99_ms": t["latency_p99_ms"],
            "budget_violation_rate": round(t["budget_violation_rate"], 6),
            "prb_util_ul": round(t["prb_util_ul"], 6),
            "prb_util_dl": round(t["prb_util_dl"], 6),
            "mpdcch_util": round(t["mpdcch_util"], 6),
            "conservation_ok": int(t["packet_conservation_ok"]),
        })
    return ["seed", "offered_packets", "delivered_packets", "dropped_packets",
            "violated_packets", "pending_packets", "latency_p50_ms",
            "latency_p95_ms", "latency_p99_ms", "budget_violation_rate",
            "prb_util_ul", "prb_util_dl", "mpdcch_util",
            "conservation_ok"], rows


PRESETS = {
    "fig3": run_fig3,
    "fig4a": run_fig4a,
    "fig4b": run_fig4b,
    "fig4c": run_fig4c,
    "fig4d": run_fig4d,
    "table2": run_table2,
    "voip": run_voip,
}
