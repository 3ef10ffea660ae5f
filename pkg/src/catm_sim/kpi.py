"""KPI collection and report serialization.

The engine feeds per-UE and per-cell accumulators into a KpiReport at the
end of a run.  CSV output uses a fixed column set and fixed float
formatting so identical runs produce byte-identical files; the resolved
scenario is echoed in the JSON summary, not in the CSV.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvariantError

KPI_COLUMNS = (
    "ue_id", "cell_id", "coupling_loss_db",
    "offered_packets", "offered_bits",
    "delivered_packets", "delivered_bits",
    "dropped_packets", "violated_packets", "pending_packets",
    "throughput_bps",
    "latency_p50_ms", "latency_p95_ms", "latency_p99_ms",
    "blocks_delivered", "blocks_dropped", "residual_bler",
    "budget_packets", "budget_violations", "budget_violation_rate",
    "mean_data_sinr_db",
    "rach_attempts", "rach_overhead_prb_ttis", "rrc_releases",
    "coverage_limited",
)


@dataclass
class UeAccumulator:
    """Mutable per-UE counters filled in during a run."""
    ue_id: int
    cell_id: int
    coupling_loss_db: float
    offered_packets: int = 0
    offered_bits: int = 0
    delivered_packets: int = 0
    delivered_bits: int = 0
    dropped_packets: int = 0
    violated_packets: int = 0
    pending_packets: int = 0
    blocks_delivered: int = 0
    blocks_dropped: int = 0
    budget_packets: int = 0
    budget_violations: int = 0
    sinr_sum_db: float = 0.0
    sinr_count: int = 0
    coverage_limited: bool = False
    rach_attempts: int = 0
    rach_overhead_prb_ttis: int = 0
    rrc_releases: int = 0
    latencies_ms: list[int] = field(default_factory=list)


@dataclass(frozen=True)
class CellKpi:
    cell_id: int
    grants_committed: int
    grants_skipped: int
    prb_ttis_ul: int
    prb_ttis_dl: int
    mpdcch_unit_ttis: int
    prb_util_ul: float
    prb_util_dl: float
    mpdcch_util: float


def _percentiles(samples: list[int]) -> tuple[float | None, ...]:
    if not samples:
        return (None, None, None)
    arr = np.sort(np.asarray(samples, dtype=float))
    p50, p95, p99 = np.percentile(arr, [50.0, 95.0, 99.0], method="linear")
    return (float(p50), float(p95), float(p99))


@dataclass(frozen=True)
class UeKpi:
    ue_id: int
    cell_id: int
    coupling_loss_db: float
    offered_packets: int
    offered_bits: int
    delivered_packets: int
    delivered_bits: int
    dropped_packets: int
    violated_packets: int
    pending_packets: int
    throughput_bps: float
    latency_p50_ms: float | None
    latency_p95_ms: float | None
    latency_p99_ms: float | None
    blocks_delivered: int
    blocks_dropped: int
    residual_bler: float
    budget_packets: int
    budget_violations: int
    budget_violation_rate: float
    mean_data_sinr_db: float | None
    rach_attempts: int
    rach_overhead_prb_ttis: int
    rrc_releases: int
    coverage_limited: bool


@dataclass(frozen=True)
class KpiReport:
    duration_ms: int
    ues: tuple[UeKpi, ...]
    cells: tuple[CellKpi, ...]
    totals: dict
    scenario_echo: dict
    power_trace: tuple[tuple[int, int, str, float], ...]
    measured_ue_ids: tuple[int, ...]


def finalize_ue(acc: UeAccumulator, duration_ms: int) -> UeKpi:
    dur_s = max(duration_ms, 1) / 1000.0
    p50, p95, p99 = _percentiles(acc.latencies_ms)
    if not (p50 is None or p50 <= p95 <= p99):
        raise InvariantError(f"ue {acc.ue_id}: latency percentiles not monotone")
    if acc.delivered_bits > acc.offered_bits:
        raise InvariantError(f"ue {acc.ue_id}: delivered bits exceed offered")
    finished = acc.blocks_delivered + acc.blocks_dropped
    budget_done = acc.delivered_packets + acc.dropped_packets + acc.violated_packets
    return UeKpi(
        ue_id=acc.ue_id, cell_id=acc.cell_id,
        coupling_loss_db=acc.coupling_loss_db,
        offered_packets=acc.offered_packets, offered_bits=acc.offered_bits,
        delivered_packets=acc.delivered_packets,
        delivered_bits=acc.delivered_bits,
        dropped_packets=acc.dropped_packets,
        violated_packets=acc.violated_packets,
        pending_packets=acc.pending_packets,
        throughput_bps=acc.delivered_bits / dur_s,
        latency_p50_ms=p50, latency_p95_ms=p95, latency_p99_ms=p99,
        blocks_delivered=acc.blocks_delivered,
        blocks_dropped=acc.blocks_dropped,
        residual_bler=acc.blocks_dropped / finished if finished else 0.0,
        budget_packets=acc.budget_packets,
        budget_violations=acc.budget_violations,
        budget_violation_rate=(acc.budget_violations / budget_done
                               if acc.budget_packets and budget_done else 0.0),
        mean_data_sinr_db=(acc.sinr_sum_db / acc.sinr_count
                           if acc.sinr_count else None),
        rach_attempts=acc.rach_attempts,
        rach_overhead_prb_ttis=acc.rach_overhead_prb_ttis,
        rrc_releases=acc.rrc_releases,
        coverage_limited=acc.coverage_limited,
    )


def build_totals(ues: list[UeKpi], cells: list[CellKpi],
                 pooled_latencies_ms: list[int], duration_ms: int) -> dict:
    dur_s = max(duration_ms, 1) / 1000.0
    p50, p95, p99 = _percentiles(pooled_latencies_ms)
    blocks_done = sum(u.blocks_delivered + u.blocks_dropped for u in ues)
    blocks_dropped = sum(u.blocks_dropped for u in ues)
    budget_pkts = sum(u.budget_packets for u in ues)
    budget_done = sum(u.delivered_packets + u.dropped_packets + u.violated_packets
                      for u in ues if u.budget_packets)
    offered = sum(u.offered_packets for u in ues)
    delivered = sum(u.delivered_packets for u in ues)
    dropped = sum(u.dropped_packets for u in ues)
    violated = sum(u.violated_packets for u in ues)
    pending = sum(u.pending_packets for u in ues)
    return {
        "offered_packets": offered,
        "offered_bits": sum(u.offered_bits for u in ues),
        "delivered_packets": delivered,
        "delivered_bits": sum(u.delivered_bits for u in ues),
        "dropped_packets": dropped,
        "violated_packets": violated,
        "pending_packets": pending,
        "throughput_bps": sum(u.delivered_bits for u in ues) / dur_s,
        "latency_p50_ms": p50, "latency_p95_ms": p95, "latency_p99_ms": p99,
        "residual_bler": blocks_dropped / blocks_done if blocks_done else 0.0,
        "budget_violation_rate": (sum(u.budget_violations for u in ues) / budget_done
                                  if budget_pkts and budget_done else 0.0),
        "prb_util_ul": (sum(c.prb_util_ul for c in cells) / len(cells)
                        if cells else 0.0),
        "prb_util_dl": (sum(c.prb_util_dl for c in cells) / len(cells)
                        if cells else 0.0),
        "mpdcch_util": (sum(c.mpdcch_util for c in cells) / len(cells)
                        if cells else 0.0),
        "grants_committed": sum(c.grants_committed for c in cells),
        "grants_skipped": sum(c.grants_skipped for c in cells),
        "rach_attempts": sum(u.rach_attempts for u in ues),
        "rach_overhead_prb_ttis": sum(u.rach_overhead_prb_ttis for u in ues),
        "packet_conservation_ok": offered == delivered + dropped + violated + pending,
    }


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def kpi_csv_text(report: KpiReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(KPI_COLUMNS)
    for u in report.ues:
        w.writerow([_fmt(getattr(u, col)) for col in KPI_COLUMNS])
    return buf.getvalue()


def write_kpi_csv(report: KpiReport, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(kpi_csv_text(report))


def write_power_trace_csv(report: KpiReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("tti", "ue_id", "channel", "tx_power_dbm"))
        for tti, ue_id, channel, dbm in report.power_trace:
            w.writerow((tti, ue_id, channel, f"{dbm:.6f}"))


def summary_dict(report: KpiReport) -> dict:
    return {
        "duration_ms": report.duration_ms,
        "n_ues": len(report.ues),
        "n_cells": len(report.cells),
        "measured_ue_ids": list(report.measured_ue_ids),
        "totals": report.totals,
        "cells": [vars(c) if not hasattr(c, "__dataclass_fields__")
                  else {k: getattr(c, k) for k in c.__dataclass_fields__}
                  for c in report.cells],
        "scenario": report.scenario_echo,
    }


def write_summary_json(report: KpiReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(summary_dict(report), fh, indent=2, sort_keys=True)
        fh.write("\n")


def summary_text(report: KpiReport) -> str:
    t = report.totals
    lines = [
        f"duration: {report.duration_ms} ms, ues: {len(report.ues)}, "
        f"cells: {len(report.cells)}",
        f"offered {t['offered_packets']} pkts / {t['offered_bits']} bits; "
        f"delivered {t['delivered_packets']} pkts "
        f"({t['throughput_bps']:.1f} bit/s), dropped {t['dropped_packets']}, "
        f"violated {t['violated_packets']}, pending {t['pending_packets']}",
        f"latency p50/p95/p99 ms: "
        f"{_fmt(t['latency_p50_ms'])}/{_fmt(t['latency_p95_ms'])}/{_fmt(t['latency_p99_ms'])}",
        f"residual BLER {t['residual_bler']:.4f}, "
        f"budget violation rate {t['budget_violation_rate']:.4f}",
        f"PRB util ul/dl {t['prb_util_ul']:.4f}/{t['prb_util_dl']:.4f}, "
        f"MPDCCH util {t['mpdcch_util']:.4f}",
        f"grants {t['grants_committed']} (+{t['grants_skipped']} skipped), "
        f"RACH attempts {t['rach_attempts']} "
        f"(overhead {t['rach_overhead_prb_ttis']} PRB-TTIs)",
        f"packet conservation: "
        f"{'ok' if t['packet_conservation_ok'] else 'VIOLATED'}",
    ]
    return "\n".join(lines)
