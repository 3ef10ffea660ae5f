#!/usr/bin/env python3
"""Plot preset sweep CSVs produced by `catm-sim --preset ...`.

Usage: plot_sweep.py out/fig3.csv [out/fig3.png]

Picks the x/y columns by the preset the CSV came from (inferred from the
header) and writes a PNG next to the CSV unless a target is given.
Requires the `plots` extra (matplotlib).
"""
import csv
import sys
from collections import defaultdict
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


PLOTS = {
    # header signature column -> (x, y, series key or None, log-x)
    "rl_data": ("rl_data", "throughput_bps", "coupling_loss_db", True),
    "ibler_target": ("ibler_target", "mean_user_throughput_bps",
                     "olla_step_db", False),
    "power_mode": ("power_mode", "mean_user_throughput_bps", None, False),
    "p0_dbm": ("p0_dbm", "mean_user_throughput_bps", None, False),
    "mcs": ("tbs_bits", "mcl_db", None, False),
    "rl_pusch": ("rl_pusch", "mcl_db", None, True),
}


def main() -> int:
    if len(sys.argv) < 2:
        print(__doc__.strip(), file=sys.stderr)
        return 2
    src = Path(sys.argv[1])
    dst = Path(sys.argv[2]) if len(sys.argv) > 2 else src.with_suffix(".png")
    with open(src, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        print("empty csv", file=sys.stderr)
        return 2
    for sig, (x_col, y_col, series_col, log_x) in PLOTS.items():
        if sig in rows[0]:
            break
    else:
        print(f"unrecognized header: {sorted(rows[0])}", file=sys.stderr)
        return 2

    def val(r, col):
        try:
            return float(r[col])
        except ValueError:
            return r[col]

    series = defaultdict(list)
    for r in rows:
        key = r[series_col] if series_col else ""
        series[key].append((val(r, x_col), val(r, y_col)))

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for key, pts in sorted(series.items()):
        pts.sort()
        xs, ys = zip(*pts)
        label = f"{series_col}={key}" if series_col else None
        if isinstance(xs[0], str):
            ax.bar(xs, ys)
        else:
            ax.plot(xs, ys, marker="o", label=label)
    if log_x and not isinstance(series[next(iter(series))][0][0], str):
        ax.set_xscale("log", base=2)
    ax.set_xlabel(x_col)
    ax.set_ylabel(y_col)
    if series_col:
        ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(dst, dpi=120)
    print(f"wrote {dst}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
