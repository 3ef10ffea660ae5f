"""Command-line runner for scenario files and canned presets."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from pathlib import Path

from .engine import World
from .errors import ConfigError, InputError, InvariantError
from .kpi import (summary_text, write_kpi_csv, write_power_trace_csv,
                  write_summary_json)
from .presets import PRESETS
from .scenario import OutputSpec, load_scenario


def _parse_seeds(text: str) -> tuple[int, ...]:
    seeds = tuple(int(s) for s in text.split(",") if s.strip())
    if not seeds:
        raise argparse.ArgumentTypeError("no seeds given")
    return seeds


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="catm-sim",
        description="TTI-level system simulator for Cat-M devices: "
                    "narrowband placement, repetition/HARQ under "
                    "half-duplex, link adaptation, power control and "
                    "VoIP scheduling.")
    p.add_argument("scenario", nargs="?",
                   help="scenario file (YAML or JSON)")
    p.add_argument("--preset", choices=sorted(PRESETS),
                   help="run a canned experiment instead of a scenario file")
    p.add_argument("--seed", type=int, default=None,
                   help="override the scenario seed / preset base seed")
    p.add_argument("--seeds", type=_parse_seeds, default=None, metavar="A,B,..",
                   help="comma-separated seed sweep (presets only)")
    p.add_argument("--duration", type=int, default=None, metavar="MS",
                   help="override duration_ms")
    p.add_argument("--out", default="out", metavar="DIR",
                   help="output directory (default: ./out)")
    p.add_argument("--trace", action="store_true",
                   help="also write per-TTI power and grid-occupancy traces")
    p.add_argument("--jobs", type=int, default=1,
                   help="parallel workers for preset sweeps")
    return p


def _write_rows(path: Path, fieldnames, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def run_scenario_file(args) -> int:
    sc = load_scenario(args.scenario)
    if args.seed is not None:
        sc = dataclasses.replace(sc, seed=args.seed)
    if args.duration is not None:
        sc = dataclasses.replace(sc, duration_ms=args.duration)
    if args.trace:
        sc = dataclasses.replace(sc, outputs=OutputSpec(trace=True))

    world = World(sc)
    report = world.run()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_kpi_csv(report, out / "kpi.csv")
    write_summary_json(report, out / "summary.json")
    if args.trace:
        write_power_trace_csv(report, out / "power_trace.csv")
        _write_rows(out / "grid_trace.csv",
                    ["tti", "cell_id", "free_prbs_ul", "free_prbs_dl",
                     "free_mpdcch_units"],
                    [dict(zip(("tti", "cell_id", "free_prbs_ul",
                               "free_prbs_dl", "free_mpdcch_units"), row))
                     for row in world.trace_rows])
    print(summary_text(report))
    print(f"artifacts written to {out}/")
    return 0


def run_preset(args) -> int:
    seeds = args.seeds
    if seeds is None:
        seeds = (args.seed,) if args.seed is not None else (1,)
    kwargs = {"seeds": seeds, "jobs": args.jobs}
    if args.duration is not None:
        kwargs["duration_ms"] = args.duration
    fieldnames, rows = PRESETS[args.preset](**kwargs)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{args.preset}.csv"
    _write_rows(path, fieldnames, rows)

    widths = {f: max(len(f), *(len(str(r[f])) for r in rows)) for f in fieldnames}
    print("  ".join(f.ljust(widths[f]) for f in fieldnames))
    for r in rows:
        print("  ".join(str(r[f]).ljust(widths[f]) for f in fieldnames))
    print(f"wrote {path}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if bool(args.scenario) == bool(args.preset):
        build_parser().print_usage(sys.stderr)
        print("error: give exactly one of a scenario file or --preset",
              file=sys.stderr)
        return 2
    try:
        if args.preset:
            return run_preset(args)
        return run_scenario_file(args)
    except (ConfigError, InputError, FileNotFoundError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except InvariantError as e:
        print(f"invariant breach: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
