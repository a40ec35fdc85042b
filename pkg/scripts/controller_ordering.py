"""Median ATT/AQL/AWT per controller over several seeds on a preset (default: jn-like, 600 s)."""

import argparse
import statistics
import time
from dataclasses import replace

from heraldlight.config import ControllerSpec, preset
from heraldlight.experiment import probe_calibrate, run_episode
from heraldlight.metrics import metrics_csv

KINDS = ("herald-rule", "max-pressure", "fixed", "random")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--preset", default="jn-like")
    ap.add_argument("--horizon", type=int, default=600)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--demand-scale", type=float, default=1.0)
    ap.add_argument("--weather", default="base")
    ap.add_argument("--csv", help="write per-seed rows here")
    args = ap.parse_args()

    scenario = preset(args.preset, horizon=args.horizon, demand_scale=args.demand_scale, weather=args.weather)
    table = probe_calibrate(replace(scenario, horizon=2 * args.horizon))
    print(f"calibrated tau={table.tau:.3f} s/veh, {len(table.knots) - 1} knots")
    rows = []
    for kind in KINDS:
        t0 = time.perf_counter()
        reports = []
        for seed in range(args.seeds):
            r = run_episode(replace(scenario, seed=seed, controller=ControllerSpec(kind)), table=table).metrics
            reports.append(r)
            rows.append(r.csv_row(scenario.name, kind, seed))
        med = {k: statistics.median(getattr(r, k) for r in reports) for k in ("att", "aql_veh", "awt")}
        print(f"{kind:13s} ATT {med['att']:7.1f} s  AQL {med['aql_veh']:6.1f} veh  AWT {med['awt']:6.1f} s"
              f"  ({time.perf_counter() - t0:.1f}s)")
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(metrics_csv(rows))


if __name__ == "__main__":
    main()
