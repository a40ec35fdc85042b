"""Herald-rule ATT as a function of the forecast horizon (and MaxPressure for reference)."""

import argparse
import statistics
from dataclasses import replace

from heraldlight.config import ControllerSpec, preset
from heraldlight.experiment import probe_calibrate, run_episode


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--preset", default="jn-like")
    ap.add_argument("--horizon", type=int, default=600)
    ap.add_argument("--seeds", default="10,11,12,13,14")
    ap.add_argument("--demand-scale", type=float, default=1.0)
    ap.add_argument("--values", default="0,3,5,10,20,40")
    args = ap.parse_args()
    seeds = [int(s) for s in args.seeds.split(",")]

    scenario = preset(args.preset, horizon=args.horizon, demand_scale=args.demand_scale)
    table = probe_calibrate(replace(scenario, horizon=2 * args.horizon))
    mp = [run_episode(replace(scenario, seed=s, controller=ControllerSpec("max-pressure")), table=table).metrics.att for s in seeds]
    print(f"max-pressure        median ATT {statistics.median(mp):.1f} s")
    for h in (float(v) for v in args.values.split(",")):
        sc = replace(scenario, herald=replace(scenario.herald, forecast_horizon=h))
        atts = [run_episode(replace(sc, seed=s), table=table).metrics.att for s in seeds]
        print(f"herald-rule H={h:4.0f}s median ATT {statistics.median(atts):.1f} s")


if __name__ == "__main__":
    main()
