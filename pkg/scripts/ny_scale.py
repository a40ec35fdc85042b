"""Wall-clock for the 196-intersection preset with the herald rule controller."""

import argparse
import time

from heraldlight.config import ControllerSpec, preset
from heraldlight.experiment import run_episode
from heraldlight.herald import HeraldTable


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--horizon", type=int, default=600)
    ap.add_argument("--controller", default="herald-rule")
    args = ap.parse_args()
    scenario = preset("ny-like", horizon=args.horizon, controller=ControllerSpec(args.controller))
    t0 = time.perf_counter()
    res = run_episode(scenario, table=HeraldTable(tau=1.8))
    dt = time.perf_counter() - t0
    m = res.metrics
    print(f"{len(scenario.network().intersections)} intersections, {m.vehicles} vehicles, {len(res.actions)} decisions")
    print(f"{args.horizon} s simulated in {dt:.1f} s wall-clock; ATT {m.att:.1f} s")


if __name__ == "__main__":
    main()
