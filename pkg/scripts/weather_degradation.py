"""ATT under base vs extreme weather for the non-LLM controllers."""

import argparse
from dataclasses import replace

from heraldlight.config import ControllerSpec, preset
from heraldlight.experiment import probe_calibrate, run_episode


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--preset", default="grid2x2")
    ap.add_argument("--horizon", type=int, default=600)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    att = {}
    for weather in ("base", "extreme"):
        scenario = preset(args.preset, horizon=args.horizon, seed=args.seed, weather=weather)
        table = probe_calibrate(replace(scenario, horizon=2 * args.horizon))
        for kind in ("fixed", "max-pressure", "herald-rule"):
            att[kind, weather] = run_episode(replace(scenario, controller=ControllerSpec(kind)), table=table).metrics.att
    for kind in ("fixed", "max-pressure", "herald-rule"):
        b, e = att[kind, "base"], att[kind, "extreme"]
        print(f"{kind:13s} base {b:7.1f} s  extreme {e:7.1f} s  delta {100 * (e - b) / b:+6.1f}%")


if __name__ == "__main__":
    main()
