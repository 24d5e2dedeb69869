"""Head-on obstacle avoidance with four controllers, plus the online target tuner.

    python3 demos/unicycle_benchmark.py

The head-on start is the hard case: every run here stops infeasible. Moving
the start off the centre line (``--offset 1.0``) lets the controllers
steer around the obstacle.
"""

import argparse
from dataclasses import replace
from pathlib import Path

from avcbf.simkit import RunConfig, run

CONFIGS = Path(__file__).resolve().parent / "configs"
RUNS = ("unicycle_hocbf", "unicycle_avcbf2", "unicycle_avcbf_p", "unicycle_avcbf_m")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--offset", type=float, default=0.0, help="initial lateral offset y0 in metres")
    args = parser.parse_args()

    for name in RUNS:
        config = RunConfig.load(CONFIGS / f"{name}.json")
        if args.offset:
            config = replace(config, params={**config.params, "y0": args.offset})
        traj, report = run(config)
        s = traj.summary
        line = f"{name:<18} {s.termination:<10} t_end = {traj.column('t')[-1]:5.2f} s   min b = {s.min_b:8.4f}"
        if report is not None:
            line += f"   windows = {report.windows}   converged = {report.converged}"
        print(line)


if __name__ == "__main__":
    main()
