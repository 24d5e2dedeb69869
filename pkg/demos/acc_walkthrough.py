"""Car following: auxiliary-variable barrier vs plain high-order barrier vs penalty method.

Runs the ACC demo configs, prints one summary line per run and writes the
aligned comparison table next to this script.

    python3 demos/acc_walkthrough.py
"""

from pathlib import Path

from avcbf.simkit import RunConfig, compare, simulate, write_table

HERE = Path(__file__).resolve().parent
CONFIGS = HERE / "configs"


def describe(traj) -> str:
    s = traj.summary
    stop = f"infeasible at {s.first_infeasible_time:g} s" if s.first_infeasible_time is not None else s.termination
    return f"{traj.label:<18} {stop:<22} min b = {s.min_b:8.4f}   v_end = {traj.column('v')[-1]:.3f} m/s"


def main() -> None:
    baseline = simulate(RunConfig.load(CONFIGS / "acc_avcbf.json"))
    print(describe(baseline))

    # Same gains and braking limit for all three; only the controller changes.
    names = ("acc_avcbf_tight", "acc_hocbf_tight", "acc_pacbf")
    comparison, trajectories = compare([RunConfig.load(CONFIGS / f"{n}.json") for n in names])
    for traj in trajectories:
        print(describe(traj))

    out = HERE / "out" / "acc_aligned.csv"
    write_table(comparison.columns, comparison.table, out)
    print(f"aligned table: {out}")


if __name__ == "__main__":
    main()
