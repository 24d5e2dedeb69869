"""Run configs, closed-loop simulation, side-by-side comparison and CSV export."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from .autotune import TuningConfig, TuningReport, tune_full_horizon
from .engine import Trajectory, simulate_scenario
from .scenarios import SCENARIOS, Scenario, make_scenario
from .scenarios.base import InitialSetError

STATUS_COLUMN = "qp_status"
FLOAT_FORMAT = "%.12g"


class ConfigError(ValueError):
    """A run config that cannot be turned into a scenario."""


_TOP_KEYS = {"scenario", "variant", "params", "pacbf_params", "tuning", "label", "seed", "outputs"}
_TUNING_KEYS = {"enabled"} | {f.name for f in fields(TuningConfig)}


@dataclass
class RunConfig:
    scenario: str
    variant: str
    params: dict = field(default_factory=dict)
    pacbf_params: dict = field(default_factory=dict)
    tuning: Optional[TuningConfig] = None
    label: str = ""
    seed: Optional[int] = None  # only consumed by randomized tests
    outputs: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: Any) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("a run config must be a JSON object")
        unknown = set(raw) - _TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key in ("scenario", "variant"):
            if not isinstance(raw.get(key), str):
                raise ConfigError(f"config needs a string {key!r}")
        for key in ("params", "pacbf_params", "outputs"):
            if not isinstance(raw.get(key, {}), dict):
                raise ConfigError(f"{key!r} must be an object")
        tuning = None
        spec = raw.get("tuning")
        if spec is not None:
            if not isinstance(spec, dict):
                raise ConfigError("'tuning' must be an object")
            bad = set(spec) - _TUNING_KEYS
            if bad:
                raise ConfigError(f"unknown tuning keys: {sorted(bad)}")
            options = {k: v for k, v in spec.items() if k != "enabled"}
            if spec.get("enabled", True):
                try:
                    tuning = TuningConfig(**options)
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"tuning: {exc}") from exc
        config = cls(
            scenario=raw["scenario"],
            variant=raw["variant"],
            params=dict(raw.get("params", {})),
            pacbf_params=dict(raw.get("pacbf_params", {})),
            tuning=tuning,
            label=str(raw.get("label", "")),
            seed=raw.get("seed"),
            outputs=dict(raw.get("outputs", {})),
        )
        config.build()  # surface parameter errors before any stepping
        return config

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(raw)

    def build(self) -> Scenario:
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; choose from {sorted(SCENARIOS)}")
        if self.variant not in SCENARIOS[self.scenario]:
            raise ConfigError(
                f"unknown variant {self.variant!r} for {self.scenario}; choose from {list(SCENARIOS[self.scenario])}"
            )
        try:
            return make_scenario(self.scenario, self.variant, self.params, self.pacbf_params or None)
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"{self.scenario}/{self.variant}: {exc}") from exc

    @property
    def name(self) -> str:
        return self.label or f"{self.scenario}_{self.variant}"


def simulate(config: RunConfig) -> Trajectory:
    """Closed-loop run; with tuning enabled, the run under the tuned targets."""
    return run(config)[0]


def run(config: RunConfig) -> tuple[Trajectory, Optional[TuningReport]]:
    scenario = config.build()
    try:
        if config.tuning is None:
            return simulate_scenario(scenario, label=config.name), None
        report = tune_full_horizon(scenario, config.tuning)
    except InitialSetError as exc:
        raise ConfigError(str(exc)) from exc
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    trajectory = report.trajectory
    trajectory.label = config.name
    return trajectory, report


# --- comparison ---------------------------------------------------------------

@dataclass
class Comparison:
    labels: list[str]
    columns: list[str]
    table: np.ndarray  # aligned on the shared time grid, NaN where a run has stopped
    summaries: list[dict]
    deltas: list[dict]  # each run relative to the first

    def to_dict(self) -> dict:
        return {"labels": self.labels, "summaries": self.summaries, "deltas": self.deltas}


def _difference(a: Optional[float], b: Optional[float]) -> Optional[float]:
    if a is None or b is None:
        return None
    return b - a


def compare(configs: Sequence[RunConfig]) -> tuple[Comparison, list[Trajectory]]:
    if len(configs) < 2:
        raise ConfigError("compare needs at least two configs")
    scenarios = [c.build() for c in configs]
    grids = {(s.dt, s.horizon) for s in scenarios}
    if len(grids) != 1:
        raise ConfigError(f"configs do not share dt and T: {sorted(grids)}")
    labels = [c.name for c in configs]
    if len(set(labels)) != len(labels):
        labels = [f"{i}_{name}" for i, name in enumerate(labels)]
    dt, horizon = grids.pop()
    trajectories = [run(c)[0] for c in configs]
    steps = int(round(horizon / dt)) + 1
    columns = ["t"]
    blocks = [np.arange(steps) * dt]
    for label, traj in zip(labels, trajectories):
        for name in traj.columns[1:]:
            column = np.full(steps, np.nan)
            column[: len(traj)] = traj.column(name)
            columns.append(f"{label}:{name}")
            blocks.append(column)
    summaries = [{"label": label, **traj.summary.to_dict()} for label, traj in zip(labels, trajectories)]
    base = trajectories[0].summary
    deltas = []
    for label, traj in zip(labels, trajectories):
        s = traj.summary
        deltas.append({
            "label": label,
            "min_b": s.min_b - base.min_b,
            "first_infeasible_time": _difference(base.first_infeasible_time, s.first_infeasible_time),
            "terminal_state": {
                key: s.terminal_state[key] - base.terminal_state[key]
                for key in s.terminal_state if key in base.terminal_state
            },
        })
    return Comparison(labels, columns, np.column_stack(blocks), summaries, deltas), trajectories


# --- CSV ----------------------------------------------------------------------

def _format(value: float) -> str:
    return FLOAT_FORMAT % value


def export_csv(trajectory: Trajectory, path: str | Path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow([*trajectory.columns, STATUS_COLUMN])
            for row, status in zip(trajectory.values, trajectory.status):
                writer.writerow([*map(_format, row), status])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def write_table(columns: Sequence[str], table: np.ndarray, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(columns)
        writer.writerows([[_format(v) for v in row] for row in table])
    return path


def read_csv(path: str | Path) -> Trajectory:
    with Path(path).open(newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        if not header or header[-1] != STATUS_COLUMN:
            raise ValueError(f"{path}: last column must be {STATUS_COLUMN!r}")
        rows = list(reader)
    columns = tuple(header[:-1])
    values = np.array([[float(v) for v in row[:-1]] for row in rows], dtype=float).reshape(-1, len(columns))
    return Trajectory(columns=columns, values=values, status=[row[-1] for row in rows])


def write_json(data: dict, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # Infinite thresholds survive as JSON's -Infinity literal; NaN is written as null.
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")
    return path


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, float) and math.isnan(value):
        return None
    if isinstance(value, np.generic):
        return _jsonable(value.item())
    return value
