"""The per-step control loop: rows -> QP -> hold inputs -> integrate."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .cbf_core import ConstraintRow, assemble_qp
from .dynamics import AugmentedState, IntegrationError, step_augmented
from .numkit import QpProblem, QpSolution, QpStatus, qp_solve
from .scenarios.base import Scenario, StateDomainError

TargetsFn = Callable[[int], dict[str, float]]


@dataclass
class StepRecord:
    """Everything known about one control instant t_k."""

    step: int
    state: AugmentedState
    levels: tuple[float, ...]
    barrier: float
    extras: dict[str, float]
    targets: dict[str, float]
    solution: Optional[QpSolution] = None
    rows: Optional[list[ConstraintRow]] = None

    @property
    def criterion(self) -> float:
        return self.levels[-1]

    @property
    def status(self) -> str:
        return self.solution.status.value if self.solution is not None else "NotSolved"


@dataclass
class Rollout:
    records: list[StepRecord]
    termination: str  # horizon | target | infeasible | numeric | criterion
    message: str = ""

    @property
    def last(self) -> StepRecord:
        return self.records[-1]


def horizon_steps(scenario: Scenario) -> int:
    return int(round(scenario.horizon / scenario.dt))


def constant_targets(scenario: Scenario) -> TargetsFn:
    targets = scenario.default_targets()
    return lambda step: targets


def evaluate(scenario: Scenario, state: AugmentedState, step: int, targets: dict[str, float]) -> StepRecord:
    return StepRecord(
        step=step,
        state=state,
        levels=tuple(float(v) for v in scenario.levels(state)),
        barrier=scenario.barrier(state),
        extras=scenario.extra_columns(state),
        targets=dict(targets),
    )


def solve_record(scenario: Scenario, record: StepRecord) -> QpSolution:
    rows = scenario.rows(record.state)
    problem = assemble_qp(rows, scenario.cost(record.state, record.targets))
    record.rows = rows
    record.solution = qp_solve(problem)
    return record.solution


def advance(scenario: Scenario, state: AugmentedState, w: np.ndarray, step: int) -> tuple[AugmentedState, list]:
    """State at step+1 under held decision ``w``; time is set to (step+1)*dt exactly."""
    u, nus = scenario.split(w)
    trace: list = []
    nxt = step_augmented(state, u, nus, scenario.dt, scenario.dynamics, scenario.substeps, trace)
    return replace(nxt, t=(step + 1) * scenario.dt), trace


def rollout(
    scenario: Scenario,
    start_state: AugmentedState,
    start_step: int,
    last_step: int,
    targets: TargetsFn,
    criterion_threshold: Optional[float] = None,
    stop_at_target: bool = True,
) -> Rollout:
    """Simulate steps start_step..last_step (inclusive), solving a QP at each.

    With ``criterion_threshold`` set, the run also stops at the first step
    whose criterion is not strictly above it (that step's QP is not solved).
    """
    records: list[StepRecord] = []
    state = start_state
    finish_after_next = False
    for k in range(start_step, last_step + 1):
        try:
            record = evaluate(scenario, state, k, targets(k))
        except (StateDomainError, IntegrationError, FloatingPointError) as exc:
            return Rollout(records, "numeric", f"step {k}: {exc}")
        records.append(record)
        if criterion_threshold is not None and not record.criterion > criterion_threshold:
            return Rollout(records, "criterion", f"step {k}: criterion {record.criterion:.6g}")
        try:
            solution = solve_record(scenario, record)
        except (StateDomainError, FloatingPointError) as exc:
            return Rollout(records, "numeric", f"step {k}: {exc}")
        if solution.status is QpStatus.INFEASIBLE:
            return Rollout(records, "infeasible", f"step {k}: {solution.message}")
        if solution.status is not QpStatus.OPTIMAL:
            return Rollout(records, "numeric", f"step {k}: QP {solution.status.value}: {solution.message}")
        if finish_after_next:
            return Rollout(records, "target", f"step {k}: target reached")
        if k == last_step:
            break
        try:
            state, trace = advance(scenario, state, solution.w_star, k)
        except (IntegrationError, FloatingPointError) as exc:
            return Rollout(records, "numeric", f"step {k}: {exc}")
        if stop_at_target and scenario.stop_reason(state, trace) is not None:
            finish_after_next = True
    return Rollout(records, "horizon", "")


# --- trajectory table --------------------------------------------------------

@dataclass
class TrajectorySummary:
    min_b: float
    first_infeasible_time: Optional[float]
    terminal_state: dict[str, float]
    termination: str
    message: str = ""

    def to_dict(self) -> dict:
        return {
            "min_b": self.min_b,
            "first_infeasible_time": self.first_infeasible_time,
            "terminal_state": self.terminal_state,
            "termination": self.termination,
            "message": self.message,
        }


@dataclass
class Trajectory:
    """Per-step table with a string status column and a derived summary."""

    columns: tuple[str, ...]
    values: np.ndarray  # float table, one row per control instant
    status: list[str]
    termination: str = "horizon"
    message: str = ""
    state_columns: tuple[str, ...] = ()
    label: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float).reshape(-1, len(self.columns))
        if self.values.shape[0] != len(self.status):
            raise ValueError("status column length does not match the table")

    def __len__(self) -> int:
        return self.values.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.columns.index(name)]

    def has(self, name: str) -> bool:
        return name in self.columns

    @property
    def summary(self) -> TrajectorySummary:
        b = self.column("b") if len(self) else np.zeros(0)
        infeasible = [i for i, s in enumerate(self.status) if s == QpStatus.INFEASIBLE.value]
        first = float(self.column("t")[infeasible[0]]) if infeasible else None
        terminal = {}
        if len(self):
            terminal = {name: float(self.column(name)[-1]) for name in ("t", *self.state_columns)}
        return TrajectorySummary(
            min_b=float(np.min(b)) if b.size else math.nan,
            first_infeasible_time=first,
            terminal_state=terminal,
            termination=self.termination,
            message=self.message,
        )


def trajectory_columns(scenario: Scenario, tuned: Sequence[str] = ()) -> tuple[str, ...]:
    chain_cols = [name for chain in scenario.chain_names for name in chain]
    level_cols = [f"psi{i}" for i in range(scenario.num_levels)]
    extra_cols = list(scenario.extra_columns(scenario.initial_state()))
    target_cols = [f"target_{name}" for name in tuned]
    return (
        "t",
        *scenario.state_names,
        *chain_cols,
        *scenario.layout.names,
        *level_cols,
        "criterion",
        "objective",
        *extra_cols,
        *target_cols,
    )


def build_trajectory(
    scenario: Scenario,
    records: Sequence[StepRecord],
    termination: str,
    message: str = "",
    tuned: Sequence[str] = (),
    label: str = "",
) -> Trajectory:
    columns = trajectory_columns(scenario, tuned)
    table = np.full((len(records), len(columns)), np.nan)
    n_dec = scenario.layout.dim
    for i, rec in enumerate(records):
        chains = [v for c in rec.state.chains for v in c]
        solved = rec.solution is not None and rec.solution.status is QpStatus.OPTIMAL
        # A non-optimal iterate is not a control that was applied; leave it out of the table.
        decision = rec.solution.w_star if solved else np.full(n_dec, np.nan)
        objective = rec.solution.objective if rec.solution is not None else math.nan
        extras = [rec.extras[k] for k in rec.extras]
        targets = [rec.targets.get(name, math.nan) for name in tuned]
        table[i] = [rec.step * scenario.dt, *rec.state.x, *chains, *decision, *rec.levels,
                    rec.criterion, objective, *extras, *targets]
    return Trajectory(
        columns=columns,
        values=table,
        status=[rec.status for rec in records],
        termination=termination,
        message=message,
        state_columns=tuple(scenario.state_names),
        label=label or scenario.name,
    )


def simulate_scenario(
    scenario: Scenario,
    targets: Optional[TargetsFn] = None,
    tuned: Sequence[str] = (),
    label: str = "",
) -> Trajectory:
    """Closed-loop run over the scenario horizon; stops at the first infeasible QP."""
    start = scenario.initial_state()
    scenario.check_initial(start)
    run = rollout(scenario, start, 0, horizon_steps(scenario), targets or constant_targets(scenario))
    return build_trajectory(scenario, run.records, run.termination, run.message, tuned, label)
