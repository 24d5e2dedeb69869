"""Rollback-window tuning of the auxiliary-input targets a_{i,w}(t_k).

A run is simulated until the safety-feasibility criterion first drops to the
threshold (or a QP fails) at step f. The tuner then rewinds N_c steps and
sweeps the window, nudging each step's target along a central finite
difference of the window minimum of the criterion, until that minimum clears
the threshold or the iteration limit is hit. Tuned targets are held constant
after each window, and the whole procedure repeats until the horizon is done.

Everything here is deterministic: windows are replayed from stored states,
so replaying with unchanged targets reproduces the original rows exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol, Sequence

import numpy as np

from .dynamics import AugmentedState
from .engine import (
    Rollout,
    StepRecord,
    Trajectory,
    build_trajectory,
    horizon_steps,
    rollout,
)
from .scenarios.base import Scenario


@dataclass(frozen=True)
class TuningConfig:
    iteration_limit: int = 10
    rollback_steps: int = 8
    threshold: float = 0.1
    learning_rate: float = 10.0
    fd_step: float = 1e-3
    tuned: Optional[tuple[str, ...]] = None  # defaults to the scenario's tunable inputs
    dt: Optional[float] = None  # when given, must match the scenario
    T: Optional[float] = None

    def __post_init__(self) -> None:
        if self.iteration_limit < 1 or self.rollback_steps < 1:
            raise ValueError("iteration_limit and rollback_steps must be at least 1")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be nonnegative")
        if not self.threshold > 0 and not self.threshold == -math.inf:
            raise ValueError("threshold must be positive (or -inf to disable tuning)")
        if not self.fd_step > 0:
            raise ValueError("fd_step must be positive")
        if self.tuned is not None:
            object.__setattr__(self, "tuned", tuple(self.tuned))


@dataclass(frozen=True, order=True)
class WindowValue:
    """Window minimum of the criterion; infeasible windows sort below every feasible one."""

    psi_min: float
    infeasibility: float = 0.0

    @property
    def feasible(self) -> bool:
        return self.psi_min > -math.inf


def finite_difference(plus: WindowValue, minus: WindowValue, step: float) -> float:
    """Central difference of the window value, taken on phase-1 violation when infeasible."""
    if plus.feasible and minus.feasible:
        return (plus.psi_min - minus.psi_min) / (2.0 * step)
    if not plus.feasible and not minus.feasible:
        if math.isinf(plus.infeasibility) or math.isinf(minus.infeasibility):
            return 0.0
        return -(plus.infeasibility - minus.infeasibility) / (2.0 * step)
    # Only one probe is feasible: climb toward it, scaled by how bad the other side is.
    worst = minus.infeasibility if plus.feasible else plus.infeasibility
    magnitude = worst if math.isfinite(worst) else 1.0
    return math.copysign(magnitude / (2.0 * step), 1.0 if plus.feasible else -1.0)


class Window(Protocol):
    """What the ascent needs from a rollback window.

    ``evaluate(k, values)`` is the window minimum over steps k..f when step l
    uses targets ``values[l]``; ``commit(k, values)`` fixes the state at k+1
    after the target at k changed.
    """

    def evaluate(self, k: int, values: np.ndarray) -> WindowValue: ...

    def commit(self, k: int, values: np.ndarray) -> None: ...


@dataclass
class WindowResult:
    start: int
    end: int
    converged: bool
    iterations: dict[int, int]
    psi_history: list[float] = field(default_factory=list)
    updates: int = 0


def grad_ascent_window(window: Window, values: np.ndarray, start: int, end: int,
                       config: TuningConfig) -> WindowResult:
    """Sweep steps start..end-1 repeatedly, raising each step's targets along the window gradient.

    ``values`` has one row per step and one column per tuned target; it is
    updated in place. The sweep stops as soon as the window minimum from the
    current step exceeds the threshold.
    """
    iterations = {step: 0 for step in range(start, end + 1)}
    history: list[float] = []
    updates = 0
    for j in range(1, config.iteration_limit + 1):
        for k in range(start, max(end, start + 1)):
            current = window.evaluate(k, values)
            history.append(current.psi_min)
            if current.psi_min > config.threshold:
                return WindowResult(start, end, True, iterations, history, updates)
            for column in range(values.shape[1]):
                saved = values[k, column]
                values[k, column] = saved + config.fd_step
                plus = window.evaluate(k, values)
                values[k, column] = saved - config.fd_step
                minus = window.evaluate(k, values)
                values[k, column] = saved + config.learning_rate * finite_difference(plus, minus, config.fd_step)
            updates += 1
            iterations[k] = j
            window.commit(k, values)
    final = window.evaluate(start, values)
    history.append(final.psi_min)
    return WindowResult(start, end, final.psi_min > config.threshold, iterations, history, updates)


# --- simulation-backed pieces -------------------------------------------------

Schedule = np.ndarray  # (steps + 1, len(tuned)) targets per step


def schedule_targets(scenario: Scenario, names: Sequence[str], schedule: Schedule) -> Callable[[int], dict]:
    defaults = scenario.default_targets()

    def targets(step: int) -> dict[str, float]:
        row = schedule[min(step, schedule.shape[0] - 1)]
        return {**defaults, **{name: float(v) for name, v in zip(names, row)}}

    return targets


def _window_value(run: Rollout) -> WindowValue:
    if run.termination in ("infeasible", "numeric"):
        solution = run.records[-1].solution if run.records else None
        measure = solution.infeasibility if solution is not None else math.inf
        return WindowValue(-math.inf, measure if measure > 0 else math.inf)
    return WindowValue(min(rec.criterion for rec in run.records))


def windowed_psi_min(scenario: Scenario, start_state: AugmentedState, start: int, end: int,
                     names: Sequence[str], schedule: Schedule) -> WindowValue:
    """Replay steps start..end (QP solved at each, including the last) and take the hard minimum."""
    run = rollout(scenario, start_state, start, end, schedule_targets(scenario, names, schedule),
                  stop_at_target=False)
    return _window_value(run)


class ReplayWindow:
    """A rollback window over a simulated trajectory, replayed from stored states."""

    def __init__(self, scenario: Scenario, names: Sequence[str], states: dict[int, AugmentedState],
                 start: int, end: int):
        self.scenario = scenario
        self.names = tuple(names)
        self.states = dict(states)
        self.start, self.end = start, end

    def evaluate(self, k: int, values: np.ndarray) -> WindowValue:
        return windowed_psi_min(self.scenario, self.states[k], k, self.end, self.names, values)

    def commit(self, k: int, values: np.ndarray) -> None:
        run = rollout(self.scenario, self.states[k], k, k + 1,
                      schedule_targets(self.scenario, self.names, values), stop_at_target=False)
        if len(run.records) == 2:
            self.states[k + 1] = run.records[1].state


def run_until_violation(scenario: Scenario, start_state: AugmentedState, start: int,
                        names: Sequence[str], schedule: Schedule,
                        config: TuningConfig) -> tuple[Optional[int], Rollout]:
    """Simulate from ``start`` until the criterion fails or a QP is not Optimal.

    Returns the violating step (None if the horizon or the target was reached)
    and the rollout. Integrator and state-domain failures propagate as the
    rollout's ``numeric`` termination with no QP attached.
    """
    threshold = None if config.threshold == -math.inf else config.threshold
    run = rollout(scenario, start_state, start, horizon_steps(scenario),
                  schedule_targets(scenario, names, schedule), criterion_threshold=threshold)
    if run.termination in ("horizon", "target"):
        return None, run
    last = run.records[-1] if run.records else None
    if run.termination == "numeric" and (last is None or last.solution is None):
        return None, run
    return last.step, run


@dataclass
class TuningReport:
    names: tuple[str, ...]
    tuned_values: np.ndarray  # (steps + 1, len(names))
    iterations: np.ndarray  # j(t_l) of the latest execution touching each step
    cumulative_iterations: np.ndarray  # summed over executions
    windows: list[tuple[float, float]]
    converged: bool
    trajectory: Optional[Trajectory] = None
    message: str = ""

    def to_dict(self) -> dict:
        return {
            "tuned_values": {name: self.tuned_values[:, i].tolist() for i, name in enumerate(self.names)},
            "iterations": self.iterations.tolist(),
            "cumulative_iterations": self.cumulative_iterations.tolist(),
            "windows": [list(w) for w in self.windows],
            "converged": self.converged,
            "message": self.message,
            "summary": self.trajectory.summary.to_dict() if self.trajectory is not None else None,
        }


def _check_grid(scenario: Scenario, config: TuningConfig) -> None:
    if config.dt is not None and not math.isclose(config.dt, scenario.dt, rel_tol=0, abs_tol=1e-12):
        raise ValueError(f"tuning dt {config.dt} does not match scenario dt {scenario.dt}")
    if config.T is not None and not math.isclose(config.T, scenario.horizon, rel_tol=0, abs_tol=1e-12):
        raise ValueError(f"tuning T {config.T} does not match scenario horizon {scenario.horizon}")


def tune_full_horizon(scenario: Scenario, config: TuningConfig = TuningConfig()) -> TuningReport:
    """Repeat violation search and window ascent until the horizon is covered."""
    _check_grid(scenario, config)
    names = tuple(config.tuned if config.tuned is not None else scenario.tunable)
    unknown = [n for n in names if n not in scenario.default_targets()]
    if unknown:
        raise ValueError(f"{scenario.name} has no tunable target(s) {unknown}")
    steps = horizon_steps(scenario)
    defaults = scenario.default_targets()
    schedule = np.tile([defaults[n] for n in names], (steps + 1, 1)).astype(float)
    iterations = np.zeros(steps + 1, dtype=int)
    cumulative = np.zeros(steps + 1, dtype=int)
    windows: list[tuple[float, float]] = []

    start_state = scenario.initial_state()
    scenario.check_initial(start_state)
    states: dict[int, AugmentedState] = {}
    resume, resume_state = 0, start_state
    converged, message = True, ""
    previous_violation = -1
    while True:
        violation, run = run_until_violation(scenario, resume_state, resume, names, schedule, config)
        states.update({rec.step: rec.state for rec in run.records})
        if violation is None:
            break
        if not names or violation <= previous_violation:
            converged, message = False, f"criterion violated at step {violation} with nothing left to tune"
            break
        previous_violation = violation
        start = max(violation - config.rollback_steps, 0)
        windows.append((start * scenario.dt, violation * scenario.dt))
        window = ReplayWindow(scenario, names, states, start, violation)
        result = grad_ascent_window(window, schedule, start, violation, config)
        for step, j in result.iterations.items():
            iterations[step] = j
            cumulative[step] += j
        if not result.converged:
            converged, message = False, f"window {windows[-1]} did not clear the threshold"
            break
        # Targets after the window inherit the value at its last step.
        schedule[violation + 1:] = schedule[violation]
        replay = rollout(scenario, states[start], start, violation,
                         schedule_targets(scenario, names, schedule), stop_at_target=False)
        states.update({rec.step: rec.state for rec in replay.records})
        resume, resume_state = violation, states[violation]

    trajectory = simulate_with_schedule(scenario, names, schedule)
    return TuningReport(names, schedule, iterations, cumulative, windows, converged, trajectory, message)


def simulate_with_schedule(scenario: Scenario, names: Sequence[str], schedule: Schedule,
                           label: str = "") -> Trajectory:
    start = scenario.initial_state()
    scenario.check_initial(start)
    run = rollout(scenario, start, 0, horizon_steps(scenario), schedule_targets(scenario, names, schedule))
    return build_trajectory(scenario, run.records, run.termination, run.message, names, label)


__all__ = [
    "ReplayWindow", "StepRecord", "TuningConfig", "TuningReport", "Window", "WindowResult", "WindowValue",
    "finite_difference", "grad_ascent_window", "run_until_violation", "schedule_targets",
    "simulate_with_schedule", "tune_full_horizon", "windowed_psi_min",
]
