import math

import numpy as np
import pytest

from avcbf.autotune import (
    ReplayWindow,
    TuningConfig,
    WindowValue,
    _window_value,
    finite_difference,
    grad_ascent_window,
    run_until_violation,
    simulate_with_schedule,
    tune_full_horizon,
    windowed_psi_min,
)
from avcbf.engine import Rollout, StepRecord, constant_targets, rollout, simulate_scenario
from avcbf.dynamics import AugmentedState
from avcbf.scenarios import make_scenario


class ConcaveWindow:
    """Window whose minimum is 1 - (a - 2)^2 in the target at step ``start``."""

    def __init__(self):
        self.evaluations = 0

    def evaluate(self, k, values):
        self.evaluations += 1
        return WindowValue(1.0 - (values[k, 0] - 2.0) ** 2)

    def commit(self, k, values):
        pass


def ascent(values, **overrides):
    config = TuningConfig(**{"threshold": 0.5, "learning_rate": 0.1, **overrides})
    return grad_ascent_window(ConcaveWindow(), values, 0, 1, config)


class TestAscent:
    def test_concave_oracle_crosses_threshold_monotonically(self):
        values = np.zeros((2, 1))
        result = ascent(values)
        assert result.converged
        assert result.updates <= 6
        assert np.all(np.diff(result.psi_history) > 0)
        assert result.psi_history[-1] > 0.5
        # a_{j+1} = a_j + 0.1 * 2 (2 - a_j) from a_0 = 0.
        a = 0.0
        for _ in range(result.updates):
            a += 0.2 * (2.0 - a)
        assert values[0, 0] == pytest.approx(a, abs=1e-9)
        assert 0.0 < values[0, 0] < 2.0

    def test_already_satisfied_window_is_untouched(self):
        values = np.full((2, 1), 2.0)
        result = ascent(values)
        assert result.converged and result.updates == 0
        assert values[0, 0] == 2.0
        assert all(j == 0 for j in result.iterations.values())

    def test_zero_rate_never_moves(self):
        values = np.zeros((2, 1))
        result = ascent(values, learning_rate=0.0, iteration_limit=4)
        assert not result.converged
        assert values[0, 0] == 0.0
        assert result.iterations[0] == 4

    def test_iteration_counts_bounded_by_limit(self):
        result = ascent(np.zeros((2, 1)), learning_rate=0.01, iteration_limit=3)
        assert max(result.iterations.values()) <= 3


class TestFiniteDifference:
    def test_feasible_probes(self):
        assert finite_difference(WindowValue(3.0), WindowValue(1.0), 0.5) == pytest.approx(2.0)

    def test_infeasible_probes_follow_violation(self):
        plus = WindowValue(-math.inf, 1.0)
        minus = WindowValue(-math.inf, 3.0)
        assert finite_difference(plus, minus, 0.5) == pytest.approx(2.0)

    def test_mixed_probes_point_to_feasible_side(self):
        assert finite_difference(WindowValue(1.0), WindowValue(-math.inf, 2.0), 0.1) > 0
        assert finite_difference(WindowValue(-math.inf, 2.0), WindowValue(1.0), 0.1) < 0

    def test_infeasible_sorts_below_feasible(self):
        assert WindowValue(-math.inf, 5.0) < WindowValue(-1e300)


def fake_rollout(values):
    state = AugmentedState(np.zeros(1))
    records = [StepRecord(i, state, (0.0, v), 0.0, {}, {}) for i, v in enumerate(values)]
    return Rollout(records, "horizon")


@pytest.mark.parametrize("values, expected", [((5.0, 5.0, 5.0), 5.0), ((3.0, -1.0, 4.0), -1.0), ((7.5,), 7.5)])
def test_window_minimum_is_hard_min(values, expected):
    assert _window_value(fake_rollout(values)).psi_min == expected


def test_infeasible_window_is_sentinel():
    run = Rollout(fake_rollout((1.0,)).records, "infeasible")
    value = _window_value(run)
    assert value.psi_min == -math.inf and not value.feasible


class TestConfig:
    @pytest.mark.parametrize("field, value", [("iteration_limit", 0), ("rollback_steps", 0),
                                              ("learning_rate", -1.0), ("threshold", 0.0), ("fd_step", 0.0)])
    def test_invalid(self, field, value):
        with pytest.raises(ValueError):
            TuningConfig(**{field: value})

    def test_grid_mismatch(self):
        with pytest.raises(ValueError, match="dt"):
            tune_full_horizon(make_scenario("acc", "avcbf", {"T": 1.0}), TuningConfig(dt=0.2))

    def test_unknown_tuned_name(self):
        with pytest.raises(ValueError):
            tune_full_horizon(make_scenario("acc", "avcbf", {"T": 1.0}), TuningConfig(tuned=("nu9",)))


class TestSimulationBacked:
    def test_single_step_window_is_that_steps_level(self):
        scenario = make_scenario("acc", "avcbf")
        state = scenario.initial_state()
        schedule = np.ones((3, 1))
        value = windowed_psi_min(scenario, state, 0, 0, ("nu1",), schedule)
        assert value.psi_min == scenario.levels(state)[-1]

    def test_benign_run_has_no_violation(self):
        scenario = make_scenario("acc", "avcbf", {"T": 5.0})
        schedule = np.ones((51, 1))
        step, run = run_until_violation(scenario, scenario.initial_state(), 0, ("nu1",), schedule,
                                        TuningConfig(threshold=1e-6))
        assert step is None and run.termination == "horizon"

    def test_infinite_threshold_fails_at_first_step(self):
        scenario = make_scenario("acc", "avcbf", {"T": 5.0})
        step, _ = run_until_violation(scenario, scenario.initial_state(), 0, ("nu1",), np.ones((51, 1)),
                                      TuningConfig(threshold=math.inf))
        assert step == 0

    def test_head_on_plain_controller_violates_near_one_second(self):
        scenario = make_scenario("unicycle", "hocbf")
        step, _ = run_until_violation(scenario, scenario.initial_state(), 0, (), np.zeros((101, 0)),
                                      TuningConfig())
        assert 0.8 <= step * scenario.dt <= 1.8

    def test_rollback_replay_is_exact(self):
        scenario = make_scenario("unicycle", "avcbf2", {"T": 1.0})
        names = ("nu1", "nu2")
        schedule = np.zeros((11, 2))
        first = rollout(scenario, scenario.initial_state(), 0, 10, lambda k: scenario.default_targets())
        states = {rec.step: rec.state for rec in first.records}
        replay = rollout(scenario, states[4], 4, 10,
                         lambda k: {**scenario.default_targets(), "nu1": schedule[k, 0], "nu2": schedule[k, 1]})
        for original, again in zip(first.records[4:], replay.records):
            assert np.array_equal(original.state.x, again.state.x)
            assert all(np.array_equal(a, b) for a, b in zip(original.state.chains, again.state.chains))
            assert np.array_equal(original.solution.w_star, again.solution.w_star)
        window = ReplayWindow(scenario, names, states, 4, 10)
        assert window.evaluate(4, schedule).psi_min == min(r.criterion for r in first.records[4:])

    def test_disabled_threshold_matches_plain_simulation(self):
        scenario = make_scenario("acc", "avcbf", {"T": 10.0})
        report = tune_full_horizon(scenario, TuningConfig(threshold=-math.inf))
        plain = simulate_scenario(scenario, tuned=("nu1",))
        assert report.converged and report.windows == []
        assert report.trajectory.columns == plain.columns
        assert np.array_equal(report.trajectory.values, plain.values, equal_nan=True)

    def test_benign_scenario_single_pass(self):
        report = tune_full_horizon(make_scenario("acc", "avcbf", {"T": 5.0}), TuningConfig(threshold=1e-3))
        assert report.converged and report.windows == []
        assert report.cumulative_iterations.sum() == 0

    def test_window_start_clamped_at_zero(self):
        scenario = make_scenario("unicycle", "avcbf1", {"k1": 10.0, "k2": 10.0, "T": 2.0})
        report = tune_full_horizon(scenario, TuningConfig(rollback_steps=50, iteration_limit=1))
        assert report.windows[0][0] == 0.0

    def test_window_begins_rollback_steps_before_violation(self):
        scenario = make_scenario("unicycle", "avcbf1", {"k1": 10.0, "k2": 10.0, "T": 2.0})
        config = TuningConfig(rollback_steps=8, iteration_limit=1)
        step, _ = run_until_violation(scenario, scenario.initial_state(), 0, ("nu1",), np.zeros((21, 1)), config)
        report = tune_full_horizon(scenario, config)
        start, end = report.windows[0]
        assert end == pytest.approx(step * scenario.dt)
        assert start == pytest.approx(end - 8 * scenario.dt)
        assert np.all(report.iterations >= 0)
        assert set(report.to_dict()) >= {"tuned_values", "iterations", "windows", "converged"}

    def test_schedule_replay_matches_constant_targets(self):
        scenario = make_scenario("acc", "avcbf", {"T": 2.0})
        traj = simulate_with_schedule(scenario, ("nu1",), np.ones((21, 1)))
        plain = simulate_scenario(scenario, constant_targets(scenario), tuned=("nu1",))
        assert np.array_equal(traj.values, plain.values, equal_nan=True)
