import math

import numpy as np
import pytest

from avcbf.dynamics import (
    AffineDynamics,
    AugmentedState,
    IntegrationError,
    advance_chain,
    rk4_step,
    step_augmented,
)


def decay() -> AffineDynamics:
    return AffineDynamics(1, 1, lambda x: -x, lambda x: np.zeros((1, 1)))


def integrator() -> AffineDynamics:
    return AffineDynamics(1, 1, lambda x: np.zeros(1), lambda x: np.ones((1, 1)))


def test_exponential_decay_single_step():
    x = rk4_step(decay(), [1.0], [0.0], 0.1, substeps=1)
    assert x[0] == pytest.approx(math.exp(-0.1), abs=1e-7)


def test_still_system_stays_put():
    still = AffineDynamics(3, 1, lambda x: np.zeros(3), lambda x: np.zeros((3, 1)))
    assert rk4_step(still, [1.0, -2.0, 3.0], [9.0], 0.1).tolist() == [1.0, -2.0, 3.0]


def test_held_input_integrates_exactly():
    assert rk4_step(integrator(), [0.0], [2.0], 0.1)[0] == pytest.approx(0.2, abs=1e-15)


def test_fourth_order_convergence():
    # x' = -x^2 has x(t) = x0 / (1 + x0 t).
    riccati = AffineDynamics(1, 1, lambda x: -x * x, lambda x: np.zeros((1, 1)))
    exact = 1.0 / (1.0 + 1.0)
    errors = [abs(rk4_step(riccati, [1.0], [0.0], 1.0, substeps=n)[0] - exact) for n in (4, 8, 16)]
    orders = [math.log2(errors[i] / errors[i + 1]) for i in range(2)]
    assert min(orders) >= 3.8


def test_trace_records_every_substep():
    trace: list = []
    rk4_step(decay(), [1.0], [0.0], 0.1, substeps=5, trace=trace)
    assert len(trace) == 5
    assert trace[-1][0] == pytest.approx(math.exp(-0.1), abs=1e-9)


def test_nonfinite_rate_raises():
    blowup = AffineDynamics(1, 1, lambda x: np.array([math.inf]), lambda x: np.zeros((1, 1)))
    with pytest.raises(IntegrationError):
        rk4_step(blowup, [0.0], [0.0], 0.1)


@pytest.mark.parametrize("dt, substeps", [(0.0, 1), (-1.0, 1), (0.1, 0)])
def test_bad_step_arguments(dt, substeps):
    with pytest.raises(ValueError):
        rk4_step(decay(), [1.0], [0.0], dt, substeps)


class TestChains:
    def test_double_integrator_without_input(self):
        assert advance_chain([1.0, 1.0], 0.0, 0.1) == pytest.approx([1.1, 1.0], abs=1e-15)

    def test_double_integrator_with_input(self):
        assert advance_chain([1.0, 1.0], 2.0, 0.1) == pytest.approx([1.11, 1.2], abs=1e-15)

    def test_single_state_chain(self):
        assert advance_chain([50.0], -10.0, 0.1) == pytest.approx([49.0], abs=1e-13)

    def test_augmented_step_advances_everything(self):
        state = AugmentedState(np.array([0.0]), (np.array([1.0, 1.0]), np.array([50.0])), 2.0)
        nxt = step_augmented(state, [2.0], [2.0, -10.0], 0.1, integrator())
        assert nxt.x[0] == pytest.approx(0.2)
        assert nxt.chains[0] == pytest.approx([1.11, 1.2])
        assert nxt.chains[1] == pytest.approx([49.0])
        assert nxt.t == pytest.approx(2.1)
        # The input state is not mutated.
        assert state.chains[0].tolist() == [1.0, 1.0]

    def test_input_count_must_match_chains(self):
        state = AugmentedState(np.array([0.0]), (np.array([1.0]),), 0.0)
        with pytest.raises(ValueError):
            step_augmented(state, [0.0], [1.0, 2.0], 0.1, integrator())
