import math

import numpy as np
import pytest

from avcbf.dynamics import AugmentedState
from avcbf.scenarios import (
    SCENARIOS,
    InitialSetError,
    StateDomainError,
    UnicycleParams,
    acc_resistance,
    make_scenario,
    target_reached,
)
from avcbf.scenarios.acc import AccParams

from oracles import (
    DEGENERATE_PAIRS,
    degeneration_gap,
    derivative_errors,
    random_plant_state,
)

ALL_VARIANTS = [(sid, var) for sid, variants in SCENARIOS.items() for var in variants]


class TestAccResistance:
    def test_initial_speed(self):
        assert acc_resistance(6.0, AccParams()) == pytest.approx(39.1, abs=1e-12)

    def test_lead_speed(self):
        # 0.1 + 5 * 13.89 + 0.25 * 13.89**2
        assert acc_resistance(13.89, AccParams()) == pytest.approx(117.783025, abs=1e-9)

    def test_small_speed_limit(self):
        assert acc_resistance(1e-12, AccParams()) == pytest.approx(0.1, abs=1e-10)

    def test_nonpositive_speed(self):
        with pytest.raises(StateDomainError):
            acc_resistance(0.0, AccParams())


class TestAccRows:
    def test_initial_auxiliary_levels(self):
        scenario = make_scenario("acc", "avcbf")
        state = scenario.initial_state()
        assert scenario.levels(state) == pytest.approx((90.0, 106.89), abs=1e-12)
        top = scenario.rows(state)[0]
        layout = scenario.layout
        assert top.coeffs[layout.index("nu1")] == pytest.approx(90.0)
        assert top.coeffs[layout.index("u")] == pytest.approx(-1.0 / 1650.0)

    def test_barrier_boundary_zeroes_first_level(self):
        scenario = make_scenario("acc", "avcbf")
        state = AugmentedState(np.array([10.0, 8.0]), (np.array([3.7, 0.2]),), 0.0)
        assert scenario.levels(state)[0] == 0.0

    def test_penalty_level(self):
        scenario = make_scenario("acc", "pacbf", {"v0": 6.0})
        assert scenario.levels(scenario.initial_state())[1] == pytest.approx(842.19, abs=1e-9)

    def test_penalty_upper_box_row(self):
        scenario = make_scenario("acc", "pacbf")
        state = AugmentedState(np.array([100.0, 20.0]), (np.array([3.0]),), 0.0)
        upper = scenario.rows(state)[1]
        assert upper.coeffs[scenario.layout.index("nu1")] == -1.0
        assert upper.rhs == 0.0

    def test_penalty_lyapunov_row_at_target(self):
        scenario = make_scenario("acc", "pacbf")
        state = AugmentedState(np.array([100.0, 20.0]), (np.array([scenario.pacbf.p1_star]),), 0.0)
        clf = [r for r in scenario.rows(state) if r.tag == "PacbfClf"][0]
        assert clf.rhs == 0.0
        assert clf.coeffs[scenario.layout.index("nu1")] == 0.0
        assert clf.coeffs[scenario.layout.index("delta_p")] == 1.0

    def test_reduced_multiplier(self):
        scenario = make_scenario("acc", "reduced")
        assert scenario.multiplier(scenario.initial_state()) == pytest.approx(math.exp(1.5), rel=1e-14)

    def test_reduced_has_no_chain_row(self):
        scenario = make_scenario("acc", "reduced")
        tags = [r.tag for r in scenario.rows(scenario.initial_state())]
        assert not any(t.startswith("AuxChain") for t in tags)

    def test_linear_deceleration_profile(self):
        scenario = make_scenario("acc", "hocbf", {"c_d": (0.4, 0.2), "T": 10.0})
        assert scenario.c_d(0.0) == 0.4
        assert scenario.c_d(5.0) == pytest.approx(0.3)
        assert scenario.c_d(20.0) == pytest.approx(0.2)

    def test_invalid_params(self):
        with pytest.raises(ValueError):
            make_scenario("acc", "avcbf", {"v0": -1.0})


class TestUnicycleRows:
    def test_barrier_and_rate_at_start(self):
        scenario = make_scenario("unicycle", "hocbf")
        state = scenario.initial_state()
        b, b_dot, *_ = scenario._barrier_terms(state)
        assert (b, b_dot) == pytest.approx((8.0, -12.0))
        assert scenario.levels(state) == pytest.approx((8.0, 68.0))

    @pytest.mark.parametrize("x, expected", [(1.5, True), (1.39, False), (1.4, True)])
    def test_target_reached(self, x, expected):
        assert target_reached(np.array([x, 0.0, 0.0, 1.0]), UnicycleParams()) is expected

    def test_mixed_row_couples_both_inputs(self):
        scenario = make_scenario("unicycle", "avcbf_m")
        rng = np.random.default_rng(4)
        layout = scenario.layout
        for _ in range(1000):
            while True:
                x, y = rng.uniform(-5, 5, size=2)
                if x * x + y * y > 1.0:
                    break
            state = AugmentedState(
                np.array([x, y, rng.uniform(-math.pi, math.pi), rng.uniform(-1, 1), rng.uniform(0.5, 5.0)]),
                (np.array([rng.uniform(0.1, 5.0)]),),
                0.0,
            )
            top = scenario.rows(state)[0]
            assert top.coeffs[layout.index("u1")] != 0.0
            assert top.coeffs[layout.index("u2")] != 0.0

    def test_start_inside_obstacle_rejected(self):
        with pytest.raises(ValueError):
            make_scenario("unicycle", "hocbf", {"x0": 0.5})

    def test_unknown_variant(self):
        with pytest.raises(KeyError):
            make_scenario("unicycle", "nope")


def test_initial_set_check():
    scenario = make_scenario("acc", "avcbf", {"a1_0": -1.0})
    with pytest.raises(InitialSetError):
        scenario.check_initial(scenario.initial_state())


@pytest.mark.parametrize("scenario_id, variant", ALL_VARIANTS)
def test_level_rates_match_finite_differences(scenario_id, variant):
    errors = derivative_errors(scenario_id, variant, np.random.default_rng(ALL_VARIANTS.index((scenario_id, variant))),
                               trajectories=3, steps=5)
    assert max(errors) <= 1e-5


@pytest.mark.parametrize("scenario_id, variant", DEGENERATE_PAIRS)
def test_unit_multipliers_reduce_to_plain_rows(scenario_id, variant):
    rng = np.random.default_rng(9)
    auxiliary = make_scenario(scenario_id, variant)
    plain = make_scenario(scenario_id, "hocbf")
    gaps = [degeneration_gap(auxiliary, plain, random_plant_state(scenario_id, rng), 0.0) for _ in range(100)]
    assert max(gaps) <= 1e-12


@pytest.mark.parametrize("scenario_id, variant", ALL_VARIANTS)
def test_default_scenarios_start_in_safe_set(scenario_id, variant):
    scenario = make_scenario(scenario_id, variant)
    scenario.check_initial(scenario.initial_state())
