"""Unicycle driving past a circular obstacle toward a target disc.

Two plants share this module. The high-order one has state (x, y, theta, v)
with theta' = u1 and v' = u2/M, so the distance barrier has relative degree 2
in both inputs. The mixed one adds a steering-rate state phi (theta' = phi,
phi' = u1), so u2 appears after one differentiation and u1 only after two.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..cbf_core import (
    AuxFnKind,
    AuxiliaryChain,
    ConstraintRow,
    CostSpec,
    DecisionLayout,
    StateTerm,
    build_aux_chain_row,
    build_clf_row,
    build_control_bound_rows,
)
from ..dynamics import AffineDynamics, AugmentedState
from .base import Scenario


TARGET_SLACK = 1e-12


@dataclass(frozen=True)
class UnicycleParams:
    M: float = 1650.0
    obstacle: tuple[float, float, float] = (0.0, 0.0, 1.0)
    target: tuple[float, float, float] = (1.5, 0.0, 0.1)
    u1_max: float = 5.0
    u2_max: float = 8250.0
    k1: float = 10.0
    k2: float = 10.0
    l11: float = 0.1
    l12: float = 0.1
    l21: float = 0.1
    W1: float = 1000.0
    W2: float = 1000.0
    Q: float = 1e5
    a_1w: float = 0.0
    a_2w: float = 0.0
    c3: float = 10.0
    eps: float = 1e-10
    x0: float = -3.0
    y0: float = 0.0
    theta0: float = 0.0
    v0: float = 2.0
    phi0: float = 0.0
    a1_0: float = 0.1
    a2_0: float = 0.1
    pi12_0: float = 0.1
    dt: float = 0.1
    T: float = 10.0
    stop_at_target: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "obstacle", tuple(float(v) for v in self.obstacle))
        object.__setattr__(self, "target", tuple(float(v) for v in self.target))
        xo, yo, ro = self.obstacle
        if len(self.obstacle) != 3 or len(self.target) != 3:
            raise ValueError("obstacle and target are (x, y, radius) triples")
        if not (ro > 0 and self.target[2] > 0):
            raise ValueError("obstacle and target radii must be positive")
        if (self.x0 - xo) ** 2 + (self.y0 - yo) ** 2 <= ro * ro:
            raise ValueError("initial position must be strictly outside the obstacle")
        if not (self.dt > 0 and self.T >= 0 and self.M > 0 and self.c3 > 0 and self.eps > 0):
            raise ValueError("dt, M, c3, eps must be positive and T nonnegative")
        if not (self.u1_max > 0 and self.u2_max > 0):
            raise ValueError("input bounds must be positive")


def target_reached(state: AugmentedState | Sequence[float], params: UnicycleParams) -> bool:
    x = state.x if isinstance(state, AugmentedState) else np.asarray(state, dtype=float)
    xd, yd, rd = params.target
    # The disc is closed; the slack absorbs round-off in points placed on its edge.
    return bool(math.hypot(x[0] - xd, x[1] - yd) <= rd + TARGET_SLACK)


class _UnicycleBase(Scenario):
    scenario_id = "unicycle"
    input_names = ("u1", "u2")
    mixed = False

    def __init__(self, params: UnicycleParams, layout: Sequence[str]):
        self.params = params
        self.layout = DecisionLayout(tuple(layout))
        self.dt = params.dt
        self.horizon = params.T
        M = params.M
        if self.mixed:
            self.state_names = ("x", "y", "theta", "phi", "v")

            def drift(s: np.ndarray) -> np.ndarray:
                return np.array([s[4] * math.cos(s[2]), s[4] * math.sin(s[2]), s[3], 0.0, 0.0])

            columns = np.array([[0, 0], [0, 0], [0, 0], [1.0, 0], [0, 1.0 / M]])
            self.dynamics = AffineDynamics(5, 2, drift, lambda s: columns)
        else:
            self.state_names = ("x", "y", "theta", "v")

            def drift(s: np.ndarray) -> np.ndarray:
                return np.array([s[3] * math.cos(s[2]), s[3] * math.sin(s[2]), 0.0, 0.0])

            columns = np.array([[0, 0], [0, 0], [1.0, 0], [0, 1.0 / M]])
            self.dynamics = AffineDynamics(4, 2, drift, lambda s: columns)

    def _speed(self, state: AugmentedState) -> float:
        return float(state.x[-1])

    def initial_state(self) -> AugmentedState:
        p = self.params
        if self.mixed:
            x = np.array([p.x0, p.y0, p.theta0, p.phi0, p.v0])
        else:
            x = np.array([p.x0, p.y0, p.theta0, p.v0])
        return AugmentedState(x, self._initial_chains(), 0.0)

    def _initial_chains(self) -> tuple[np.ndarray, ...]:
        return ()

    def barrier(self, state: AugmentedState) -> float:
        xo, yo, ro = self.params.obstacle
        return float((state.x[0] - xo) ** 2 + (state.x[1] - yo) ** 2 - ro * ro)

    def _barrier_terms(self, state: AugmentedState):
        """b, b' and the pieces of b'' = b2_drift + b2_u1 u1 + b2_u2 u2 (high-order plant)."""
        xo, yo, _ = self.params.obstacle
        x, y, theta = state.x[0], state.x[1], state.x[2]
        v = self._speed(state)
        dx, dy = x - xo, y - yo
        c, s = math.cos(theta), math.sin(theta)
        radial = dx * c + dy * s
        lateral = dy * c - dx * s
        b = self.barrier(state)
        b_dot = 2.0 * v * radial
        return b, b_dot, 2.0 * v * v, 2.0 * v * lateral, 2.0 * radial / self.params.M

    def _heading_error(self, state: AugmentedState) -> tuple[float, float]:
        """theta - theta_d and d(theta_d)/dt, with theta_d the bearing to the target."""
        xd, yd, _ = self.params.target
        x, y, theta = state.x[0], state.x[1], state.x[2]
        v = self._speed(state)
        ex, ey = xd - x, yd - y
        bearing = math.atan2(ey, ex)
        dist2 = ex * ex + ey * ey
        bearing_rate = v * (ey * math.cos(theta) - ex * math.sin(theta)) / dist2 if dist2 > 0 else 0.0
        return theta - bearing, bearing_rate

    def _clf_row(self, state: AugmentedState) -> ConstraintRow:
        p = self.params
        error, bearing_rate = self._heading_error(state)
        if self.mixed:
            phi = state.x[3]
            e = 0.1 * error + phi
            return build_clf_row(e * e, 2.0 * e * 0.1 * (phi - bearing_rate), [2.0 * e, 0.0], p.c3,
                                 self.layout, self.input_names)
        return build_clf_row(error * error, -2.0 * error * bearing_rate, [2.0 * error, 0.0], p.c3,
                             self.layout, self.input_names)

    def _common_rows(self, state: AugmentedState) -> list[ConstraintRow]:
        p = self.params
        bounds = build_control_bound_rows([-p.u1_max, -p.u2_max], [p.u1_max, p.u2_max],
                                          self.layout, self.input_names)
        return [self._clf_row(state), *bounds]

    def _base_cost(self) -> CostSpec:
        cost = CostSpec(self.layout)
        cost.quadratic("u1", 1.0).quadratic("u2", 1.0).quadratic("delta", self.params.Q)
        return cost

    def stop_reason(self, state: AugmentedState, trace: Sequence[np.ndarray]) -> Optional[str]:
        if not self.params.stop_at_target:
            return None
        for x in (*trace, state.x):
            if target_reached(x, self.params):
                return "target"
        return None

    def distance_to_target(self, x: np.ndarray) -> float:
        xd, yd, _ = self.params.target
        return math.hypot(x[0] - xd, x[1] - yd)

    def extra_columns(self, state: AugmentedState) -> dict[str, float]:
        return {"b": self.barrier(state), "target_distance": self.distance_to_target(state.x)}


class UnicycleHocbf(_UnicycleBase):
    variant = "hocbf"

    def __init__(self, params: UnicycleParams):
        super().__init__(params, ("u1", "u2", "delta"))

    def levels(self, state: AugmentedState) -> tuple[float, float]:
        b, b_dot, *_ = self._barrier_terms(state)
        return b, b_dot + self.params.k1 * b

    def rows(self, state: AugmentedState) -> list[ConstraintRow]:
        p = self.params
        b, b_dot, b2, b2_u1, b2_u2 = self._barrier_terms(state)
        psi1 = b_dot + p.k1 * b
        top = ConstraintRow(
            self.layout.vector({"u1": b2_u1, "u2": b2_u2}),
            -(b2 + p.k1 * b_dot + p.k2 * psi1),
            "HighestAvcbf",
            (b, psi1),
        )
        return [top, *self._common_rows(state)]

    def cost(self, state: AugmentedState, targets: dict[str, float]) -> CostSpec:
        return self._base_cost()

    def level_rates(self, state: AugmentedState, w: np.ndarray) -> tuple[float, float]:
        psi0, psi1 = self.levels(state)
        return psi1 - self.params.k1 * psi0, self.rows(state)[0].slack(w) - self.params.k2 * psi1


class UnicycleAvcbf1(_UnicycleBase):
    """One auxiliary variable a1 (two-state chain) multiplying the barrier."""

    variant = "avcbf1"
    chain_names = (("a1", "a1_dot"),)
    chain_inputs = ("nu1",)
    tunable = ("nu1",)

    def __init__(self, params: UnicycleParams):
        super().__init__(params, ("u1", "u2", "nu1", "delta"))

    def _initial_chains(self) -> tuple[np.ndarray, ...]:
        return (np.array([self.params.a1_0, self.params.pi12_0]),)

    def default_targets(self) -> dict[str, float]:
        return {"nu1": self.params.a_1w}

    def levels(self, state: AugmentedState) -> tuple[float, float]:
        a, a_dot = state.chains[0]
        b, b_dot, *_ = self._barrier_terms(state)
        return a * b, a_dot * b + a * b_dot + self.params.k1 * a * b

    def chain_levels(self, state: AugmentedState) -> tuple[float, ...]:
        a, a_dot = state.chains[0]
        return a, a_dot + self.params.l11 * a

    def rows(self, state: AugmentedState) -> list[ConstraintRow]:
        p = self.params
        a, a_dot = state.chains[0]
        b, b_dot, b2, b2_u1, b2_u2 = self._barrier_terms(state)
        psi0, psi1 = self.levels(state)
        drift = 2.0 * a_dot * b_dot + a * b2 + p.k1 * (a_dot * b + a * b_dot) + p.k2 * psi1
        top = ConstraintRow(
            self.layout.vector({"u1": a * b2_u1, "u2": a * b2_u2, "nu1": b}),
            -drift,
            "HighestAvcbf",
            (psi0, psi1),
        )
        chain = AuxiliaryChain(1, (a, a_dot), (p.l11, p.l12), "nu1", p.eps)
        return [top, build_aux_chain_row(chain, self.layout), *self._common_rows(state)]

    def cost(self, state: AugmentedState, targets: dict[str, float]) -> CostSpec:
        return self._base_cost().quadratic("nu1", self.params.W1, targets.get("nu1", self.params.a_1w))

    def level_rates(self, state: AugmentedState, w: np.ndarray) -> tuple[float, float]:
        psi0, psi1 = self.levels(state)
        return psi1 - self.params.k1 * psi0, self.rows(state)[0].slack(w) - self.params.k2 * psi1


class UnicycleAvcbf2(_UnicycleBase):
    """Two auxiliary variables: a1 scales psi_0, a2 scales psi_1."""

    variant = "avcbf2"
    chain_names = (("a1", "a1_dot"), ("a2",))
    chain_inputs = ("nu1", "nu2")
    tunable = ("nu1", "nu2")

    def __init__(self, params: UnicycleParams):
        super().__init__(params, ("u1", "u2", "nu1", "nu2", "delta"))

    def _initial_chains(self) -> tuple[np.ndarray, ...]:
        p = self.params
        return (np.array([p.a1_0, p.pi12_0]), np.array([p.a2_0]))

    def default_targets(self) -> dict[str, float]:
        return {"nu1": self.params.a_1w, "nu2": self.params.a_2w}

    def _inner(self, state: AugmentedState) -> float:
        """psi_0' + k1 psi_0, i.e. psi_1 / a2."""
        a1, a1_dot = state.chains[0]
        b, b_dot, *_ = self._barrier_terms(state)
        return a1_dot * b + a1 * b_dot + self.params.k1 * a1 * b

    def levels(self, state: AugmentedState) -> tuple[float, float]:
        a1 = state.chains[0][0]
        a2 = state.chains[1][0]
        return a1 * self.barrier(state), a2 * self._inner(state)

    def chain_levels(self, state: AugmentedState) -> tuple[float, ...]:
        a1, a1_dot = state.chains[0]
        return a1, a1_dot + self.params.l11 * a1, state.chains[1][0]

    def rows(self, state: AugmentedState) -> list[ConstraintRow]:
        p = self.params
        a1, a1_dot = state.chains[0]
        a2 = float(state.chains[1][0])
        b, b_dot, b2, b2_u1, b2_u2 = self._barrier_terms(state)
        inner = self._inner(state)
        psi0, psi1 = self.levels(state)
        # psi_2 = nu2 inner + a2 (nu1 b + 2 a1' b' + a1 b'' + k1 (a1' b + a1 b')) + k2 psi_1.
        drift = a2 * (2.0 * a1_dot * b_dot + a1 * b2 + p.k1 * (a1_dot * b + a1 * b_dot)) + p.k2 * psi1
        top = ConstraintRow(
            self.layout.vector({"u1": a2 * a1 * b2_u1, "u2": a2 * a1 * b2_u2, "nu1": a2 * b, "nu2": inner}),
            -drift,
            "HighestAvcbf",
            (psi0, psi1),
        )
        first = AuxiliaryChain(1, (a1, a1_dot), (p.l11, p.l12), "nu1", p.eps)
        second = AuxiliaryChain(2, (a2,), (p.l21,), "nu2", p.eps)
        return [
            top,
            build_aux_chain_row(first, self.layout),
            build_aux_chain_row(second, self.layout),
            *self._common_rows(state),
        ]

    def cost(self, state: AugmentedState, targets: dict[str, float]) -> CostSpec:
        p = self.params
        cost = self._base_cost()
        cost.quadratic("nu1", p.W1, targets.get("nu1", p.a_1w))
        return cost.quadratic("nu2", p.W2, targets.get("nu2", p.a_2w))

    def level_rates(self, state: AugmentedState, w: np.ndarray) -> tuple[float, float]:
        psi0, psi1 = self.levels(state)
        a2 = state.chains[1][0]
        return psi1 / a2 - self.params.k1 * psi0, self.rows(state)[0].slack(w) - self.params.k2 * psi1


class _StateSumAvcbf(_UnicycleBase):
    """psi_0 = (a1 + v + s) b with s = theta (high-order plant) or phi (mixed plant).

    Differentiating the multiplier brings in u1 through s and u2 through v,
    so both inputs appear in the single first-order row.
    """

    chain_names = (("a1",),)
    chain_inputs = ("nu1",)
    tunable = ("nu1",)

    def __init__(self, params: UnicycleParams):
        super().__init__(params, ("u1", "u2", "nu1", "delta"))

    def _initial_chains(self) -> tuple[np.ndarray, ...]:
        return (np.array([self.params.a1_0]),)

    def default_targets(self) -> dict[str, float]:
        return {"nu1": self.params.a_1w}

    def _state_term(self, state: AugmentedState) -> StateTerm:
        # The summed state is phi (index 3) in the mixed plant and theta (index 2) otherwise.
        s = state.x[3] if self.mixed else state.x[2]
        return StateTerm(self._speed(state) + s, 0.0, {"u1": 1.0, "u2": 1.0 / self.params.M})

    def multiplier(self, state: AugmentedState) -> float:
        return float(state.chains[0][0] + self._state_term(state).value)

    def _b_dot(self, state: AugmentedState) -> float:
        return self._barrier_terms(state)[1]

    def levels(self, state: AugmentedState) -> tuple[float]:
        return (self.multiplier(state) * self.barrier(state),)

    def chain_levels(self, state: AugmentedState) -> tuple[float, ...]:
        return (self.multiplier(state),)

    def rows(self, state: AugmentedState) -> list[ConstraintRow]:
        p = self.params
        A = self.multiplier(state)
        b = self.barrier(state)
        b_dot = self._b_dot(state)
        top = ConstraintRow(
            self.layout.vector({"u1": b, "u2": b / p.M, "nu1": b}),
            -(A * b_dot + p.k1 * A * b),
            "HighestAvcbf",
            (A * b,),
        )
        chain = AuxiliaryChain(1, (float(state.chains[0][0]),), (p.l11,), "nu1", p.eps,
                               AuxFnKind.SUM_WITH_STATES)
        return [top, build_aux_chain_row(chain, self.layout, self._state_term(state)), *self._common_rows(state)]

    def cost(self, state: AugmentedState, targets: dict[str, float]) -> CostSpec:
        return self._base_cost().quadratic("nu1", self.params.W1, targets.get("nu1", self.params.a_1w))

    def level_rates(self, state: AugmentedState, w: np.ndarray) -> tuple[float]:
        (psi0,) = self.levels(state)
        return (self.rows(state)[0].slack(w) - self.params.k1 * psi0,)

    def extra_columns(self, state: AugmentedState) -> dict[str, float]:
        return {**super().extra_columns(state), "A1": self.multiplier(state)}


class UnicycleAvcbfR(_StateSumAvcbf):
    variant = "avcbf_r"


class UnicycleAvcbfM(_StateSumAvcbf):
    variant = "avcbf_m"
    mixed = True


UNICYCLE_PRESETS: dict[str, dict] = {
    "hocbf": {},
    "avcbf1": {},
    "avcbf2": {},
    "avcbf_r": {"a1_0": 50.0, "l11": 0.5, "k1": 3.0},
    "avcbf_m": {
        "x0": -4.0, "target": (3.0, 0.0, 0.2), "phi0": 0.01, "dt": 0.01, "T": 5.0,
        "a1_0": 0.1, "c3": 10.0, "W1": 1.0, "Q": 1e3, "k1": 0.1, "l11": 0.1,
    },
}

_UNICYCLE_CLASSES = {
    "hocbf": UnicycleHocbf,
    "avcbf1": UnicycleAvcbf1,
    "avcbf2": UnicycleAvcbf2,
    "avcbf_r": UnicycleAvcbfR,
    "avcbf_m": UnicycleAvcbfM,
}


def make_unicycle(variant: str, overrides: dict | None = None) -> Scenario:
    if variant not in UNICYCLE_PRESETS:
        raise KeyError(f"unknown unicycle variant {variant!r}; choose from {sorted(UNICYCLE_PRESETS)}")
    params = UnicycleParams(**{**UNICYCLE_PRESETS[variant], **(overrides or {})})
    return _UNICYCLE_CLASSES[variant](params)
