"""Adaptive cruise control: keep a safe gap to a lead vehicle at constant speed.

State is (gap z, ego speed v) with z' = v_p - v and v' = (u - F_r(v)) / M,
safety is b = z - l_p >= 0, and a speed CLF pulls v toward v_d. The ego
vehicle can only brake so hard (u >= -c_d(t) M g), which is what makes the
barrier QP lose feasibility when braking starts too late.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..cbf_core import (
    AuxFnKind,
    AuxiliaryChain,
    ConstraintRow,
    CostSpec,
    DecisionLayout,
    build_aux_chain_row,
    build_clf_row,
    build_control_bound_rows,
)
from ..dynamics import AffineDynamics, AugmentedState
from .base import CdProfile, Scenario, StateDomainError


@dataclass(frozen=True)
class AccParams:
    v_p: float = 13.89
    v_d: float = 24.0
    M: float = 1650.0
    g: float = 9.81
    z0: float = 100.0
    l_p: float = 10.0
    f0: float = 0.1
    f1: float = 5.0
    f2: float = 0.25
    c_a: float = 0.4
    c_d: tuple[float, float] = (0.4, 0.4)
    c3: float = 2.0
    Q: float = 1000.0
    W1: float = 1000.0
    a_1w: float = 1.0
    k1: float = 0.1
    k2: float = 0.1
    l1: float = 0.1
    l2: float = 0.1
    eps: float = 1e-10
    dt: float = 0.1
    T: float = 50.0
    v0: float = 6.0
    a1_0: float = 1.0
    pi12_0: float = 1.0
    # Below-lead-speed weights for the reduced-degree controller (None: use W1 and Q).
    W1_slow: Optional[float] = None
    Q_slow: Optional[float] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "c_d", tuple(float(c) for c in self.c_d))
        if len(self.c_d) != 2:
            raise ValueError("c_d is a (start, end) pair")
        checks = {
            "M": self.M > 0, "l_p": self.l_p > 0, "v_p": self.v_p > 0, "c_a": self.c_a > 0,
            "c_d": min(self.c_d) > 0, "dt": self.dt > 0, "T": self.T >= 0, "v0": self.v0 > 0,
            "c3": self.c3 > 0, "eps": self.eps > 0,
        }
        bad = [name for name, ok in checks.items() if not ok]
        if bad:
            raise ValueError(f"invalid ACC parameters: {', '.join(bad)}")


@dataclass(frozen=True)
class PacbfParams:
    p1_0: float = 0.103
    p2_0: float = 1.0
    p1_star: float = 0.103
    p1_max: float = 3.0
    rho: float = 10.0
    W1: float = 2e12
    W2: float = 2e12
    Q: float = 1.0
    Q_p: float = 1.0
    c3: float = 10.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.p1_0 <= self.p1_max:
            raise ValueError(f"p1_0 = {self.p1_0} outside [0, {self.p1_max}]")


def acc_resistance(v: float, params: AccParams) -> float:
    """Rolling and aerodynamic resistance f0 + f1 v + f2 v^2 (v > 0)."""
    if not v > 0:
        raise StateDomainError(f"ACC resistance needs v > 0, got v = {v}")
    return params.f0 + params.f1 * v + params.f2 * v * v


class _AccBase(Scenario):
    scenario_id = "acc"
    state_names = ("z", "v")
    input_names = ("u",)

    def __init__(self, params: AccParams):
        self.params = params
        self.dt = params.dt
        self.horizon = params.T
        self.c_d = CdProfile(params.c_d[0], params.c_d[1], params.T)
        M = params.M

        def drift(x: np.ndarray) -> np.ndarray:
            v = x[1]
            return np.array([params.v_p - v, -(params.f0 + params.f1 * v + params.f2 * v * v) / M])

        input_column = np.array([[0.0], [1.0 / M]])
        self.dynamics = AffineDynamics(2, 1, drift, lambda x: input_column)

    # shared pieces -------------------------------------------------------
    def _speed(self, state: AugmentedState) -> float:
        v = float(state.x[1])
        if not v > 0:
            raise StateDomainError(f"ego speed must stay positive, got v = {v} at t = {state.t:.4g}")
        return v

    def barrier(self, state: AugmentedState) -> float:
        return float(state.x[0] - self.params.l_p)

    def initial_state(self) -> AugmentedState:
        p = self.params
        return AugmentedState(np.array([p.z0, p.v0]), self._initial_chains(), 0.0)

    def _initial_chains(self) -> tuple[np.ndarray, ...]:
        return ()

    def _common_rows(self, state: AugmentedState, c3: float) -> list[ConstraintRow]:
        p = self.params
        v = self._speed(state)
        resistance = acc_resistance(v, p)
        error = v - p.v_d
        clf = build_clf_row(
            V=error**2,
            LfV=2.0 * error * (-resistance / p.M),
            LgV=[2.0 * error / p.M],
            c3=c3,
            layout=self.layout,
            input_names=self.input_names,
        )
        bounds = build_control_bound_rows(
            [-self.c_d(state.t) * p.M * p.g], [p.c_a * p.M * p.g], self.layout, self.input_names
        )
        return [clf, *bounds]

    def _base_cost(self, state: AugmentedState, Q: float) -> CostSpec:
        p = self.params
        resistance = acc_resistance(self._speed(state), p)
        cost = CostSpec(self.layout)
        cost.quadratic("u", 1.0 / p.M**2, resistance)
        cost.quadratic("delta", Q)
        return cost

    def extra_columns(self, state: AugmentedState) -> dict[str, float]:
        return {"b": self.barrier(state)}


class AccHocbf(_AccBase):
    """Plain second-order barrier chain with constant linear gains."""

    variant = "hocbf"

    def __init__(self, params: AccParams):
        super().__init__(params)
        self.layout = DecisionLayout(("u", "delta"))

    def levels(self, state: AugmentedState) -> tuple[float, float]:
        b = self.barrier(state)
        return b, (self.params.v_p - state.x[1]) + self.params.k1 * b

    def rows(self, state: AugmentedState) -> list[ConstraintRow]:
        p = self.params
        v = self._speed(state)
        psi0, psi1 = self.levels(state)
        drift = acc_resistance(v, p) / p.M + p.k1 * (p.v_p - v) + p.k2 * psi1
        top = ConstraintRow(self.layout.vector({"u": -1.0 / p.M}), -drift, "HighestAvcbf", (psi0, psi1))
        return [top, *self._common_rows(state, p.c3)]

    def cost(self, state: AugmentedState, targets: dict[str, float]) -> CostSpec:
        return self._base_cost(state, self.params.Q)

    def level_rates(self, state: AugmentedState, w: np.ndarray) -> tuple[float, float]:
        psi0, psi1 = self.levels(state)
        top = self.rows(state)[0]
        return psi1 - self.params.k1 * psi0, top.slack(w) - self.params.k2 * psi1


class AccAvcbf(_AccBase):
    """Second-order barrier scaled by one auxiliary variable a_1 with a two-state chain."""

    variant = "avcbf"
    chain_names = (("a1", "a1_dot"),)
    chain_inputs = ("nu1",)
    tunable = ("nu1",)

    def __init__(self, params: AccParams):
        super().__init__(params)
        self.layout = DecisionLayout(("u", "nu1", "delta"))

    def _initial_chains(self) -> tuple[np.ndarray, ...]:
        return (np.array([self.params.a1_0, self.params.pi12_0]),)

    def default_targets(self) -> dict[str, float]:
        return {"nu1": self.params.a_1w}

    def levels(self, state: AugmentedState) -> tuple[float, float]:
        p = self.params
        a, a_dot = state.chains[0]
        b = self.barrier(state)
        b_dot = p.v_p - state.x[1]
        return a * b, a_dot * b + a * b_dot + p.k1 * a * b

    def chain_levels(self, state: AugmentedState) -> tuple[float, ...]:
        a, a_dot = state.chains[0]
        return a, a_dot + self.params.l1 * a

    def rows(self, state: AugmentedState) -> list[ConstraintRow]:
        p = self.params
        v = self._speed(state)
        a, a_dot = state.chains[0]
        b = self.barrier(state)
        b_dot = p.v_p - v
        psi0, psi1 = self.levels(state)
        # psi_2 = nu1 b + 2 a' b' + a b'' + k1 (a' b + a b') + k2 psi_1, with b'' = -(u - F_r)/M.
        drift = (
            2.0 * a_dot * b_dot
            + a * acc_resistance(v, p) / p.M
            + p.k1 * (a_dot * b + a * b_dot)
            + p.k2 * psi1
        )
        top = ConstraintRow(
            self.layout.vector({"u": -a / p.M, "nu1": b}), -drift, "HighestAvcbf", (psi0, psi1)
        )
        chain = AuxiliaryChain(1, (a, a_dot), (p.l1, p.l2), "nu1", p.eps, AuxFnKind.IDENTITY)
        return [top, build_aux_chain_row(chain, self.layout), *self._common_rows(state, p.c3)]

    def cost(self, state: AugmentedState, targets: dict[str, float]) -> CostSpec:
        cost = self._base_cost(state, self.params.Q)
        return cost.quadratic("nu1", self.params.W1, targets.get("nu1", self.params.a_1w))

    def level_rates(self, state: AugmentedState, w: np.ndarray) -> tuple[float, float]:
        psi0, psi1 = self.levels(state)
        top = self.rows(state)[0]
        return psi1 - self.params.k1 * psi0, top.slack(w) - self.params.k2 * psi1

    def extra_columns(self, state: AugmentedState) -> dict[str, float]:
        a, a_dot = state.chains[0]
        return {"b": self.barrier(state), "a1_dot_over_a1": a_dot / a}


class AccPacbf(_AccBase):
    """Penalty-parameter baseline: psi_1 = b' + p1 b^2, psi_2 = psi_1' + p2 psi_1.

    p1 is a state driven by nu1 and kept in [0, p1_max]; p2 is the decision
    variable nu2 itself.
    """

    variant = "pacbf"
    chain_names = (("p1",),)
    chain_inputs = ("nu1",)

    def __init__(self, params: AccParams, pacbf: PacbfParams):
        super().__init__(params)
        self.pacbf = pacbf
        self.layout = DecisionLayout(("u", "nu1", "nu2", "delta", "delta_p"))

    def _initial_chains(self) -> tuple[np.ndarray, ...]:
        return (np.array([self.pacbf.p1_0]),)

    def levels(self, state: AugmentedState) -> tuple[float, float]:
        b = self.barrier(state)
        p1 = state.chains[0][0]
        return b, (self.params.v_p - state.x[1]) + p1 * b * b

    def chain_levels(self, state: AugmentedState) -> tuple[float, ...]:
        # Non-strict box: p1 may sit exactly on 0 or p1_max.
        return ()

    def rows(self, state: AugmentedState) -> list[ConstraintRow]:
        p, q = self.params, self.pacbf
        v = self._speed(state)
        p1 = float(state.chains[0][0])
        b = self.barrier(state)
        b_dot = p.v_p - v
        psi0, psi1 = self.levels(state)
        # psi_2 = -(u - F_r)/M + nu1 b^2 + 2 p1 b b' + nu2 psi_1.
        top = ConstraintRow(
            self.layout.vector({"u": -1.0 / p.M, "nu1": b * b, "nu2": psi1}),
            -(acc_resistance(v, p) / p.M + 2.0 * p1 * b * b_dot),
            "HighestAvcbf",
            (psi0, psi1),
        )
        upper = ConstraintRow(self.layout.vector({"nu1": -1.0}), -(q.p1_max - p1), "PacbfAux", (q.p1_max - p1,))
        lower = ConstraintRow(self.layout.vector({"nu1": 1.0}), -p1, "PacbfAux", (p1,))
        gap = p1 - q.p1_star
        penalty_clf = build_clf_row(
            V=gap * gap, LfV=0.0, LgV=[2.0 * gap], c3=q.rho, layout=self.layout,
            input_names=("nu1",), slack_name="delta_p", tag="PacbfClf",
        )
        return [top, upper, lower, penalty_clf, *self._common_rows(state, q.c3)]

    def cost(self, state: AugmentedState, targets: dict[str, float]) -> CostSpec:
        q = self.pacbf
        cost = self._base_cost(state, q.Q)
        cost.linear_term("nu1", q.W1)
        cost.quadratic("nu2", q.W2, 1.0)
        cost.quadratic("delta_p", q.Q_p)
        return cost

    def level_rates(self, state: AugmentedState, w: np.ndarray) -> tuple[float, float]:
        psi0, psi1 = self.levels(state)
        p1 = state.chains[0][0]
        top = self.rows(state)[0]
        nu2 = w[self.layout.index("nu2")]
        return psi1 - p1 * psi0 * psi0, top.slack(w) - nu2 * psi1

class AccReduced(_AccBase):
    """First-order barrier psi_0 = exp(-a1/v) b, so braking enters through the multiplier."""

    variant = "reduced"
    chain_names = (("a1",),)
    chain_inputs = ("nu1",)
    tunable = ("nu1",)

    def __init__(self, params: AccParams):
        super().__init__(params)
        self.layout = DecisionLayout(("u", "nu1", "delta"))

    def _initial_chains(self) -> tuple[np.ndarray, ...]:
        return (np.array([self.params.a1_0]),)

    def default_targets(self) -> dict[str, float]:
        return {"nu1": self.params.a_1w}

    def multiplier(self, state: AugmentedState) -> float:
        return math.exp(-state.chains[0][0] / self._speed(state))

    def levels(self, state: AugmentedState) -> tuple[float]:
        return (self.multiplier(state) * self.barrier(state),)

    def rows(self, state: AugmentedState) -> list[ConstraintRow]:
        p = self.params
        v = self._speed(state)
        a = float(state.chains[0][0])
        scale = self.multiplier(state)
        b = self.barrier(state)
        # d/dt exp(-a/v) = exp(-a/v) (-nu1/v + a (u - F_r) / (M v^2)).
        u_coeff = scale * b * a / (p.M * v * v)
        nu_coeff = -scale * b / v
        drift = scale * (-b * a * acc_resistance(v, p) / (p.M * v * v) + (p.v_p - v) + p.k1 * b)
        top = ConstraintRow(
            self.layout.vector({"u": u_coeff, "nu1": nu_coeff}), -drift, "HighestAvcbf", (scale * b,)
        )
        return [top, *self._common_rows(state, p.c3)]

    def cost(self, state: AugmentedState, targets: dict[str, float]) -> CostSpec:
        p = self.params
        slow = state.x[1] <= p.v_p
        W1 = p.W1_slow if (slow and p.W1_slow is not None) else p.W1
        Q = p.Q_slow if (slow and p.Q_slow is not None) else p.Q
        cost = self._base_cost(state, Q)
        return cost.quadratic("nu1", W1, targets.get("nu1", p.a_1w))

    def level_rates(self, state: AugmentedState, w: np.ndarray) -> tuple[float]:
        (psi0,) = self.levels(state)
        return (self.rows(state)[0].slack(w) - self.params.k1 * psi0,)

    def extra_columns(self, state: AugmentedState) -> dict[str, float]:
        return {"b": self.barrier(state), "A1": self.multiplier(state)}


ACC_PRESETS: dict[str, dict] = {
    "hocbf": {},
    "avcbf": {},
    "pacbf": {"v0": 20.0, "c_d": (0.23, 0.23), "T": 30.0},
    "reduced": {
        "v0": 20.0, "a1_0": -30.0, "c3": 120.0, "W1": 1e5, "Q": 2e4,
        "W1_slow": 1.0 / 30.0, "Q_slow": 1.0 / 150.0, "a_1w": 0.0, "T": 30.0,
    },
}


def make_acc(variant: str, overrides: dict | None = None, pacbf_overrides: dict | None = None) -> Scenario:
    if variant not in ACC_PRESETS:
        raise KeyError(f"unknown ACC variant {variant!r}; choose from {sorted(ACC_PRESETS)}")
    values = {**ACC_PRESETS[variant], **(overrides or {})}
    params = AccParams(**values)
    if variant == "hocbf":
        return AccHocbf(params)
    if variant == "avcbf":
        return AccAvcbf(params)
    if variant == "pacbf":
        return AccPacbf(params, PacbfParams(**(pacbf_overrides or {})))
    return AccReduced(params)
