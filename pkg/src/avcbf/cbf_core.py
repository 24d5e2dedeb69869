"""Barrier and Lyapunov constraint machinery.

Every constraint the controllers impose is a single affine inequality in the
per-step decision vector (controls, auxiliary inputs, slacks). Scenarios
derive the state-dependent numbers; this module turns them into rows and a
QP, and evaluates barrier chains for diagnostics and cross-checks.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from math import comb
from typing import Optional, Sequence

import numpy as np

from .numkit import QpProblem

DEFAULT_MARGIN = 1e-10


@dataclass(frozen=True)
class ClassKappaLinear:
    """Linear class-kappa function s -> gain * s."""

    gain: float

    def __post_init__(self) -> None:
        if not self.gain > 0:
            raise ValueError(f"class-kappa gain must be positive, got {self.gain}")

    def __call__(self, s: float) -> float:
        return self.gain * s


def eval_class_kappa(fn: ClassKappaLinear, s: float) -> float:
    return fn(s)


def _as_kappa(gains: Sequence[ClassKappaLinear | float]) -> list[ClassKappaLinear]:
    return [g if isinstance(g, ClassKappaLinear) else ClassKappaLinear(float(g)) for g in gains]


# --- jets: a signal together with its successive time derivatives ---------

def _jet_product(f: Sequence[float], g: Sequence[float]) -> list[float]:
    length = min(len(f), len(g))
    return [sum(comb(n, j) * f[j] * g[n - j] for j in range(n + 1)) for n in range(length)]


def avcbf_chain_values(
    b_and_derivatives: Sequence[float],
    aux_and_derivatives: Sequence[Sequence[float]],
    gains: Sequence[ClassKappaLinear | float],
) -> list[float]:
    """Barrier chain with positive multipliers on every level.

    psi_0 = A_1 * b and psi_i = A_{i+1} * (d/dt psi_{i-1} + k_i psi_{i-1}).
    ``b_and_derivatives`` is (b, b', ..., b^(m-1)) and ``aux_and_derivatives[i]``
    holds A_{i+1} and at least m-1-i of its derivatives.
    """
    b = list(map(float, b_and_derivatives))
    m = len(b)
    kappas = _as_kappa(gains)
    if m == 0:
        raise ValueError("need at least the barrier value")
    if len(kappas) < m - 1 or len(kappas) > m:
        raise ValueError(f"{m} barrier derivatives need {m - 1} gains, got {len(kappas)}")
    if len(aux_and_derivatives) < m:
        raise ValueError(f"{m} levels need {m} auxiliary jets, got {len(aux_and_derivatives)}")
    for i, aux in enumerate(aux_and_derivatives[:m]):
        if len(aux) < m - i:
            raise ValueError(f"auxiliary jet {i + 1} needs {m - i} entries, got {len(aux)}")
    level = _jet_product(aux_and_derivatives[0], b)
    values = [level[0]]
    for i in range(1, m):
        inner = [d + kappas[i - 1](s) for d, s in zip(level[1:], level[:-1])]
        level = _jet_product(aux_and_derivatives[i], inner)
        values.append(level[0])
    return values


def hocbf_chain_values(
    b_and_derivatives: Sequence[float], gains: Sequence[ClassKappaLinear | float]
) -> list[float]:
    """psi_0..psi_{m-1} of a plain high-order barrier chain with linear gains."""
    m = len(b_and_derivatives)
    ones = [[1.0] + [0.0] * (m - 1 - i) for i in range(m)]
    return avcbf_chain_values(b_and_derivatives, ones, gains)


# --- rows -------------------------------------------------------------------

@dataclass(frozen=True)
class DecisionLayout:
    """Names of the per-step decision variables, in QP order."""

    names: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(set(self.names)) != len(self.names):
            raise ValueError(f"duplicate decision names in {self.names}")

    @property
    def dim(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def vector(self, entries: dict[str, float] | None = None) -> np.ndarray:
        out = np.zeros(self.dim)
        for name, value in (entries or {}).items():
            out[self.index(name)] += value
        return out


@dataclass(frozen=True)
class ConstraintRow:
    """coeffs @ w >= rhs, tagged with the barrier level that produced it."""

    coeffs: np.ndarray
    rhs: float
    tag: str
    level_values: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        coeffs = np.asarray(self.coeffs, dtype=float).reshape(-1)
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "rhs", float(self.rhs))
        object.__setattr__(self, "level_values", tuple(float(v) for v in self.level_values))
        if not np.all(np.isfinite(coeffs)) or not np.isfinite(self.rhs):
            raise FloatingPointError(f"non-finite row {self.tag}: {coeffs} >= {self.rhs}")
        if not all(np.isfinite(self.level_values)):
            raise FloatingPointError(f"non-finite level values in row {self.tag}")

    def slack(self, w: np.ndarray) -> float:
        return float(self.coeffs @ w - self.rhs)


class AuxFnKind(str, enum.Enum):
    IDENTITY = "identity"
    EXP_OVER_SPEED = "exp_over_speed"
    SUM_WITH_STATES = "sum_with_states"


@dataclass(frozen=True)
class StateTerm:
    """A state-dependent addend S(x) of an auxiliary function, with dS/dt = drift + input_coeffs @ u."""

    value: float
    drift: float
    input_coeffs: dict[str, float]


@dataclass(frozen=True)
class AuxiliaryChain:
    """Integrator chain a_i, a_i', ... driven by the auxiliary input ``nu_name``.

    ``gains`` are the class-kappa functions of the positivity chain; an empty
    tuple means the auxiliary function is positive by construction and no row
    is imposed.
    """

    index: int
    states: tuple[float, ...]
    gains: tuple[ClassKappaLinear, ...]
    nu_name: str
    margin: float = DEFAULT_MARGIN
    kind: AuxFnKind = AuxFnKind.IDENTITY

    def __post_init__(self) -> None:
        object.__setattr__(self, "states", tuple(float(s) for s in self.states))
        object.__setattr__(self, "gains", tuple(_as_kappa(self.gains)))
        if not self.states:
            raise ValueError("an auxiliary chain needs at least one state")
        if self.gains and len(self.gains) != len(self.states):
            raise ValueError(
                f"chain {self.index} has {len(self.states)} states but {len(self.gains)} gains"
            )
        if not self.margin > 0:
            raise ValueError("chain margin must be positive")
        if self.kind is AuxFnKind.SUM_WITH_STATES and len(self.states) != 1:
            raise ValueError("state-sum auxiliary functions are only defined for one-state chains")


def _monic_coefficients(gains: Sequence[ClassKappaLinear]) -> np.ndarray:
    """Coefficients c_0..c_{r-1} of prod_j (s + l_j) = s^r + c_{r-1} s^{r-1} + ... + c_0."""
    poly = np.array([1.0])
    for g in gains:
        poly = np.convolve(poly, [1.0, g.gain])
    return poly[1:][::-1]


def build_aux_chain_row(
    chain: AuxiliaryChain, layout: DecisionLayout, state_term: Optional[StateTerm] = None
) -> Optional[ConstraintRow]:
    """Top-level positivity constraint of an auxiliary chain, or None when not imposed."""
    if not chain.gains:
        return None
    coeffs = layout.vector({chain.nu_name: 1.0})
    tag = f"AuxChain({chain.index})"
    if chain.kind is AuxFnKind.IDENTITY:
        c = _monic_coefficients(chain.gains)
        rhs = chain.margin - float(c @ np.asarray(chain.states))
        levels = [chain.states[0]]
        jet = list(chain.states)
        for g in chain.gains[:-1]:
            jet = [d + g(s) for d, s in zip(jet[1:], jet[:-1])]
            levels.append(jet[0])
        return ConstraintRow(coeffs, rhs, tag, tuple(levels))
    if chain.kind is AuxFnKind.SUM_WITH_STATES:
        if state_term is None:
            raise ValueError("state-sum auxiliary chains need the state term")
        total = chain.states[0] + state_term.value
        for name, value in state_term.input_coeffs.items():
            coeffs[layout.index(name)] += value
        rhs = chain.margin - state_term.drift - chain.gains[0](total)
        return ConstraintRow(coeffs, rhs, tag, (total,))
    raise ValueError(f"no positivity chain is defined for {chain.kind.value} auxiliary functions")


def build_clf_row(
    V: float,
    LfV: float,
    LgV: Sequence[float],
    c3: float,
    layout: DecisionLayout,
    input_names: Sequence[str],
    slack_name: str = "delta",
    tag: str = "Clf",
) -> ConstraintRow:
    """Relaxed Lyapunov decrease LfV + LgV u + c3 V <= slack, as -LgV u + slack >= LfV + c3 V."""
    if not c3 > 0:
        raise ValueError("c3 must be positive")
    LgV = np.asarray(LgV, dtype=float).reshape(-1)
    if LgV.size != len(input_names):
        raise ValueError("LgV length does not match the inputs")
    coeffs = layout.vector({slack_name: 1.0})
    for name, value in zip(input_names, LgV):
        coeffs[layout.index(name)] -= value
    return ConstraintRow(coeffs, LfV + c3 * V, tag, (V,))


def build_control_bound_rows(
    u_min: Sequence[float], u_max: Sequence[float], layout: DecisionLayout, input_names: Sequence[str]
) -> list[ConstraintRow]:
    u_min = np.asarray(u_min, dtype=float).reshape(-1)
    u_max = np.asarray(u_max, dtype=float).reshape(-1)
    if u_min.size != len(input_names) or u_max.size != len(input_names):
        raise ValueError("bound vectors do not match the inputs")
    if np.any(u_min > u_max):
        raise ValueError(f"crossed control bounds: {u_min} > {u_max}")
    rows = []
    for j, name in enumerate(input_names):
        rows.append(ConstraintRow(layout.vector({name: 1.0}), u_min[j], f"ControlBound({j},lo)"))
        rows.append(ConstraintRow(layout.vector({name: -1.0}), -u_max[j], f"ControlBound({j},hi)"))
    return rows


@dataclass
class CostSpec:
    """sum_j weight_j (w_j - target_j)^2 + linear_j w_j over the decision vector."""

    layout: DecisionLayout
    weights: np.ndarray = field(default=None)  # type: ignore[assignment]
    targets: np.ndarray = field(default=None)  # type: ignore[assignment]
    linear: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        n = self.layout.dim
        for name in ("weights", "targets", "linear"):
            value = getattr(self, name)
            setattr(self, name, np.zeros(n) if value is None else np.asarray(value, dtype=float).copy())

    def quadratic(self, name: str, weight: float, target: float = 0.0) -> "CostSpec":
        j = self.layout.index(name)
        self.weights[j] = weight
        self.targets[j] = target
        return self

    def linear_term(self, name: str, weight: float) -> "CostSpec":
        self.linear[self.layout.index(name)] = weight
        return self


def assemble_qp(rows: Sequence[ConstraintRow], cost: CostSpec) -> QpProblem:
    n = cost.layout.dim
    for row in rows:
        if row.coeffs.size != n:
            raise ValueError(f"row {row.tag} has {row.coeffs.size} coefficients, layout has {n}")
    if np.any(cost.weights < 0):
        raise ValueError("cost weights must be nonnegative")
    matrix = np.array([row.coeffs for row in rows]).reshape(len(rows), n)
    return QpProblem(
        hessian=np.diag(2.0 * cost.weights),
        linear_cost=cost.linear - 2.0 * cost.weights * cost.targets,
        ineq_matrix=matrix,
        ineq_rhs=np.array([row.rhs for row in rows]),
        var_names=cost.layout.names,
        constant=float(np.sum(cost.weights * cost.targets**2)),
    )


@dataclass(frozen=True)
class SafetyFeasibilityReport:
    psi_levels: tuple[float, ...]
    criterion_value: float
    criterion_ok: bool


def safety_feasibility_criterion(psi_levels: Sequence[float], threshold: float) -> SafetyFeasibilityReport:
    """The last pre-input level must stay strictly above ``threshold``."""
    if len(psi_levels) == 0:
        raise ValueError("no barrier levels supplied")
    value = float(psi_levels[-1])
    return SafetyFeasibilityReport(tuple(map(float, psi_levels)), value, bool(value > threshold))
