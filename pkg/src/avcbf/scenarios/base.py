"""Interface shared by every closed-loop scenario."""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..cbf_core import ConstraintRow, CostSpec, DecisionLayout
from ..dynamics import AffineDynamics, AugmentedState


class InitialSetError(ValueError):
    """The initial augmented state lies outside one of the barrier sets."""


class StateDomainError(FloatingPointError):
    """The state left the domain on which the model is defined (e.g. v <= 0 for ACC)."""


@dataclass(frozen=True)
class CdProfile:
    """Deceleration coefficient varying linearly from ``start`` at t=0 to ``end`` at t=horizon."""

    start: float
    end: float
    horizon: float

    def __call__(self, t: float) -> float:
        if self.horizon <= 0:
            return self.start
        frac = min(max(t / self.horizon, 0.0), 1.0)
        return self.start + (self.end - self.start) * frac


class Scenario(ABC):
    """A plant, its barrier/Lyapunov rows and its cost, evaluated one step at a time.

    Subclasses set the class attributes below and implement the abstract
    methods. ``levels`` returns psi_0..psi_{m-1}, the levels that do not yet
    involve the decision variables; the last one is the safety-feasibility
    criterion.
    """

    scenario_id: str = ""
    variant: str = ""
    state_names: tuple[str, ...] = ()
    chain_names: tuple[tuple[str, ...], ...] = ()
    input_names: tuple[str, ...] = ()
    chain_inputs: tuple[str, ...] = ()
    tunable: tuple[str, ...] = ()
    layout: DecisionLayout
    dynamics: AffineDynamics
    dt: float
    horizon: float
    substeps: int = 10

    @abstractmethod
    def initial_state(self) -> AugmentedState: ...

    @abstractmethod
    def barrier(self, state: AugmentedState) -> float: ...

    @abstractmethod
    def levels(self, state: AugmentedState) -> tuple[float, ...]: ...

    @abstractmethod
    def rows(self, state: AugmentedState) -> list[ConstraintRow]: ...

    @abstractmethod
    def cost(self, state: AugmentedState, targets: dict[str, float]) -> CostSpec: ...

    @abstractmethod
    def level_rates(self, state: AugmentedState, w: np.ndarray) -> tuple[float, ...]:
        """Analytic time derivatives of ``levels`` under the decision vector ``w``."""

    def default_targets(self) -> dict[str, float]:
        """Preferred values a_{i,w} of the auxiliary inputs in the cost."""
        return {}

    def chain_levels(self, state: AugmentedState) -> tuple[float, ...]:
        """Positivity levels of the auxiliary chains (phi_{i,0}, ...), for diagnostics."""
        return ()

    def extra_columns(self, state: AugmentedState) -> dict[str, float]:
        return {}

    def stop_reason(self, state: AugmentedState, trace: Sequence[np.ndarray]) -> Optional[str]:
        return None

    def split(self, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Controls and chain inputs picked out of a decision vector."""
        u = np.array([w[self.layout.index(n)] for n in self.input_names])
        nus = np.array([w[self.layout.index(n)] for n in self.chain_inputs])
        return u, nus

    def augmented_rate(self, state: AugmentedState, w: np.ndarray) -> AugmentedState:
        """Time derivative of (x, chains) with inputs held at ``w``, packed as a state."""
        u, nus = self.split(w)
        x_rate = self.dynamics.rate(state.x, u)
        chain_rates = tuple(np.append(c[1:], nu) for c, nu in zip(state.chains, nus))
        return AugmentedState(x_rate, chain_rates, 1.0)

    def check_initial(self, state: AugmentedState) -> None:
        for i, value in enumerate(self.levels(state)):
            if not value >= 0:
                raise InitialSetError(f"{self.name}: initial psi_{i} = {value:.6g} is negative")
        for i, value in enumerate(self.chain_levels(state)):
            if not value > 0:
                raise InitialSetError(f"{self.name}: initial auxiliary level {i} = {value:.6g} is not positive")

    @property
    def name(self) -> str:
        return f"{self.scenario_id}/{self.variant}"

    @property
    def num_levels(self) -> int:
        return len(self.levels(self.initial_state()))


def shifted(state: AugmentedState, rate: AugmentedState, h: float) -> AugmentedState:
    """state + h * rate, componentwise over x and chains."""
    return AugmentedState(
        state.x + h * rate.x,
        tuple(c + h * r for c, r in zip(state.chains, rate.chains)),
        state.t + h,
    )
