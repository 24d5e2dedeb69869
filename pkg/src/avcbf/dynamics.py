"""Control-affine dynamics and zero-order-hold stepping."""

from __future__ import annotations

from dataclasses import dataclass, replace
from math import factorial
from typing import Callable, Sequence

import numpy as np


class IntegrationError(FloatingPointError):
    """A state derivative came back non-finite."""


@dataclass(frozen=True)
class AffineDynamics:
    """x' = drift(x) + input_map(x) @ u."""

    dim_x: int
    dim_u: int
    drift: Callable[[np.ndarray], np.ndarray]
    input_map: Callable[[np.ndarray], np.ndarray]

    def rate(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return np.asarray(self.drift(x), dtype=float) + np.asarray(self.input_map(x), dtype=float) @ u


def rk4_step(
    dynamics: AffineDynamics,
    x: Sequence[float],
    u_held: Sequence[float],
    dt: float,
    substeps: int = 10,
    trace: list | None = None,
) -> np.ndarray:
    """Classical RK4 over ``dt`` in ``substeps`` equal pieces with ``u_held`` frozen.

    If ``trace`` is a list, the state after every substep is appended to it.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if substeps < 1:
        raise ValueError("substeps must be at least 1")
    x = np.asarray(x, dtype=float).copy()
    u = np.asarray(u_held, dtype=float)
    h = dt / substeps

    def rate(state: np.ndarray) -> np.ndarray:
        out = dynamics.rate(state, u)
        if not np.all(np.isfinite(out)):
            raise IntegrationError(f"non-finite state derivative {out} at state {state}, input {u}")
        return out

    for _ in range(substeps):
        k1 = rate(x)
        k2 = rate(x + 0.5 * h * k1)
        k3 = rate(x + 0.5 * h * k2)
        k4 = rate(x + h * k3)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if trace is not None:
            trace.append(x.copy())
    return x


@dataclass(frozen=True)
class AugmentedState:
    """Physical state, auxiliary integrator chains and time.

    ``chains[i]`` holds (a_i, a_i', ..., ) for the i-th auxiliary variable; the
    last entry's derivative is the auxiliary input.
    """

    x: np.ndarray
    chains: tuple[np.ndarray, ...] = ()
    t: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float).copy())
        object.__setattr__(self, "chains", tuple(np.asarray(c, dtype=float).copy() for c in self.chains))


def advance_chain(states: Sequence[float], nu: float, dt: float) -> np.ndarray:
    """Exact update of an integrator chain whose last derivative is held at ``nu``."""
    states = np.asarray(states, dtype=float)
    r = states.size
    out = np.empty(r)
    for j in range(r):
        total = 0.0
        for k in range(j, r):
            total += states[k] * dt ** (k - j) / factorial(k - j)
        total += nu * dt ** (r - j) / factorial(r - j)
        out[j] = total
    return out


def step_augmented(
    state: AugmentedState,
    u: Sequence[float],
    nus: Sequence[float],
    dt: float,
    dynamics: AffineDynamics,
    substeps: int = 10,
    trace: list | None = None,
) -> AugmentedState:
    """Advance the physical state by RK4 and every chain in closed form, inputs held."""
    nus = np.asarray(nus, dtype=float).reshape(-1)
    if nus.size != len(state.chains):
        raise ValueError(f"{len(state.chains)} chains but {nus.size} auxiliary inputs")
    x_next = rk4_step(dynamics, state.x, u, dt, substeps, trace)
    chains = tuple(advance_chain(c, nu, dt) for c, nu in zip(state.chains, nus))
    return replace(state, x=x_next, chains=chains, t=state.t + dt)
