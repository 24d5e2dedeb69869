"""Independent reference answers used by the test suite.

Nothing here calls into the solver under test. The QP oracle searches a grid
that is refined around the best feasible point, then polishes that point by
solving the equality-constrained KKT system for subsets of the rows that are
nearly tight there. A polished point is accepted only when it is feasible and
its multipliers are nonnegative, which certifies global optimality for a
convex QP.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from avcbf.numkit import QpProblem


@dataclass
class OracleAnswer:
    w: np.ndarray
    objective: float
    multipliers: np.ndarray
    grid_point: np.ndarray


def random_tiny_qp(rng: np.random.Generator) -> QpProblem:
    """Strictly convex QP with 1-4 variables and 1-6 rows, feasible by construction."""
    n = int(rng.integers(1, 5))
    m = int(rng.integers(1, 7))
    basis = rng.normal(size=(n, n))
    hessian = basis @ basis.T + rng.uniform(0.1, 1.0) * np.eye(n)
    linear = rng.normal(scale=2.0, size=n)
    rows = rng.normal(size=(m, n))
    if m >= 2 and rng.random() < 0.2:
        rows[1] = rows[0] * rng.uniform(0.5, 2.0)  # parallel rows
    anchor = rng.uniform(-1.0, 1.0, size=n)
    rhs = rows @ anchor - rng.uniform(0.0, 1.0, size=m)
    return QpProblem(hessian, linear, rows, rhs)


def _kkt_point(problem: QpProblem, subset: tuple[int, ...]):
    H, c = problem.hessian, problem.linear_cost
    G, h = problem.ineq_matrix[list(subset)], problem.ineq_rhs[list(subset)]
    n, k = problem.num_vars, len(subset)
    system = np.block([[H, -G.T], [G, np.zeros((k, k))]])
    if np.linalg.matrix_rank(system) < n + k:
        return None
    solution = np.linalg.solve(system, np.concatenate([-c, h]))
    return solution[:n], solution[n:]


def _certified(problem: QpProblem, w: np.ndarray, lam: np.ndarray, tol: float = 1e-9) -> bool:
    slack = problem.ineq_matrix @ w - problem.ineq_rhs
    return bool(np.all(slack >= -tol) and np.all(lam >= -tol))


def _polish(problem: QpProblem, candidates: list[int]):
    n = problem.num_vars
    best = None
    for size in range(0, min(n, len(candidates)) + 1):
        for subset in itertools.combinations(candidates, size):
            point = _kkt_point(problem, subset)
            if point is None:
                continue
            w, lam = point
            if not _certified(problem, w, lam):
                continue
            value = problem.objective(w)
            if best is None or value < best[2]:
                full = np.zeros(problem.num_rows)
                full[list(subset)] = lam
                best = (w, full, value)
    return best


def grid_refinement_oracle(problem: QpProblem, passes: int = 4, points: int = 9,
                           radius: float | None = None) -> OracleAnswer:
    n = problem.num_vars
    G, h = problem.ineq_matrix, problem.ineq_rhs
    if radius is None:
        free = np.linalg.solve(problem.hessian, -problem.linear_cost)
        radius = max(4.0, 2.0 * float(np.max(np.abs(free))))
    center = np.zeros(n)
    half = radius
    best_point = None
    for _ in range(passes):
        axes = [np.linspace(c - half, c + half, points) for c in center]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
        feasible = np.all(grid @ G.T >= h - 1e-12, axis=1)
        if not feasible.any():
            break
        candidates = grid[feasible]
        values = 0.5 * np.einsum("ij,jk,ik->i", candidates, problem.hessian, candidates) + candidates @ problem.linear_cost
        best_point = candidates[int(np.argmin(values))]
        spacing = 2.0 * half / (points - 1)
        center, half = best_point, 2.0 * spacing
    rows = list(range(problem.num_rows))
    if best_point is not None:
        scale = np.maximum(1.0, np.linalg.norm(G, axis=1))
        tight = (G @ best_point - h) / scale <= 4.0 * half * np.sqrt(n)
        rows = [i for i in rows if tight[i]]
    polished = _polish(problem, rows)
    if polished is None:
        polished = _polish(problem, list(range(problem.num_rows)))
    if polished is None:
        raise AssertionError("oracle found no certified KKT point")
    w, lam, value = polished
    return OracleAnswer(w, value, lam, best_point if best_point is not None else w)


# --- scenario helpers ------------------------------------------------------------

def fd_level_rates(scenario, state, w: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Fourth-order central difference of every level along the held-input flow."""
    from avcbf.scenarios.base import shifted

    rate = scenario.augmented_rate(state, w)

    def levels(h: float) -> np.ndarray:
        return np.array(scenario.levels(shifted(state, rate, h)))

    return (-levels(2 * step) + 8 * levels(step) - 8 * levels(-step) + levels(-2 * step)) / (12 * step)


def relative_error(numeric: np.ndarray, analytic: np.ndarray) -> float:
    numeric, analytic = np.asarray(numeric), np.asarray(analytic)
    return float(np.max(np.abs(numeric - analytic) / np.maximum(1.0, np.abs(analytic))))


RANDOM_START = {
    ("acc", "hocbf"): lambda rng: {"v0": rng.uniform(4, 12), "z0": rng.uniform(60, 120)},
    ("acc", "avcbf"): lambda rng: {"v0": rng.uniform(4, 12), "z0": rng.uniform(60, 120),
                                   "a1_0": rng.uniform(0.5, 2), "pi12_0": rng.uniform(0, 1)},
    ("acc", "pacbf"): lambda rng: {"v0": rng.uniform(10, 20), "z0": rng.uniform(80, 120)},
    ("acc", "reduced"): lambda rng: {"v0": rng.uniform(15, 22), "z0": rng.uniform(80, 120)},
    ("unicycle", "hocbf"): lambda rng: {"x0": rng.uniform(-4, -3), "y0": rng.uniform(-0.5, 0.5)},
    ("unicycle", "avcbf1"): lambda rng: {"x0": rng.uniform(-4, -3), "y0": rng.uniform(-0.5, 0.5)},
    ("unicycle", "avcbf2"): lambda rng: {"x0": rng.uniform(-4, -3), "y0": rng.uniform(-0.5, 0.5)},
    ("unicycle", "avcbf_r"): lambda rng: {"x0": rng.uniform(-4, -3), "y0": rng.uniform(-0.5, 0.5)},
    ("unicycle", "avcbf_m"): lambda rng: {"x0": rng.uniform(-4.5, -3.5), "y0": rng.uniform(-0.5, 0.5)},
}


def derivative_errors(scenario_id: str, variant: str, rng: np.random.Generator,
                      trajectories: int = 10, steps: int = 10) -> list[float]:
    """Worst relative FD error per short closed-loop trajectory, probing random held decisions."""
    from avcbf.engine import constant_targets, rollout
    from avcbf.scenarios import make_scenario

    worst = []
    for _ in range(trajectories):
        scenario = make_scenario(scenario_id, variant, RANDOM_START[(scenario_id, variant)](rng))
        run = rollout(scenario, scenario.initial_state(), 0, steps, constant_targets(scenario),
                      stop_at_target=False)
        errors = []
        for record in run.records:
            base = record.solution.w_star if record.solution is not None and record.solution.ok \
                else np.zeros(scenario.layout.dim)
            probe = base + rng.normal(scale=0.1, size=base.size) * np.maximum(1.0, np.abs(base))
            analytic = np.array(scenario.level_rates(record.state, probe))
            errors.append(relative_error(fd_level_rates(scenario, record.state, probe), analytic))
        worst.append(max(errors))
    return worst


DEGENERATE_PAIRS = [("acc", "avcbf"), ("unicycle", "avcbf1"), ("unicycle", "avcbf2")]


def random_plant_state(scenario_id: str, rng: np.random.Generator) -> np.ndarray:
    if scenario_id == "acc":
        return np.array([rng.uniform(10.5, 200.0), rng.uniform(0.5, 30.0)])
    while True:
        x, y = rng.uniform(-5.0, 5.0, size=2)
        if x * x + y * y > 1.0:
            return np.array([x, y, rng.uniform(-np.pi, np.pi), rng.uniform(0.1, 5.0)])


def unit_chains(scenario) -> tuple[np.ndarray, ...]:
    """a = 1 with every derivative zero, for each auxiliary chain."""
    return tuple(np.array([1.0] + [0.0] * (len(names) - 1)) for names in scenario.chain_names)


def degeneration_gap(auxiliary, plain, state_x: np.ndarray, t: float) -> float:
    """Largest difference between the plain rows and the auxiliary rows with the auxiliary inputs fixed at 0.

    Auxiliary positivity rows have no plain counterpart and are skipped;
    every other row is matched in order and compared on the plain layout.
    """
    from avcbf.dynamics import AugmentedState

    aux_state = AugmentedState(state_x, unit_chains(auxiliary), t)
    plain_state = AugmentedState(state_x, (), t)
    aux_rows = [r for r in auxiliary.rows(aux_state) if not r.tag.startswith("AuxChain")]
    plain_rows = plain.rows(plain_state)
    if len(aux_rows) != len(plain_rows):
        return np.inf
    columns = [auxiliary.layout.index(name) for name in plain.layout.names]
    gap = 0.0
    for a, p in zip(aux_rows, plain_rows):
        gap = max(gap, float(np.max(np.abs(a.coeffs[columns] - p.coeffs))), abs(a.rhs - p.rhs))
        gap = max(gap, float(np.max(np.abs(np.subtract(a.level_values, p.level_values)), initial=0.0)))
    return gap
