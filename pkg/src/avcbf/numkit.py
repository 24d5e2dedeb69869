"""Dense linear algebra and a small convex QP solver.

Problems take the form

    minimize   0.5 * w' H w + c' w + constant
    subject to G w >= h   (row-wise)

and are tiny (a handful of variables, at most a few dozen rows), so everything
here is dense and favours exactness over speed.

The solver works in two phases on an internally rescaled copy of the problem:

1. Feasibility. The origin (or the warm start) is projected onto the polyhedron
   with a dual active-set method that adds the most violated row first. If no
   feasible point exists the same method yields a Farkas certificate, and the
   exact phase-1 value (smallest achievable worst-row violation) is computed as
   an LP to decide whether the violation is real or round-off. When the
   projection loses accuracy (nearly antiparallel rows), the LP point seeds a
   second projection and the LP dual serves as the certificate.
2. Optimality. A primal active-set method starts from the feasible point and
   keeps every iterate feasible. A Hessian that is singular in some coordinate
   (linear-only cost terms) is handled by the 1e-10 regularization, because the
   ratio test stops the huge Newton steps this produces at the first blocking row.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
from scipy.optimize import linprog, nnls

REGULARIZATION = 1e-10
INFEASIBILITY_THRESHOLD = 1e-7
KKT_TOLERANCE = 1e-8
DEFAULT_MAX_ITERATIONS = 200
CONDITION_LIMIT = 1e12


class SingularMatrixError(np.linalg.LinAlgError):
    """Raised when a linear system is singular or too ill-conditioned to trust."""


class QpStatus(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    MAX_ITERATIONS = "MaxIterations"


@dataclass(frozen=True)
class QpProblem:
    """Convex QP data. Rows encode ``ineq_matrix @ w >= ineq_rhs``."""

    hessian: np.ndarray
    linear_cost: np.ndarray
    ineq_matrix: np.ndarray
    ineq_rhs: np.ndarray
    var_names: tuple[str, ...] = ()
    constant: float = 0.0

    def __post_init__(self) -> None:
        hessian = np.atleast_2d(np.asarray(self.hessian, dtype=float))
        linear = np.asarray(self.linear_cost, dtype=float).reshape(-1)
        n = linear.size
        if hessian.shape != (n, n):
            raise ValueError(f"hessian shape {hessian.shape} does not match {n} variables")
        matrix = np.asarray(self.ineq_matrix, dtype=float)
        if matrix.size == 0:
            matrix = np.zeros((0, n))
        matrix = matrix.reshape(-1, n)
        rhs = np.asarray(self.ineq_rhs, dtype=float).reshape(-1)
        if matrix.shape[0] != rhs.size:
            raise ValueError(f"{matrix.shape[0]} rows but {rhs.size} right-hand sides")
        scale = max(1.0, float(np.max(np.abs(hessian)))) if n else 1.0
        if np.max(np.abs(hessian - hessian.T), initial=0.0) > 1e-12 * scale:
            raise ValueError("hessian is not symmetric")
        if n and np.linalg.eigvalsh(0.5 * (hessian + hessian.T))[0] < -1e-10 * scale:
            raise ValueError("hessian is not positive semidefinite")
        names = tuple(self.var_names) if self.var_names else tuple(f"w{j}" for j in range(n))
        if len(names) != n:
            raise ValueError("var_names length does not match the number of variables")
        object.__setattr__(self, "hessian", 0.5 * (hessian + hessian.T))
        object.__setattr__(self, "linear_cost", linear)
        object.__setattr__(self, "ineq_matrix", matrix)
        object.__setattr__(self, "ineq_rhs", rhs)
        object.__setattr__(self, "var_names", names)

    @property
    def num_vars(self) -> int:
        return self.linear_cost.size

    @property
    def num_rows(self) -> int:
        return self.ineq_rhs.size

    def objective(self, w: np.ndarray) -> float:
        w = np.asarray(w, dtype=float)
        return float(0.5 * w @ self.hessian @ w + self.linear_cost @ w + self.constant)


@dataclass
class QpSolution:
    status: QpStatus
    w_star: Optional[np.ndarray]
    objective: float
    kkt_residual: float
    active_set: tuple[int, ...] = ()
    multipliers: Optional[np.ndarray] = None
    certificate: Optional[np.ndarray] = None
    infeasibility: float = 0.0  # phase-1 worst-row violation, unit-norm rows in scaled variables
    iterations: int = 0
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status is QpStatus.OPTIMAL


def solve_linear_system(matrix: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve a square system, refusing singular or badly conditioned matrices."""
    matrix = np.asarray(matrix, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {matrix.shape}")
    if rhs.shape != (matrix.shape[0],):
        raise ValueError(f"rhs shape {rhs.shape} does not match matrix {matrix.shape}")
    if matrix.shape[0] == 0:
        return np.zeros(0)
    condition = np.linalg.cond(matrix)
    if not np.isfinite(condition) or condition > CONDITION_LIMIT:
        raise SingularMatrixError(f"matrix is singular to working precision (condition {condition:.3g})")
    solution = np.linalg.solve(matrix, rhs)
    # One round of iterative refinement tightens the residual on mildly scaled systems.
    solution = solution + np.linalg.solve(matrix, rhs - matrix @ solution)
    return solution


def _kkt_measure(problem: QpProblem, w: np.ndarray, multipliers: np.ndarray) -> float:
    """Scaled max-norm of stationarity, primal violation and complementarity.

    Stationarity entries are relative to the size of the terms that cancel;
    rows are measured in units of their largest coefficient (never below 1),
    so a violated bound ``u >= 3`` at ``u = 0`` reports exactly 3.
    """
    H, c, G, h = problem.hessian, problem.linear_cost, problem.ineq_matrix, problem.ineq_rhs
    curvature = H @ w
    pulled = G.T @ multipliers
    stationarity_scale = np.maximum.reduce(
        [np.ones_like(c), np.abs(curvature), np.abs(c), np.abs(G).T @ np.abs(multipliers)]
    )
    stationarity = np.max(np.abs(curvature + c - pulled) / stationarity_scale, initial=0.0)
    row_scale = np.maximum(1.0, np.max(np.abs(G), axis=1, initial=0.0))
    slack = G @ w - h
    primal = np.max(np.maximum(-slack, 0.0) / row_scale, initial=0.0)
    complementarity = np.max(
        multipliers * np.abs(slack) / np.maximum(1.0, multipliers * row_scale), initial=0.0
    )
    return float(max(stationarity, primal, complementarity))


def qp_kkt_residual(problem: QpProblem, w: Sequence[float]) -> float:
    """KKT residual of a candidate point, with multipliers fitted on the active rows."""
    w = np.asarray(w, dtype=float).reshape(-1)
    if w.size != problem.num_vars:
        raise ValueError(f"point has {w.size} entries, problem has {problem.num_vars} variables")
    G, h = problem.ineq_matrix, problem.ineq_rhs
    row_scale = np.maximum(1.0, np.max(np.abs(G), axis=1, initial=0.0))
    slack = G @ w - h
    near_active = np.flatnonzero(np.abs(slack) / row_scale <= 1e-9 * np.maximum(1.0, np.abs(h) / row_scale))
    multipliers = np.zeros(problem.num_rows)
    if near_active.size:
        gradient = problem.hessian @ w + problem.linear_cost
        multipliers[near_active], _ = nnls(G[near_active].T, gradient)
    return _kkt_measure(problem, w, multipliers)


@dataclass
class _Scaled:
    """Problem in scaled variables with unit-norm rows; w = scale * w_scaled."""

    hessian: np.ndarray
    linear: np.ndarray
    rows: np.ndarray
    rhs: np.ndarray
    var_scale: np.ndarray
    row_norm: np.ndarray
    kept: np.ndarray  # original indices of the rows that survived


def _refine_primal(problem: QpProblem, w: np.ndarray, multipliers: np.ndarray,
                   rows) -> tuple[np.ndarray, np.ndarray]:
    """One step of iterative refinement on the active-set KKT system, in original units.

    Elimination in scaled space leaves round-off of order 1e-16 times the
    largest variable on every component; a heavily weighted variable turns
    that into a visible stationarity error. Returns the corrected point and
    the multipliers corrected by the same solve.
    """
    A = problem.ineq_matrix[rows]
    n, m = problem.num_vars, len(rows)
    kkt = np.block([[problem.hessian, -A.T], [A, np.zeros((m, m))]])
    stationarity = problem.hessian @ w + problem.linear_cost - A.T @ multipliers[rows]
    rhs = np.concatenate([-stationarity, problem.ineq_rhs[rows] - A @ w])
    # Equilibrate rows and columns so lstsq sees unit-sized entries.
    row_size = np.max(np.abs(kkt), axis=1)
    row_size[row_size == 0] = 1.0
    scaled = kkt / row_size[:, None]
    col_size = np.max(np.abs(scaled), axis=0)
    col_size[col_size == 0] = 1.0
    solution, *_ = scipy.linalg.lstsq(scaled / col_size, rhs / row_size)
    solution = solution / col_size
    refined = multipliers.copy()
    refined[rows] = np.maximum(multipliers[rows] + solution[n:], 0.0)
    return w + solution[:n], refined


def _refine_multipliers(problem: QpProblem, w: np.ndarray, multipliers: np.ndarray, rows) -> np.ndarray:
    """One weighted least-squares correction of the active multipliers.

    Each stationarity component is weighted by the size of its own terms, so a
    small multiplier is not drowned out by a component that cancels 1e12-sized terms.
    """
    if len(rows) == 0:
        return multipliers
    G = problem.ineq_matrix[rows]
    gradient = problem.hessian @ w + problem.linear_cost
    weight = 1.0 / np.maximum.reduce(
        [np.ones_like(gradient), np.abs(gradient), np.abs(problem.linear_cost),
         np.abs(G).T @ np.abs(multipliers[rows])]
    )
    residual = gradient - G.T @ multipliers[rows]
    correction, *_ = np.linalg.lstsq(weight[:, None] * G.T, weight * residual, rcond=None)
    refined = multipliers.copy()
    refined[rows] = np.maximum(multipliers[rows] + correction, 0.0)
    if _kkt_measure(problem, w, refined) < _kkt_measure(problem, w, multipliers):
        return refined
    return multipliers


def _rescale(problem: QpProblem) -> _Scaled | QpSolution:
    diag = np.diag(problem.hessian)
    big = max(float(np.max(diag, initial=0.0)), 1e-300)
    var_scale = np.where(diag > 1e-14 * big, 1.0 / np.sqrt(np.maximum(diag, 1e-300)), 1.0)
    hessian = problem.hessian * np.outer(var_scale, var_scale) + REGULARIZATION * np.eye(problem.num_vars)
    linear = problem.linear_cost * var_scale
    rows = problem.ineq_matrix * var_scale
    norms = np.linalg.norm(rows, axis=1)
    rhs = problem.ineq_rhs
    empty = norms <= 1e-300
    contradictory = np.flatnonzero(empty & (rhs > INFEASIBILITY_THRESHOLD))
    if contradictory.size:
        # A row reading 0 >= h with h > 0 is its own certificate.
        i = int(contradictory[0])
        certificate = np.zeros(problem.num_rows)
        certificate[i] = 1.0
        return QpSolution(
            QpStatus.INFEASIBLE, None, float("nan"), float("nan"),
            certificate=certificate, infeasibility=float(rhs[i]),
            message=f"row {i} has no coefficients and a positive right-hand side",
        )
    kept = np.flatnonzero(~empty)
    return _Scaled(
        hessian=hessian,
        linear=linear,
        rows=rows[kept] / norms[kept, None],
        rhs=rhs[kept] / norms[kept],
        var_scale=var_scale,
        row_norm=norms[kept],
        kept=kept,
    )


def _project_feasible(rows: np.ndarray, rhs: np.ndarray, start: np.ndarray, budget: int):
    """Project ``start`` onto {rows @ x >= rhs} (unit-norm rows) by a dual active-set method.

    Returns ``(x, active, iterations, certificate)``; ``certificate`` is None on
    success and a nonnegative row combination proving infeasibility otherwise.
    ``x`` is None if the iteration budget ran out.
    """
    tol = 1e-12
    x = start.copy()
    active: list[int] = []
    duals: list[float] = []
    iterations = 0
    while iterations < budget:
        violation = rhs - rows @ x
        violation[active] = -np.inf
        candidate = int(np.argmax(violation)) if violation.size else 0
        if violation.size == 0 or violation[candidate] <= tol * (1.0 + abs(rhs[candidate])):
            return x, active, iterations, None
        normal = rows[candidate]
        added_dual = 0.0
        while True:
            iterations += 1
            if iterations > budget:
                return None, active, iterations, None
            if active:
                basis = rows[active].T
                coupling = np.linalg.lstsq(basis, normal, rcond=None)[0]
                direction = normal - basis @ coupling
            else:
                coupling = np.zeros(0)
                direction = normal
            blocking = [j for j in range(len(active)) if coupling[j] > 1e-12]
            dual_step = np.inf
            drop = -1
            for j in blocking:
                ratio = duals[j] / coupling[j]
                if ratio < dual_step:
                    dual_step, drop = ratio, j
            curvature = float(direction @ normal)
            primal_step = np.inf
            # lstsq residuals of a dependent row sit well above eps when the
            # active rows are nearly parallel, so the cut-off is loose on purpose.
            if np.linalg.norm(direction) > 1e-9:
                primal_step = (rhs[candidate] - normal @ x) / curvature
            step = min(dual_step, primal_step)
            if not np.isfinite(step):
                certificate = np.zeros(rhs.size)
                certificate[candidate] = 1.0
                certificate[active] = np.maximum(-coupling, 0.0)
                return x, active, iterations, certificate
            if np.isfinite(primal_step):
                x = x + step * direction
            duals = [d - step * r for d, r in zip(duals, coupling)]
            added_dual += step
            if primal_step <= dual_step:
                active.append(candidate)
                duals.append(added_dual)
                break
            del active[drop]
            del duals[drop]
    return None, active, iterations, None


def _phase_one(rows: np.ndarray, rhs: np.ndarray):
    """Smallest achievable worst-row violation for unit-norm rows, as an LP.

    Returns ``(value, point, certificate)``; the certificate is the LP dual, a
    convex row combination whose value equals the phase-1 optimum.
    """
    m, n = rows.shape
    objective = np.zeros(n + 1)
    objective[-1] = 1.0
    lhs = -np.hstack([rows, np.ones((m, 1))])
    bounds = [(None, None)] * n + [(0.0, None)]
    result = linprog(objective, A_ub=lhs, b_ub=-rhs, bounds=bounds, method="highs")
    if result.status != 0:
        return float("inf"), None, None
    return float(result.x[-1]), result.x[:n], -np.asarray(result.ineqlin.marginals)


def _satisfies(rows: np.ndarray, rhs: np.ndarray, x: np.ndarray) -> bool:
    return bool(np.all(rows @ x - rhs >= -1e-9 * (1.0 + np.abs(rhs))))


def _equality_step(hessian, gradient, rows, residual):
    """Null-space solve of min 1/2 p'Hp + g'p s.t. rows p = residual.

    Returns (step, multipliers) or None when the rows are numerically dependent.
    Working through a QR of the active rows avoids squaring their conditioning,
    which a full KKT matrix would do.
    """
    n, k = gradient.size, rows.shape[0]
    if k == 0:
        try:
            return solve_linear_system(hessian, -gradient), np.zeros(0)
        except SingularMatrixError:
            return None
    q, r = np.linalg.qr(rows.T, mode="complete")
    diag = np.abs(np.diag(r[:k, :k]))
    if k > n or np.min(diag) <= 1e-13 * max(np.max(diag), 1.0):
        return None
    range_basis, null_basis = q[:, :k], q[:, k:]
    step = range_basis @ scipy.linalg.solve_triangular(r[:k, :k], residual, trans="T")
    if k < n:
        reduced = null_basis.T @ hessian @ null_basis
        try:
            inner = solve_linear_system(reduced, -null_basis.T @ (gradient + hessian @ step))
        except SingularMatrixError:
            return None
        step = step + null_basis @ inner
    multipliers = scipy.linalg.solve_triangular(r[:k, :k], range_basis.T @ (hessian @ step + gradient))
    return step, multipliers


def _primal_active_set(scaled: _Scaled, x: np.ndarray, working: list[int], budget: int):
    """Primal active-set iterations from a feasible point. Returns (x, working, duals, iters, ok)."""
    H, c, A, b = scaled.hessian, scaled.linear, scaled.rows, scaled.rhs
    n = c.size
    iterations = 0
    while iterations < budget:
        iterations += 1
        gradient = H @ x + c
        k = len(working)
        # The row-space part also pulls drifted working rows back onto equality.
        found = _equality_step(H, gradient, A[working], b[working] - A[working] @ x)
        if found is None:
            return x, working, np.zeros(k), iterations, False
        step, duals = found
        if np.all(np.abs(step) <= 1e-12 * (1.0 + np.abs(x))):
            x = x + step
            if k == 0:
                return x, working, duals, iterations, True
            worst = int(np.argmin(duals))
            if duals[worst] >= -1e-12 * (1.0 + np.max(np.abs(duals))):
                return x, working, np.maximum(duals, 0.0), iterations, True
            del working[worst]
            continue
        rate = A @ step
        slack = np.maximum(A @ x - b, 0.0)
        length, blocking = 1.0, -1
        step_size = np.linalg.norm(step)
        for i in range(b.size):
            if i in working or rate[i] >= -1e-14 * step_size:
                continue
            ratio = slack[i] / -rate[i]
            if ratio < length:
                length, blocking = ratio, i
        x = x + length * step
        if blocking >= 0:
            working.append(blocking)
    return x, working, np.zeros(len(working)), iterations, False


def qp_solve(
    problem: QpProblem,
    warm_start: Optional[Sequence[float]] = None,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
) -> QpSolution:
    """Solve a convex QP; see the module docstring for the method."""
    scaled = _rescale(problem)
    if isinstance(scaled, QpSolution):
        return scaled
    n = problem.num_vars
    start = np.zeros(n)
    if warm_start is not None:
        start = np.asarray(warm_start, dtype=float).reshape(-1) / scaled.var_scale
        if start.size != n or not np.all(np.isfinite(start)):
            raise ValueError("warm start has the wrong size or non-finite entries")

    rows, rhs = scaled.rows, scaled.rhs
    x, active, used, certificate = _project_feasible(rows, rhs, start, max_iterations)
    if certificate is None and x is not None and not _satisfies(rows, rhs, x):
        x = None  # the projection lost accuracy on nearly parallel rows
    if x is None:
        violation, point, dual = _phase_one(rows, rhs)
        if violation > INFEASIBILITY_THRESHOLD:
            certificate = dual
        elif point is not None:
            x, active, more, _ = _project_feasible(rows, rhs, point, max_iterations)
            used += more
            if x is not None and not _satisfies(rows, rhs, x):
                x = None
            if x is None:
                return QpSolution(QpStatus.MAX_ITERATIONS, None, float("nan"), float("nan"),
                                  iterations=used, infeasibility=violation,
                                  message="no accurate feasible point found")
    if certificate is not None:
        violation = _phase_one(rows, rhs)[0]
        if violation > INFEASIBILITY_THRESHOLD:
            full = np.zeros(problem.num_rows)
            full[scaled.kept] = certificate / scaled.row_norm
            full /= np.sum(full)
            return QpSolution(
                QpStatus.INFEASIBLE, None, float("nan"), float("nan"),
                certificate=full, infeasibility=violation, iterations=used,
                message=f"phase-1 violation {violation:.3e}",
            )
        return QpSolution(
            QpStatus.MAX_ITERATIONS, None, float("nan"), float("nan"), iterations=used,
            infeasibility=violation,
            message="rows are consistent only to within round-off",
        )

    x, working, duals, more, converged = _primal_active_set(scaled, x, list(active), max_iterations - used)
    iterations = used + more
    w_star = x * scaled.var_scale
    multipliers = np.zeros(problem.num_rows)
    if working:
        multipliers[scaled.kept[working]] = duals / scaled.row_norm[working]
    active_rows = scaled.kept[working]
    multipliers = _refine_multipliers(problem, w_star, multipliers, active_rows)
    residual = _kkt_measure(problem, w_star, multipliers)
    if residual > 0.0 and converged:
        refined_w, refined_multipliers = _refine_primal(problem, w_star, multipliers, active_rows)
        refined_multipliers = _refine_multipliers(problem, refined_w, refined_multipliers, active_rows)
        refined_residual = _kkt_measure(problem, refined_w, refined_multipliers)
        if refined_residual < residual:
            w_star, multipliers, residual = refined_w, refined_multipliers, refined_residual
    active_set = tuple(sorted(int(i) for i in scaled.kept[working]))
    status = QpStatus.OPTIMAL
    message = ""
    if not converged:
        status, message = QpStatus.MAX_ITERATIONS, "phase 2 stopped before optimality"
    elif residual > KKT_TOLERANCE:
        status, message = QpStatus.MAX_ITERATIONS, f"KKT residual {residual:.3e} above tolerance"
    return QpSolution(
        status, w_star, problem.objective(w_star), residual,
        active_set=active_set, multipliers=multipliers, iterations=iterations, message=message,
    )
