"""
LP Core Module - real linear programming in standard form.

Implements a dense two-phase primal simplex (Dantzig pricing, switching to
Bland's rule once a run of degenerate pivots is detected), dual extraction from
the final tableau, Phase-1 Farkas rays for infeasible systems, and a brute-force
vertex enumerator used as an oracle on small polytopes.
"""

import logging
from dataclasses import dataclass, field
from itertools import combinations
from typing import List, Optional, Tuple

import numpy as np

from services.errors import (
    DimensionMismatchError, GuardExceededError, InputError,
    NonFiniteInputError, SolverError,
)

logger = logging.getLogger(__name__)

FEASIBILITY_TOL = 1e-9
OPTIMALITY_TOL = 1e-9
PIVOT_TOL = 1e-12
DEGENERACY_LIMIT = 25
VERTEX_MAX_VARS = 12
VERTEX_MAX_CONSTRAINTS = 24

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"


@dataclass(frozen=True)
class RealLP:
    """
    Standard-form LP: optimise c^T x subject to A x = b, x >= 0.

    Args:
        A: constraint matrix (n x m)
        b: right-hand side (n)
        c: cost vector (m)
        sense: "min" or "max"
    """

    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    sense: str = "min"

    def __post_init__(self):
        A = np.array(self.A, dtype=float, ndmin=2)
        b = np.array(self.b, dtype=float).reshape(-1)
        c = np.array(self.c, dtype=float).reshape(-1)
        if A.size == 0 and b.size == 0:
            A = A.reshape(0, c.size)
        if A.shape != (b.size, c.size):
            raise DimensionMismatchError(
                f"A has shape {A.shape} but b has {b.size} entries and c has {c.size}."
            )
        if self.sense not in ("min", "max"):
            raise InputError(f"Unknown sense {self.sense!r}; expected 'min' or 'max'.")
        for name, arr in (("A", A), ("b", b), ("c", c)):
            if not np.all(np.isfinite(arr)):
                raise NonFiniteInputError(f"LP data {name} contains non-finite values.")
            arr.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    @property
    def n_cols(self) -> int:
        return self.A.shape[1]


@dataclass
class LPSolution:
    status: str
    x: np.ndarray
    objective: float
    dual_y: np.ndarray
    basis: Tuple[int, ...] = ()
    farkas_y: Optional[np.ndarray] = None
    iterations: int = 0
    bland_used: bool = False
    phase1_objective: float = 0.0

    @property
    def is_optimal(self) -> bool:
        return self.status == OPTIMAL


@dataclass
class _PivotStats:
    iterations: int = 0
    degenerate_run: int = 0
    bland: bool = False
    bland_ever: bool = False
    limit: int = 0


def _pivot(T: np.ndarray, row: int, col: int) -> None:
    T[row, :] /= T[row, col]
    column = T[:, col].copy()
    column[row] = 0.0
    T -= np.outer(column, T[row, :])


def _entering(reduced: np.ndarray, allowed: np.ndarray, bland: bool) -> int:
    candidates = np.flatnonzero(allowed & (reduced < -OPTIMALITY_TOL))
    if candidates.size == 0:
        return -1
    if bland:
        return int(candidates[0])
    # argmin returns the first (smallest index) on ties
    return int(candidates[np.argmin(reduced[candidates])])


def _leaving(T: np.ndarray, col: int, basis: List[int]) -> Tuple[int, float]:
    column = T[:-1, col]
    rhs = T[:-1, -1]
    best_row, best_ratio = -1, np.inf
    for i in np.flatnonzero(column > PIVOT_TOL):
        ratio = rhs[i] / column[i]
        if ratio < best_ratio - 1e-14 or (abs(ratio - best_ratio) <= 1e-14 and basis[i] < basis[best_row]):
            best_row, best_ratio = int(i), ratio
    return best_row, best_ratio


def _simplex(T: np.ndarray, basis: List[int], allowed: np.ndarray, stats: _PivotStats, phase: int) -> str:
    """Pivot until optimal or unbounded; the last tableau row holds reduced costs."""
    while True:
        col = _entering(T[-1, :-1], allowed, stats.bland)
        if col < 0:
            return OPTIMAL
        row, ratio = _leaving(T, col, basis)
        if row < 0:
            return UNBOUNDED
        if ratio <= FEASIBILITY_TOL:
            stats.degenerate_run += 1
            if not stats.bland and stats.degenerate_run >= DEGENERACY_LIMIT:
                logger.debug("Phase %d: %d degenerate pivots in a row, switching to Bland's rule",
                             phase, stats.degenerate_run)
                stats.bland = True
                stats.bland_ever = True
        else:
            stats.degenerate_run = 0
        _pivot(T, row, col)
        basis[row] = col
        stats.iterations += 1
        if stats.iterations > stats.limit:
            raise SolverError(f"Simplex exceeded {stats.limit} pivots in phase {phase}.")


def solve_lp(lp: RealLP) -> LPSolution:
    """
    Solve a standard-form LP with the two-phase simplex method.

    Returns:
        LPSolution: status "optimal", "infeasible" (with farkas_y set) or "unbounded".
        On optimal, dual_y satisfies A^T y <= c (min) or A^T y >= c (max) and
        c^T x = b^T y up to rounding.
    """
    n, m = lp.A.shape
    cost = lp.c if lp.sense == "min" else -lp.c

    signs = np.where(lp.b < 0, -1.0, 1.0)
    A = lp.A * signs[:, None]
    b = lp.b * signs

    # columns: m structural, n artificial, then rhs
    T = np.zeros((n + 1, m + n + 1))
    T[:n, :m] = A
    T[:n, m:m + n] = np.eye(n)
    T[:n, -1] = b
    T[-1, :m] = -A.sum(axis=0)
    T[-1, -1] = -b.sum()
    basis = list(range(m, m + n))
    stats = _PivotStats(limit=50 * (n + m) + 100)

    allowed = np.ones(m + n, dtype=bool)
    _simplex(T, basis, allowed, stats, phase=1)
    phase1_objective = -T[-1, -1]
    logger.debug("Phase 1 finished after %d pivots, objective %.3e", stats.iterations, phase1_objective)

    if phase1_objective > FEASIBILITY_TOL * max(1.0, float(np.abs(b).sum())):
        u = 1.0 - T[-1, m:m + n]
        return LPSolution(
            status=INFEASIBLE,
            x=np.zeros(m),
            objective=float("nan"),
            dual_y=np.zeros(n),
            basis=tuple(basis),
            farkas_y=signs * u,
            iterations=stats.iterations,
            bland_used=stats.bland_ever,
            phase1_objective=float(phase1_objective),
        )

    # drive artificials out of the basis; rows with no structural entry are redundant
    for i in range(n):
        if basis[i] >= m:
            nonzero = np.flatnonzero(np.abs(T[i, :m]) > PIVOT_TOL)
            if nonzero.size:
                _pivot(T, i, int(nonzero[0]))
                basis[i] = int(nonzero[0])

    full_cost = np.concatenate([cost, np.zeros(n)])
    T[-1, :-1] = full_cost
    T[-1, -1] = 0.0
    for i, var in enumerate(basis):
        if full_cost[var] != 0.0:
            T[-1, :] -= full_cost[var] * T[i, :]

    allowed = np.concatenate([np.ones(m, dtype=bool), np.zeros(n, dtype=bool)])
    stats.bland = False
    stats.degenerate_run = 0
    status = _simplex(T, basis, allowed, stats, phase=2)
    if status == UNBOUNDED:
        logger.debug("Phase 2 detected an unbounded ray after %d pivots", stats.iterations)
        return LPSolution(
            status=UNBOUNDED, x=np.zeros(m), objective=float("-inf") if lp.sense == "min" else float("inf"),
            dual_y=np.zeros(n), basis=tuple(basis), iterations=stats.iterations,
            bland_used=stats.bland_ever, phase1_objective=float(phase1_objective),
        )

    x = np.zeros(m)
    for i, var in enumerate(basis):
        if var < m:
            x[var] = T[i, -1]
    x[(x < 0) & (x >= -FEASIBILITY_TOL)] = 0.0

    y = signs * (-T[-1, m:m + n])
    if lp.sense == "max":
        y = -y

    return LPSolution(
        status=OPTIMAL,
        x=x,
        objective=float(lp.c @ x),
        dual_y=y,
        basis=tuple(basis),
        iterations=stats.iterations,
        bland_used=stats.bland_ever,
        phase1_objective=float(phase1_objective),
    )


def check_optimality(lp: RealLP, solution: LPSolution) -> Tuple[bool, str]:
    """
    Verify primal feasibility, dual feasibility, complementary slackness and the
    duality gap of an optimal solution.

    Returns:
        tuple: (ok: bool, message: str)
    """
    if not solution.is_optimal:
        return False, f"Solution status is {solution.status}."
    x, y = solution.x, solution.dual_y
    scale = max(1.0, float(np.abs(lp.b).max(initial=0.0)))
    primal_residual = float(np.abs(lp.A @ x - lp.b).max(initial=0.0))
    if primal_residual > FEASIBILITY_TOL * scale:
        return False, f"Primal residual {primal_residual:.3e} exceeds tolerance."
    if x.size and x.min() < -FEASIBILITY_TOL:
        return False, f"Primal variable {x.min():.3e} is negative."
    slack = lp.c - lp.A.T @ y
    if lp.sense == "max":
        slack = -slack
    if slack.size and slack.min() < -FEASIBILITY_TOL * max(1.0, float(np.abs(lp.c).max())):
        return False, f"Dual constraint violated by {-slack.min():.3e}."
    complementarity = float(np.abs(x * slack).max(initial=0.0))
    if complementarity > 1e-8 * scale:
        return False, f"Complementary slackness residual {complementarity:.3e} exceeds tolerance."
    gap = abs(float(lp.c @ x) - float(lp.b @ y))
    if gap > 1e-8 * scale * max(1.0, abs(float(lp.c @ x))):
        return False, f"Duality gap {gap:.3e} exceeds tolerance."
    return True, "Solution is optimal within tolerance."


def enumerate_vertices(A_ineq, b_ineq, tol: float = FEASIBILITY_TOL) -> List[np.ndarray]:
    """
    All basic feasible points of {y : A_ineq y <= b_ineq}.

    Every subset of d constraints (d = number of variables) is solved as a square
    system; feasible solutions are kept and deduplicated within tol.
    """
    A = np.array(A_ineq, dtype=float, ndmin=2)
    b = np.array(b_ineq, dtype=float).reshape(-1)
    k, d = A.shape
    if b.size != k:
        raise DimensionMismatchError(f"A_ineq has {k} rows but b_ineq has {b.size} entries.")
    if d > VERTEX_MAX_VARS or k > VERTEX_MAX_CONSTRAINTS:
        raise GuardExceededError(
            f"Vertex enumeration limited to {VERTEX_MAX_VARS} variables and "
            f"{VERTEX_MAX_CONSTRAINTS} constraints; got {d} and {k}."
        )
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
        raise NonFiniteInputError("Vertex enumeration data contains non-finite values.")
    zero_rows = np.flatnonzero(np.all(A == 0.0, axis=1))
    if zero_rows.size:
        raise InputError(f"Constraint rows {zero_rows.tolist()} are all zero.")

    slack_tol = tol * max(1.0, float(np.abs(b).max(initial=0.0)))
    if d == 0:
        return [np.zeros(0)] if np.all(b >= -slack_tol) else []

    vertices: List[np.ndarray] = []
    for rows in combinations(range(k), d):
        sub = A[list(rows)]
        if np.linalg.matrix_rank(sub) < d:
            continue
        point = np.linalg.solve(sub, b[list(rows)])
        if np.any(A @ point > b + slack_tol):
            continue
        if any(np.max(np.abs(point - v)) <= tol for v in vertices):
            continue
        vertices.append(point)
    vertices.sort(key=lambda v: tuple(np.round(v, 12)))
    return vertices
