"""
QWD Module - discrete quaternion Wasserstein distance.

Builds the marginal-constraint discretization of the transport problem between
two finite distributions over quaternion vectors and solves it as a quaternion
LP. Also provides dual potentials, the single-potential (g = -f) form, the
sampled dual estimate used to score a critic, and KL/JS divergences.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import rel_entr

from services.errors import (
    DimensionMismatchError, InputError, InvalidDistributionError,
    MassImbalanceError, NonFiniteInputError,
)
from services.qlp import QuaternionLP, solve_qlp, solve_qlp_dual
from services.quatcore import pairwise_qdist

logger = logging.getLogger(__name__)

MASS_TOL = 1e-9
DISTINCT_TOL = 1e-12
PLAN_TOL = 1e-8
POTENTIAL_TOL = 1e-9

REAL_MODE = "real"
GENERAL_MODE = "general"


@dataclass(frozen=True)
class DiscreteDistribution:
    """
    Finite distribution over quaternion vectors of length dim.

    points has shape (k, dim, 4) and mass has shape (k, 4). In real-pmf mode the
    masses are purely real and sum to 1; in general mode every mass is a
    nonnegative quaternion.
    """

    points: np.ndarray
    mass: np.ndarray
    mode: str

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def totals(self) -> np.ndarray:
        return self.mass.sum(axis=0)

    @property
    def pmf(self) -> np.ndarray:
        """Real masses; only meaningful in real-pmf mode."""
        return self.mass[:, 0]

    @classmethod
    def create(cls, points, mass, renormalize: bool = False) -> "DiscreteDistribution":
        """
        Validate and build a distribution.

        Args:
            points: (k, dim, 4) support points
            mass: (k,) real pmf shorthand or (k, 4) quaternion masses
            renormalize: rescale masses so each component total matches the real total 1

        Returns:
            DiscreteDistribution: zero-mass points dropped
        """
        points = np.array(points, dtype=float)
        mass = np.array(mass, dtype=float)
        if points.ndim == 2 and points.shape[1] % 4 == 0:
            points = points.reshape(points.shape[0], -1, 4)
        if points.ndim != 3 or points.shape[2] != 4:
            raise DimensionMismatchError(f"Support points must have shape (k, dim, 4), got {points.shape}.")
        shorthand = mass.ndim == 1
        if shorthand:
            mass = np.column_stack([mass, np.zeros((mass.size, 3))])
        if mass.ndim != 2 or mass.shape != (points.shape[0], 4):
            raise DimensionMismatchError(
                f"Expected {points.shape[0]} masses of 4 components, got shape {mass.shape}."
            )
        if not (np.all(np.isfinite(points)) and np.all(np.isfinite(mass))):
            raise NonFiniteInputError("Distribution contains non-finite values.")
        if np.any(mass < 0):
            raise InvalidDistributionError("Masses must be nonnegative in every component.")

        keep = np.any(mass != 0.0, axis=1)
        points, mass = points[keep], mass[keep]
        if points.shape[0] == 0:
            raise InvalidDistributionError("Distribution has no support point with positive mass.")

        gaps = pairwise_qdist(points, points)
        np.fill_diagonal(gaps, np.inf)
        if np.any(gaps <= DISTINCT_TOL):
            raise InvalidDistributionError("Support points must be pairwise distinct.")

        is_real = bool(np.all(mass[:, 1:] == 0.0))
        total = mass[:, 0].sum()
        if renormalize and is_real and total > 0:
            mass = mass / total
            total = 1.0
        if is_real and abs(total - 1.0) <= MASS_TOL:
            mode = REAL_MODE
        elif shorthand:
            raise InvalidDistributionError(f"Real pmf must sum to 1, got {total:.12g}.")
        else:
            mode = GENERAL_MODE
        for arr in (points, mass):
            arr.setflags(write=False)
        return cls(points=points, mass=mass, mode=mode)

    @classmethod
    def empirical(cls, samples) -> "DiscreteDistribution":
        """Uniform 1/N mass on samples, exact duplicates merged."""
        samples = np.asarray(samples, dtype=float)
        if samples.ndim == 2:
            samples = samples.reshape(samples.shape[0], -1, 4)
        if samples.shape[0] == 0:
            raise InvalidDistributionError("Cannot build an empirical distribution from zero samples.")
        flat = samples.reshape(samples.shape[0], -1)
        unique, counts = np.unique(flat, axis=0, return_counts=True)
        return cls.create(unique.reshape(unique.shape[0], -1, 4), counts / counts.sum())

    def to_dict(self) -> Dict:
        if self.mode == REAL_MODE:
            mass = self.mass[:, 0].tolist()
        else:
            mass = self.mass.tolist()
        return {
            "dim": self.dim,
            "points": self.points.reshape(self.size, -1).tolist(),
            "mass": mass,
        }


@dataclass(frozen=True)
class CostMatrix:
    values: np.ndarray
    kind: str = "euclid"

    @classmethod
    def euclid(cls, p_r: DiscreteDistribution, p_g: DiscreteDistribution) -> "CostMatrix":
        if p_r.dim != p_g.dim:
            raise DimensionMismatchError(f"Support dimensions differ: {p_r.dim} vs {p_g.dim}.")
        return cls(pairwise_qdist(p_r.points, p_g.points), "euclid")

    @classmethod
    def from_function(cls, p_r: DiscreteDistribution, p_g: DiscreteDistribution,
                      fn: Callable[[np.ndarray, np.ndarray], float]) -> "CostMatrix":
        values = np.array([[fn(x, y) for y in p_g.points] for x in p_r.points], dtype=float)
        return cls.from_values(values, p_r, p_g, kind="function")

    @classmethod
    def from_values(cls, values, p_r: DiscreteDistribution, p_g: DiscreteDistribution,
                    kind: str = "matrix") -> "CostMatrix":
        values = np.array(values, dtype=float, ndmin=2)
        if values.shape != (p_r.size, p_g.size):
            raise DimensionMismatchError(
                f"Cost matrix must be {p_r.size}x{p_g.size}, got {values.shape[0]}x{values.shape[1]}."
            )
        if not np.all(np.isfinite(values)):
            raise NonFiniteInputError("Cost matrix contains non-finite values.")
        if np.any(values < 0):
            raise InputError("Cost entries must be nonnegative.")
        return cls(values, kind)


@dataclass
class TransportPlan:
    gamma: np.ndarray
    objective: float
    per_component: np.ndarray
    mode: str

    def to_dict(self) -> Dict:
        rows, cols, _ = self.gamma.shape
        return {
            "shape": [rows, cols],
            "components": [self.gamma[:, :, c].tolist() for c in range(4)],
            "objective": self.objective,
            "mode": self.mode,
        }


@dataclass
class DualPotentials:
    """f over the support of P_r and g over the support of P_g."""

    f: np.ndarray
    g: np.ndarray
    value: float
    mode: str
    method: str

    def to_dict(self) -> Dict:
        return {"f": self.f.tolist(), "g": self.g.tolist(), "value": self.value,
                "mode": self.mode, "method": self.method}


@dataclass
class ReducedPotential:
    """Single potential on the union of both supports (the g = -f form)."""

    points: np.ndarray
    f: np.ndarray
    value: float


def _resolve_cost(p_r, p_g, cost: Optional[CostMatrix]) -> CostMatrix:
    if cost is None:
        return CostMatrix.euclid(p_r, p_g)
    if cost.values.shape != (p_r.size, p_g.size):
        raise DimensionMismatchError(
            f"Cost matrix shape {cost.values.shape} does not match supports {p_r.size}x{p_g.size}."
        )
    return cost


def _mode(p_r: DiscreteDistribution, p_g: DiscreteDistribution) -> str:
    return REAL_MODE if p_r.mode == REAL_MODE and p_g.mode == REAL_MODE else GENERAL_MODE


def build_discretization(p_r: DiscreteDistribution, p_g: DiscreteDistribution,
                         cost: Optional[CostMatrix] = None) -> QuaternionLP:
    """
    Marginal-constraint form of the transport problem.

    Row i < r of Upsilon sums the plan cells (i, *); row r + j sums the cells
    (*, j). Plan cell (i, j) is column i * g + j, C is the flattened cost and b
    stacks the masses of P_r above those of P_g.

    Raises:
        MassImbalanceError: per-component totals of P_r and P_g differ by more than MASS_TOL.
    """
    if p_r.dim != p_g.dim:
        raise DimensionMismatchError(f"Support dimensions differ: {p_r.dim} vs {p_g.dim}.")
    cost = _resolve_cost(p_r, p_g, cost)
    deficit = p_r.totals - p_g.totals
    for component in range(4):
        if abs(deficit[component]) > MASS_TOL:
            raise MassImbalanceError(component, float(deficit[component]))

    r, g = p_r.size, p_g.size
    upsilon = np.zeros((r + g, r * g))
    for i in range(r):
        upsilon[i, i * g:(i + 1) * g] = 1.0
    for j in range(g):
        upsilon[r + j, j::g] = 1.0
    b = np.vstack([p_r.mass, p_g.mass])
    return QuaternionLP(upsilon, b, cost.values.reshape(-1))


def unflatten_plan(gamma: np.ndarray, rows: int, cols: int) -> np.ndarray:
    return np.asarray(gamma, dtype=float).reshape(rows, cols, 4)


def check_plan(plan: TransportPlan, p_r: DiscreteDistribution, p_g: DiscreteDistribution,
               tol: float = PLAN_TOL) -> Tuple[bool, str]:
    """
    Verify nonnegativity and both marginal constraints of a plan.

    Returns:
        tuple: (valid: bool, message: str)
    """
    if plan.gamma.shape != (p_r.size, p_g.size, 4):
        return False, f"Plan shape {plan.gamma.shape} does not match supports."
    if np.any(plan.gamma < -tol):
        return False, "Plan has negative entries."
    row_err = np.abs(plan.gamma.sum(axis=1) - p_r.mass).max()
    if row_err > tol:
        return False, f"Row marginals off by {row_err:.3e}."
    col_err = np.abs(plan.gamma.sum(axis=0) - p_g.mass).max()
    if col_err > tol:
        return False, f"Column marginals off by {col_err:.3e}."
    return True, "Plan satisfies both marginals."


def qwd_primal(p_r: DiscreteDistribution, p_g: DiscreteDistribution,
               cost: Optional[CostMatrix] = None) -> Tuple[TransportPlan, float]:
    """
    Exact QWD by solving the discretized quaternion LP.

    Returns:
        tuple: (plan: TransportPlan, value: float); in real-pmf mode value is
        sum c * gamma, in general mode the modulus |C^T Gamma|.
    """
    qlp = build_discretization(p_r, p_g, cost)
    solution = solve_qlp(qlp)
    mode = _mode(p_r, p_g)
    value = float(solution.per_component[0]) if mode == REAL_MODE else solution.objective
    plan = TransportPlan(
        gamma=unflatten_plan(solution.gamma, p_r.size, p_g.size),
        objective=value,
        per_component=solution.per_component,
        mode=mode,
    )
    logger.debug("QWD primal %dx%d (%s mode) = %.12g", p_r.size, p_g.size, mode, value)
    return plan, value


def qwd_dual(p_r: DiscreteDistribution, p_g: DiscreteDistribution,
             cost: Optional[CostMatrix] = None) -> Tuple[DualPotentials, float]:
    """
    Kantorovich dual: max over f, g with f(x) + g(y) <= c(x, y).

    Real-pmf mode uses the simplex dual; general mode enumerates vertices and
    raises GuardExceededError on large supports.
    """
    qlp = build_discretization(p_r, p_g, cost)
    dual = solve_qlp_dual(qlp)
    potentials = DualPotentials(
        f=dual.y[:p_r.size].copy(),
        g=dual.y[p_r.size:].copy(),
        value=dual.value,
        mode=_mode(p_r, p_g),
        method=dual.method,
    )
    return potentials, dual.value


def check_potentials(potentials: DualPotentials, cost: CostMatrix,
                     tol: float = POTENTIAL_TOL) -> Tuple[bool, str]:
    """
    Returns:
        tuple: (feasible: bool, message: str)
    """
    excess = potentials.f[:, None] + potentials.g[None, :] - cost.values
    worst = float(excess.max(initial=-np.inf))
    if worst > tol:
        i, j = np.unravel_index(int(np.argmax(excess)), excess.shape)
        return False, f"f({i}) + g({j}) exceeds c by {worst:.3e}."
    return True, "Potentials satisfy f(x) + g(y) <= c(x, y)."


def reduce_potentials(p_r: DiscreteDistribution, p_g: DiscreteDistribution,
                      potentials: DualPotentials) -> ReducedPotential:
    """
    Single 1-Lipschitz potential from an (f, g) pair under the Euclidean cost.

    F(u) = min_j (||u - y_j|| - g_j) on the union of both supports; F dominates f
    on S_r and is dominated by -g on S_g, so E_r[F] - E_g[F] is at least the
    pair's dual value.
    """
    if _mode(p_r, p_g) != REAL_MODE:
        raise InvalidDistributionError("The single-potential form needs real-pmf distributions.")
    union = np.concatenate([p_r.points, p_g.points], axis=0)
    flat = union.reshape(union.shape[0], -1)
    _, first = np.unique(flat, axis=0, return_index=True)
    union = union[np.sort(first)]
    f = np.min(pairwise_qdist(union, p_g.points) - potentials.g[None, :], axis=1)
    at_r = f[_locate(union, p_r.points)]
    at_g = f[_locate(union, p_g.points)]
    value = float(p_r.pmf @ at_r - p_g.pmf @ at_g)
    return ReducedPotential(points=union, f=f, value=value)


def _locate(union: np.ndarray, points: np.ndarray) -> np.ndarray:
    return np.argmin(pairwise_qdist(points, union), axis=1)


def lipschitz_violation(reduced: ReducedPotential) -> float:
    """Largest |f(x) - f(y)| - ||x - y|| over pairs of the union support."""
    dist = pairwise_qdist(reduced.points, reduced.points)
    return float(np.max(np.abs(reduced.f[:, None] - reduced.f[None, :]) - dist))


def qwd_reduced_dual_estimate(samples_r, samples_g, f: Callable[[np.ndarray], np.ndarray],
                              lip_bound: float = 1.0) -> float:
    """
    Sampled dual form (mean f over samples_r - mean f over samples_g) / lip_bound.

    Args:
        samples_r, samples_g: arrays of shape (N, dim, 4)
        f: maps a batch of samples to one real score per sample
        lip_bound: Lipschitz bound of f

    Returns:
        float: a lower estimate of QWD when f is lip_bound-Lipschitz
    """
    if lip_bound <= 0:
        raise InputError("lip_bound must be positive.")
    samples_r = np.asarray(samples_r, dtype=float)
    samples_g = np.asarray(samples_g, dtype=float)
    if samples_r.shape[0] == 0 or samples_g.shape[0] == 0:
        raise InputError("Sample sets must be nonempty.")
    scores_r = np.asarray(f(samples_r), dtype=float).reshape(-1)
    scores_g = np.asarray(f(samples_g), dtype=float).reshape(-1)
    return float((scores_r.mean() - scores_g.mean()) / lip_bound)


# Divergences

PmfLike = Union[DiscreteDistribution, Sequence[float], np.ndarray]


def _aligned_pmfs(p: PmfLike, q: PmfLike) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(p, DiscreteDistribution) and isinstance(q, DiscreteDistribution):
        if p.mode != REAL_MODE or q.mode != REAL_MODE:
            raise InvalidDistributionError("Divergences need real-pmf distributions.")
        if p.dim != q.dim:
            raise DimensionMismatchError(f"Support dimensions differ: {p.dim} vs {q.dim}.")
        dist = pairwise_qdist(p.points, q.points)
        matched = dist <= DISTINCT_TOL
        q_extra = ~matched.any(axis=0)
        pv = np.concatenate([p.pmf, np.zeros(int(q_extra.sum()))])
        qv = np.concatenate([matched.astype(float) @ q.pmf, q.pmf[q_extra]])
        return pv, qv
    pv = np.asarray(p, dtype=float).reshape(-1)
    qv = np.asarray(q, dtype=float).reshape(-1)
    if pv.shape != qv.shape:
        raise DimensionMismatchError(f"PMFs have different lengths: {pv.size} vs {qv.size}.")
    return pv, qv


def kl_divergence(p: PmfLike, q: PmfLike) -> float:
    """
    KL(p || q) in nats over the union of both supports.

    Returns:
        float: +inf when q vanishes somewhere p does not
    """
    pv, qv = _aligned_pmfs(p, q)
    return float(np.sum(rel_entr(pv, qv)))


def js_divergence(p: PmfLike, q: PmfLike) -> float:
    """Jensen-Shannon divergence, clamped into [0, log 2]."""
    pv, qv = _aligned_pmfs(p, q)
    m = 0.5 * (pv + qv)
    value = 0.5 * (np.sum(rel_entr(pv, m)) + np.sum(rel_entr(qv, m)))
    return float(min(max(value, 0.0), np.log(2.0)))
