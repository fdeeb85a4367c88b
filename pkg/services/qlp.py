"""
QLP Module - quaternion linear programs and their dual theory.

    min |C^T Gamma|  s.t.  Upsilon Gamma = b,  Gamma >= 0

with Upsilon real (n x m), b a quaternion vector (n, 4) and C >= 0 real (m).
The constraints separate over the four real components, and C >= 0 keeps every
C^T Gamma(l) nonnegative, so the optimum is the concatenation of four real LP
optima. The dual max |b^T y| over {Upsilon^T y <= C, b^T y >= 0} is solved
exactly by lpcore when b is purely real and by vertex enumeration otherwise.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from services.errors import (
    ComponentInfeasibleError, DimensionMismatchError, DualInfeasibleError,
    FarkasAlternativeError, GuardExceededError, InfeasibleError, InputError,
    MixedSignError, NonFiniteInputError, PointInsideBoxError, SolverError,
    CheckFailedError,
)
from services.lpcore import (
    FEASIBILITY_TOL, INFEASIBLE, OPTIMAL, UNBOUNDED, VERTEX_MAX_CONSTRAINTS,
    VERTEX_MAX_VARS, RealLP, enumerate_vertices, solve_lp,
)
from services.quatcore import as_qvector, qcmp_nonneg, qnorm

logger = logging.getLogger(__name__)

WEAK_DUALITY_TOL = 1e-8
CERTIFICATE_TOL = 1e-8
ORDER_TOL = 1e-9
GAP_REPORT_THRESHOLD = 1e-6


@dataclass(frozen=True)
class QuaternionLP:
    upsilon: np.ndarray
    b: np.ndarray
    cost: np.ndarray

    def __post_init__(self):
        upsilon = np.array(self.upsilon, dtype=float, ndmin=2)
        b = as_qvector(self.b)
        cost = np.array(self.cost, dtype=float).reshape(-1)
        if upsilon.shape != (b.shape[0], cost.size):
            raise DimensionMismatchError(
                f"Upsilon has shape {upsilon.shape}, b has {b.shape[0]} rows, C has {cost.size} entries."
            )
        if not (np.all(np.isfinite(upsilon)) and np.all(np.isfinite(b)) and np.all(np.isfinite(cost))):
            raise NonFiniteInputError("QLP data contains non-finite values.")
        if np.any(cost < 0):
            raise InputError("Cost vector C must be nonnegative.")
        for arr in (upsilon, b, cost):
            arr.setflags(write=False)
        object.__setattr__(self, "upsilon", upsilon)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "cost", cost)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.upsilon.shape

    def is_real(self) -> bool:
        """True when b has no imaginary part."""
        return bool(np.all(self.b[:, 1:] == 0.0))

    def component_lp(self, component: int) -> RealLP:
        return RealLP(self.upsilon, self.b[:, component], self.cost, "min")

    def to_dict(self) -> Dict:
        return {"upsilon": self.upsilon.tolist(), "b": self.b.tolist(), "C": self.cost.tolist()}


@dataclass
class QLPSolution:
    gamma: np.ndarray
    objective: float
    per_component: np.ndarray
    component_duals: np.ndarray

    def residuals(self, qlp: QuaternionLP) -> np.ndarray:
        return np.abs(qlp.upsilon @ self.gamma - qlp.b).max(axis=0)


@dataclass
class QLPDual:
    y: np.ndarray
    value: float
    method: str


@dataclass
class WeakDualityReport:
    dual_value: float
    primal_value: float
    gap: float


@dataclass
class FarkasCertificate:
    kind: str
    gamma: Optional[np.ndarray] = None
    y: Optional[np.ndarray] = None
    component: Optional[int] = None

    def to_dict(self) -> Dict:
        payload = {"kind": self.kind}
        if self.gamma is not None:
            payload["Gamma"] = self.gamma.tolist()
        if self.y is not None:
            payload["y"] = self.y.tolist()
        if self.component is not None:
            payload["component"] = self.component
        return payload


@dataclass
class GapInstance:
    qlp: QuaternionLP
    primal: float
    dual: float

    @property
    def gap(self) -> float:
        return self.primal - self.dual

    def to_dict(self) -> Dict:
        record = self.qlp.to_dict()
        record.update({"primal": self.primal, "dual": self.dual, "gap": self.gap})
        return record


@dataclass
class GapScan:
    instances: List[GapInstance] = field(default_factory=list)
    trials: int = 0
    skipped: int = 0
    max_gap: float = 0.0
    min_gap: float = 0.0


# Primal

def solve_qlp(qlp: QuaternionLP) -> QLPSolution:
    """
    Minimise |C^T Gamma| by solving the four component LPs independently.

    Raises:
        ComponentInfeasibleError: when some component system has no x >= 0.
        SolverError: when a component LP reports unbounded (impossible for C >= 0).
    """
    n, m = qlp.shape
    gamma = np.zeros((m, 4))
    per_component = np.zeros(4)
    duals = np.zeros((4, n))
    for component in range(4):
        if not np.any(qlp.b[:, component]):
            # Gamma = 0 and y = 0 are optimal for a zero right-hand side when C >= 0
            continue
        solution = solve_lp(qlp.component_lp(component))
        if solution.status == INFEASIBLE:
            raise ComponentInfeasibleError(component)
        if solution.status == UNBOUNDED:
            raise SolverError(f"Component {component} LP reported unbounded with C >= 0.")
        gamma[:, component] = solution.x
        per_component[component] = solution.objective
        duals[component] = solution.dual_y
    objective = float(np.sqrt(np.sum(per_component ** 2)))
    logger.debug("QLP %dx%d solved, component objectives %s", n, m, per_component)
    return QLPSolution(gamma=gamma, objective=objective, per_component=per_component, component_duals=duals)


# Weak duality

def check_dual_feasible(qlp: QuaternionLP, y, tol: float = ORDER_TOL) -> Tuple[bool, List[str]]:
    """
    Check Upsilon^T y <= C and b^T y >= 0 (componentwise).

    Returns:
        tuple: (feasible: bool, violations: list of descriptions)
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size != qlp.shape[0]:
        raise DimensionMismatchError(f"y has {y.size} entries, Upsilon has {qlp.shape[0]} rows.")
    violations = []
    slack = qlp.cost - qlp.upsilon.T @ y
    for j in np.flatnonzero(slack < -tol):
        violations.append(f"row {int(j)} of Upsilon^T y exceeds C by {-slack[j]:.3e}")
    bty = qlp.b.T @ y
    for component in np.flatnonzero(bty < -tol):
        violations.append(f"component {int(component)} of b^T y is {bty[component]:.3e} < 0")
    return not violations, violations


def weak_duality_check(qlp: QuaternionLP, y, primal: Optional[float] = None) -> WeakDualityReport:
    """
    Verify |b^T y| <= primal optimum for a dual-feasible y.

    Raises:
        DualInfeasibleError: y violates the dual constraints.
        CheckFailedError: the inequality fails beyond tolerance.
    """
    feasible, violations = check_dual_feasible(qlp, y)
    if not feasible:
        raise DualInfeasibleError(violations)
    if primal is None:
        primal = solve_qlp(qlp).objective
    dual_value = qnorm(qlp.b.T @ np.asarray(y, dtype=float))
    report = WeakDualityReport(dual_value=dual_value, primal_value=float(primal), gap=float(primal) - dual_value)
    if dual_value > primal + WEAK_DUALITY_TOL * max(1.0, primal):
        raise CheckFailedError(f"Weak duality violated: |b^T y| = {dual_value} > primal {primal}.")
    return report


# Dual

def _row_space_basis(upsilon: np.ndarray) -> np.ndarray:
    """Orthonormal basis (n x r) of the range of Upsilon."""
    if upsilon.size == 0:
        return np.zeros((upsilon.shape[0], 0))
    u, s, _ = np.linalg.svd(upsilon, full_matrices=False)
    rank = int(np.sum(s > 1e-10 * max(1.0, s[0])))
    return u[:, :rank]


def _dual_by_vertices(qlp: QuaternionLP) -> QLPDual:
    # |b^T y| is bounded on the dual set only when the primal is feasible
    solve_qlp(qlp)
    basis = _row_space_basis(qlp.upsilon)
    rank = basis.shape[1]
    active = [c for c in range(4) if np.any(qlp.b[:, c] != 0.0)]
    # Upsilon^T Q z <= C  and  -b(l)^T Q z <= 0 for every nonzero component
    rows = [qlp.upsilon.T @ basis]
    rhs = [qlp.cost]
    for component in active:
        rows.append(-(qlp.b[:, component] @ basis).reshape(1, -1))
        rhs.append(np.zeros(1))
    A = np.vstack(rows) if rank else np.zeros((sum(r.shape[0] for r in rows), 0))
    b = np.concatenate(rhs)
    keep = ~np.all(np.abs(A) <= 1e-14, axis=1)
    if np.any(b[~keep] < -FEASIBILITY_TOL):
        raise InfeasibleError("Dual feasible set is empty.")
    A, b = A[keep], b[keep]
    if rank > VERTEX_MAX_VARS or A.shape[0] > VERTEX_MAX_CONSTRAINTS:
        raise GuardExceededError(
            f"Quaternion dual needs vertex enumeration over {rank} variables and {A.shape[0]} "
            f"constraints; limits are {VERTEX_MAX_VARS} and {VERTEX_MAX_CONSTRAINTS}."
        )
    vertices = enumerate_vertices(A, b) if A.shape[0] else [np.zeros(rank)]
    if not vertices:
        raise InfeasibleError("Dual feasible set is empty.")
    best_y, best_value = None, -1.0
    for z in vertices:
        y = basis @ z
        value = qnorm(qlp.b.T @ y)
        if value > best_value + 1e-15:
            best_y, best_value = y, value
    logger.debug("Dual vertex enumeration over %d vertices, value %.6f", len(vertices), best_value)
    return QLPDual(y=best_y, value=float(best_value), method="vertex")


def solve_qlp_dual(qlp: QuaternionLP, method: str = "auto") -> QLPDual:
    """
    Maximise |b^T y| over {Upsilon^T y <= C, b^T y >= 0}.

    Args:
        qlp: the problem
        method: "lp" (purely real b only), "vertex", or "auto" (lp when b is real)

    Returns:
        QLPDual: maximiser y, value and the method used
    """
    if method not in ("auto", "lp", "vertex"):
        raise InputError(f"Unknown dual method {method!r}.")
    if method == "lp" and not qlp.is_real():
        raise InputError("The LP dual is exact only for purely real b.")
    if method == "vertex" or (method == "auto" and not qlp.is_real()):
        return _dual_by_vertices(qlp)

    solution = solve_lp(RealLP(qlp.upsilon, qlp.b[:, 0], qlp.cost, "min"))
    if solution.status != OPTIMAL:
        raise ComponentInfeasibleError(0, "The dual is unbounded.")
    y = solution.dual_y
    return QLPDual(y=y, value=float(abs(qlp.b[:, 0] @ y)), method="lp")


def reference_gap_instance() -> QuaternionLP:
    """Instance with primal sqrt(2) and dual sqrt(1.25)."""
    upsilon = np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 1.0]])
    b = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])
    return QuaternionLP(upsilon, b, np.array([1.0, 1.0, 1.5]))


def random_qlp(rng: np.random.Generator, n_rows: int, n_cols: int, real_b: bool = False) -> QuaternionLP:
    """Random QLP with 0/1/2 constraint entries and b = Upsilon Gamma* for some Gamma* >= 0."""
    upsilon = rng.integers(0, 3, size=(n_rows, n_cols)).astype(float)
    cost = np.round(rng.uniform(0.5, 2.0, size=n_cols), 2)
    gamma = np.round(rng.uniform(0.0, 1.0, size=(n_cols, 4)), 2)
    if real_b:
        gamma[:, 1:] = 0.0
    return QuaternionLP(upsilon, upsilon @ gamma, cost)


def dual_gap_search(seed: int, trials: int, max_rows: int = 3, max_cols: int = 4,
                    real_b: bool = False) -> GapScan:
    """
    Probe strong duality on random instances.

    Every draw is solved both ways; the dual uses vertex enumeration. Draws that
    are infeasible or exceed the enumeration guard are skipped and counted.

    Returns:
        GapScan: instances with gap > 1e-6 sorted by decreasing gap
    """
    rng = np.random.default_rng(seed)
    scan = GapScan(trials=trials)
    gaps = []
    for _ in range(trials):
        n_rows = int(rng.integers(1, max_rows + 1))
        n_cols = int(rng.integers(1, max_cols + 1))
        qlp = random_qlp(rng, n_rows, n_cols, real_b=real_b)
        try:
            primal = solve_qlp(qlp).objective
            dual = solve_qlp_dual(qlp, method="vertex").value
        except (InfeasibleError, GuardExceededError) as exc:
            logger.debug("Skipping draw: %s", exc)
            scan.skipped += 1
            continue
        gap = primal - dual
        if gap < -WEAK_DUALITY_TOL * max(1.0, primal):
            raise CheckFailedError(f"Weak duality violated on a random draw: primal {primal}, dual {dual}.")
        gaps.append(gap)
        if gap > GAP_REPORT_THRESHOLD:
            scan.instances.append(GapInstance(qlp, primal, dual))
    scan.instances.sort(key=lambda inst: -inst.gap)
    if gaps:
        scan.max_gap = float(max(gaps))
        scan.min_gap = float(min(gaps))
    logger.info("Gap scan: %d trials, %d skipped, %d gaps, max gap %.3e",
                trials, scan.skipped, len(scan.instances), scan.max_gap)
    return scan


# Farkas alternative

def _dual_ray(upsilon: np.ndarray, b: np.ndarray, target: int) -> Optional[np.ndarray]:
    """
    Search y with Upsilon^T y <= 0, b(l)^T y >= 0 for all l and b(target)^T y = 1.

    Posed as a phase-1 feasibility LP over y = y_plus - y_minus with slacks.
    """
    n, m = upsilon.shape
    others = [c for c in range(4) if c != target and np.any(b[:, c] != 0.0)]
    rows_ineq = [upsilon.T] + [-b[:, c].reshape(1, -1) for c in others]
    G = np.vstack(rows_ineq)
    k = G.shape[0]
    # [G, -G, I] [y+; y-; s] = 0 ;  [b_t, -b_t, 0] [...] = 1
    A = np.zeros((k + 1, 2 * n + k))
    A[:k, :n] = G
    A[:k, n:2 * n] = -G
    A[:k, 2 * n:] = np.eye(k)
    A[k, :n] = b[:, target]
    A[k, n:2 * n] = -b[:, target]
    rhs = np.zeros(k + 1)
    rhs[k] = 1.0
    solution = solve_lp(RealLP(A, rhs, np.zeros(2 * n + k)))
    if solution.status != OPTIMAL:
        return None
    return solution.x[:n] - solution.x[n:2 * n]


def farkas(upsilon, b) -> FarkasCertificate:
    """
    Return exactly one certificate of the Farkas alternative.

    Primal: Gamma >= 0 with Upsilon Gamma = b (every component system feasible).
    Dual:   y with Upsilon^T y <= 0 and b^T y > 0 in the quaternion order.

    Raises:
        FarkasAlternativeError: a component is infeasible but no y makes every
            component of b^T y nonnegative.
    """
    upsilon = np.array(upsilon, dtype=float, ndmin=2)
    b = as_qvector(b)
    if upsilon.shape[0] != b.shape[0]:
        raise DimensionMismatchError(f"Upsilon has {upsilon.shape[0]} rows, b has {b.shape[0]}.")
    n, m = upsilon.shape
    gamma = np.zeros((m, 4))
    infeasible = []
    rays = {}
    for component in range(4):
        solution = solve_lp(RealLP(upsilon, b[:, component], np.zeros(m)))
        if solution.status == INFEASIBLE:
            infeasible.append(component)
            rays[component] = solution.farkas_y
        else:
            gamma[:, component] = solution.x
    if not infeasible:
        return FarkasCertificate(kind="primal", gamma=gamma)

    for component in infeasible:
        y = rays[component]
        if np.all(b.T @ y >= -ORDER_TOL):
            return FarkasCertificate(kind="dual", y=y, component=component)
    for component in infeasible:
        y = _dual_ray(upsilon, b, component)
        if y is not None:
            return FarkasCertificate(kind="dual", y=y, component=component)
    raise FarkasAlternativeError(
        f"Components {infeasible} are infeasible but no y gives Upsilon^T y <= 0 with b^T y > 0 "
        "in every component; the quaternion alternative does not hold for this b."
    )


def validate_certificate(upsilon, b, certificate: FarkasCertificate,
                         tol: float = CERTIFICATE_TOL) -> Tuple[bool, str]:
    """
    Returns:
        tuple: (valid: bool, message: str)
    """
    upsilon = np.array(upsilon, dtype=float, ndmin=2)
    b = as_qvector(b)
    if certificate.kind == "primal":
        if certificate.gamma is None or certificate.y is not None:
            return False, "Primal certificate must carry Gamma only."
        if not qcmp_nonneg(certificate.gamma, ORDER_TOL):
            return False, "Gamma has negative components."
        residual = float(np.abs(upsilon @ certificate.gamma - b).max(initial=0.0))
        if residual > tol * max(1.0, float(np.abs(b).max(initial=0.0))):
            return False, f"Upsilon Gamma - b residual {residual:.3e} exceeds tolerance."
        return True, "Primal certificate is valid."
    if certificate.kind == "dual":
        if certificate.y is None or certificate.gamma is not None:
            return False, "Dual certificate must carry y only."
        y = np.asarray(certificate.y, dtype=float)
        if np.any(upsilon.T @ y > ORDER_TOL):
            return False, "Upsilon^T y has positive entries."
        bty = b.T @ y
        if np.any(bty < -ORDER_TOL):
            return False, f"b^T y = {bty.tolist()} has negative components."
        if not np.any(bty > ORDER_TOL):
            return False, "b^T y is not strictly positive in any component."
        return True, "Dual certificate is valid."
    return False, f"Unknown certificate kind {certificate.kind!r}."


# Convex geometry on axis-aligned quaternion boxes

@dataclass(frozen=True)
class QuaternionBox:
    """
    Box [lower_0, upper_0]^n + [lower_1, upper_1]^n i + ... with lower <= 0 <= upper.

    from_bounds(dim, s) builds the box [0, s_0]^n + [0, s_1]^n i + [0, s_2]^n j + [0, s_3]^n k.
    """

    dim: int
    upper: Tuple[float, float, float, float]
    lower: Tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        upper = tuple(float(v) for v in self.upper)
        lower = tuple(float(v) for v in self.lower)
        if len(upper) != 4 or len(lower) != 4:
            raise DimensionMismatchError("Box bounds need four components.")
        if self.dim < 1:
            raise InputError("Box dimension must be positive.")
        if any(lo > 0.0 or up < 0.0 for lo, up in zip(lower, upper)):
            raise InputError("Box must contain 0: need lower <= 0 <= upper in every component.")
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "lower", lower)

    @classmethod
    def from_bounds(cls, dim: int, s) -> "QuaternionBox":
        return cls(dim=dim, upper=tuple(s))

    @property
    def upper_array(self) -> np.ndarray:
        return np.array(self.upper)

    @property
    def lower_array(self) -> np.ndarray:
        return np.array(self.lower)

    def to_dict(self) -> Dict:
        return {"dim": self.dim, "upper": list(self.upper), "lower": list(self.lower)}


@dataclass
class SeparatingHyperplane:
    p: np.ndarray
    alpha: np.ndarray

    def to_dict(self) -> Dict:
        return {"p": self.p.tolist(), "alpha": self.alpha.tolist()}


def _check_box_point(box: QuaternionBox, y) -> np.ndarray:
    y = as_qvector(y)
    if y.shape[0] != box.dim:
        raise DimensionMismatchError(f"Point has {y.shape[0]} entries, box dimension is {box.dim}.")
    return y


def box_contains(box: QuaternionBox, y, tol: float = 0.0) -> bool:
    y = _check_box_point(box, y)
    return bool(np.all(y >= box.lower_array - tol) and np.all(y <= box.upper_array + tol))


def box_support(box: QuaternionBox, p) -> np.ndarray:
    """max over x in box of p^T x, component by component."""
    p = np.asarray(p, dtype=float)
    return np.clip(p, 0, None).sum() * box.upper_array + np.clip(p, None, 0).sum() * box.lower_array


def project_box(box: QuaternionBox, y) -> Tuple[np.ndarray, float]:
    """Unique nearest point of the box to y, and its distance."""
    y = _check_box_point(box, y)
    xhat = np.clip(y, box.lower_array, box.upper_array)
    return xhat, qnorm(y - xhat)


def separate_box(box: QuaternionBox, y, tol: float = 0.0) -> SeparatingHyperplane:
    """
    Hyperplane p^T x = alpha separating a nonnegative or nonpositive y from the box.

    p selects the first entry of y that leaves the box; alpha takes the midpoint
    between the box face and y in each violated component, and the box face in
    every other component.

    Raises:
        MixedSignError: y is neither nonnegative nor nonpositive.
        PointInsideBoxError: y lies in the (closed) box.
    """
    y = _check_box_point(box, y)
    nonneg = qcmp_nonneg(y)
    nonpos = qcmp_nonneg(-y)
    if not (nonneg or nonpos):
        raise MixedSignError("Separation needs y nonnegative or nonpositive.")
    if box_contains(box, y, tol):
        raise PointInsideBoxError("y lies inside the box; there is nothing to separate.")

    if nonneg:
        outside = y > box.upper_array + tol
        sign, face = 1.0, box.upper_array
    else:
        outside = y < box.lower_array - tol
        sign, face = -1.0, -box.lower_array
    index = int(np.flatnonzero(outside.any(axis=1))[0])
    p = np.zeros(box.dim)
    p[index] = sign
    entry = sign * y[index]
    alpha = np.where(outside[index], (face + entry) / 2.0, face)
    return SeparatingHyperplane(p=p, alpha=alpha)


def check_separation(box: QuaternionBox, y, plane: SeparatingHyperplane) -> Tuple[bool, str]:
    """
    Returns:
        tuple: (valid: bool, message: str)
    """
    y = _check_box_point(box, y)
    support = box_support(box, plane.p)
    if np.any(support > plane.alpha + ORDER_TOL):
        return False, "Some point of the box lies beyond the hyperplane."
    py = plane.p @ y
    if not np.any(py > plane.alpha + ORDER_TOL):
        return False, "y does not exceed alpha in any component."
    return True, "Hyperplane separates y from the box."


def box_intersection(a: QuaternionBox, b: QuaternionBox) -> QuaternionBox:
    if a.dim != b.dim:
        raise DimensionMismatchError("Boxes have different dimensions.")
    return QuaternionBox(
        dim=a.dim,
        upper=tuple(np.minimum(a.upper_array, b.upper_array)),
        lower=tuple(np.maximum(a.lower_array, b.lower_array)),
    )


def box_minkowski_sum(a: QuaternionBox, b: QuaternionBox) -> QuaternionBox:
    if a.dim != b.dim:
        raise DimensionMismatchError("Boxes have different dimensions.")
    return QuaternionBox(
        dim=a.dim,
        upper=tuple(a.upper_array + b.upper_array),
        lower=tuple(a.lower_array + b.lower_array),
    )


def box_minkowski_difference(a: QuaternionBox, b: QuaternionBox) -> QuaternionBox:
    if a.dim != b.dim:
        raise DimensionMismatchError("Boxes have different dimensions.")
    return QuaternionBox(
        dim=a.dim,
        upper=tuple(a.upper_array - b.lower_array),
        lower=tuple(a.lower_array - b.upper_array),
    )


def convex_ops(a: QuaternionBox, b: QuaternionBox) -> Dict[str, QuaternionBox]:
    """Intersection, sum and difference of two boxes (each again a box)."""
    return {
        "intersection": box_intersection(a, b),
        "sum": box_minkowski_sum(a, b),
        "difference": box_minkowski_difference(a, b),
    }
