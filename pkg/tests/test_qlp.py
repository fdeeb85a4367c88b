# tests/test_qlp.py
import itertools
import os
import sys

import numpy as np
import pytest
from scipy.optimize import linprog

ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

from services.errors import (
    ComponentInfeasibleError, DualInfeasibleError, FarkasAlternativeError, InputError,
    MixedSignError, PointInsideBoxError,
)
from services.qlp import (
    FarkasCertificate, QuaternionBox, QuaternionLP, SeparatingHyperplane, box_contains,
    check_dual_feasible, check_separation, convex_ops, dual_gap_search, farkas, project_box,
    random_qlp, reference_gap_instance, separate_box, solve_qlp, solve_qlp_dual, validate_certificate,
    weak_duality_check,
)
from services.quatcore import qvector


# ---------------- primal ----------------

def test_primal_separates_over_components():
    qlp = QuaternionLP([[1.0, 1.0]], qvector([(1, 2, 0, 0)]), [1.0, 2.0])
    solution = solve_qlp(qlp)
    assert solution.per_component[:2] == pytest.approx([1.0, 2.0])
    assert solution.objective == pytest.approx(np.sqrt(5.0))
    assert np.all(solution.residuals(qlp) <= 1e-9)
    assert np.all(solution.gamma >= 0)


def test_primal_infeasible_component():
    qlp = QuaternionLP([[1.0, 1.0]], qvector([(-1, 0, 0, 0)]), [1.0, 1.0])
    with pytest.raises(ComponentInfeasibleError):
        solve_qlp(qlp)


def test_negative_cost_rejected():
    with pytest.raises(InputError):
        QuaternionLP([[1.0]], qvector([(1, 0, 0, 0)]), [-1.0])


# ---------------- duality ----------------

def test_reference_instance_has_gap():
    qlp = reference_gap_instance()
    primal = solve_qlp(qlp).objective
    dual = solve_qlp_dual(qlp)
    assert dual.method == "vertex"
    assert primal == pytest.approx(np.sqrt(2.0), abs=1e-9)
    assert dual.value == pytest.approx(np.sqrt(1.25), abs=1e-9)
    assert primal - dual.value > 0.29


def test_real_b_dual_methods_agree():
    qlp = QuaternionLP([[1.0, 0.0, 1.0], [0.0, 1.0, 1.0]], qvector([(1, 0, 0, 0), (2, 0, 0, 0)]),
                       [1.0, 1.0, 1.5])
    primal = solve_qlp(qlp).objective
    assert solve_qlp_dual(qlp, "lp").value == pytest.approx(primal, abs=1e-9)
    assert solve_qlp_dual(qlp, "vertex").value == pytest.approx(primal, abs=1e-9)


def test_lp_dual_refuses_quaternion_b():
    with pytest.raises(InputError):
        solve_qlp_dual(reference_gap_instance(), method="lp")


def test_real_b_scan_finds_no_gap():
    scan = dual_gap_search(seed=0, trials=1000, real_b=True)
    assert scan.trials == 1000
    assert scan.max_gap <= 1e-7
    assert scan.instances == []


def _real_part_only(qlp, component):
    b = np.zeros_like(qlp.b)
    b[:, 0] = qlp.b[:, component]
    return QuaternionLP(qlp.upsilon, b, qlp.cost)


def test_quaternion_scan_finds_coupling_gaps():
    scan = dual_gap_search(seed=1, trials=1000)
    assert scan.min_gap >= -1e-8
    assert scan.instances
    gaps = [instance.gap for instance in scan.instances]
    assert gaps == sorted(gaps, reverse=True)
    for instance in scan.instances[:10]:
        qlp = instance.qlp
        assert np.any(qlp.b[:, 1:] != 0.0)
        assert solve_qlp(qlp).objective == pytest.approx(instance.primal, abs=1e-9)
        assert solve_qlp_dual(qlp, "vertex").value == pytest.approx(instance.dual, abs=1e-9)
        # each component on its own has no gap; the gap comes from sharing one y
        for component in range(4):
            alone = _real_part_only(qlp, component)
            assert solve_qlp_dual(alone, "lp").value == pytest.approx(solve_qlp(alone).objective, abs=1e-7)


def _brute_force_component_minimum(upsilon, rhs, cost):
    """Smallest cost over every basic solution of Upsilon x = rhs, x >= 0."""
    n, m = upsilon.shape
    best = 0.0 if not np.any(rhs) else np.inf
    for size in range(1, min(n, m) + 1):
        for cols in itertools.combinations(range(m), size):
            sub = upsilon[:, cols]
            x, *_ = np.linalg.lstsq(sub, rhs, rcond=None)
            if np.abs(sub @ x - rhs).max() <= 1e-9 and np.all(x >= -1e-12):
                best = min(best, float(cost[list(cols)] @ x))
    return best


def test_decomposition_matches_brute_force():
    rng = np.random.default_rng(4)
    for _ in range(300):
        qlp = random_qlp(rng, int(rng.integers(1, 4)), int(rng.integers(1, 6)), real_b=bool(rng.integers(0, 2)))
        minima = [_brute_force_component_minimum(qlp.upsilon, qlp.b[:, c], qlp.cost) for c in range(4)]
        assert solve_qlp(qlp).objective == pytest.approx(float(np.sqrt(np.sum(np.square(minima)))), abs=1e-7)


def test_weak_duality_on_feasible_points():
    qlp = reference_gap_instance()
    report = weak_duality_check(qlp, [1.0, 0.5])
    assert report.dual_value == pytest.approx(np.sqrt(1.25))
    assert report.gap >= 0
    assert weak_duality_check(qlp, [0.0, 0.0]).dual_value == 0.0


def test_weak_duality_rejects_infeasible_y():
    qlp = reference_gap_instance()
    feasible, violations = check_dual_feasible(qlp, [2.0, 0.0])
    assert not feasible and violations
    with pytest.raises(DualInfeasibleError):
        weak_duality_check(qlp, [2.0, 0.0])


# ---------------- Farkas ----------------

def test_farkas_feasible_system():
    certificate = farkas([[1.0, 1.0]], qvector([(1, 0, 0, 0)]))
    assert certificate.kind == "primal"
    ok, msg = validate_certificate([[1.0, 1.0]], qvector([(1, 0, 0, 0)]), certificate)
    assert ok, msg


def test_farkas_negative_right_hand_side():
    b = qvector([(-1, 0, 0, 0)])
    certificate = farkas([[1.0, 1.0]], b)
    assert certificate.kind == "dual"
    assert certificate.y[0] < 0
    ok, msg = validate_certificate([[1.0, 1.0]], b, certificate)
    assert ok, msg


def test_farkas_imaginary_right_hand_side():
    b = qvector([(0, 1, 0, 0)])
    certificate = farkas([[1.0, -1.0]], b)
    assert certificate.kind == "primal"
    assert np.allclose(np.array([[1.0, -1.0]]) @ certificate.gamma, b)


def test_farkas_mixed_sign_has_no_alternative():
    with pytest.raises(FarkasAlternativeError):
        farkas([[1.0]], qvector([(1, -1, 0, 0)]))


def test_certificates_are_exclusive():
    upsilon = [[1.0, 1.0]]
    b = qvector([(-1, 0, 0, 0)])
    dual = farkas(upsilon, b)
    # a primal certificate cannot validate for the same data
    fake = FarkasCertificate(kind="primal", gamma=np.zeros((2, 4)))
    assert validate_certificate(upsilon, b, dual)[0]
    assert not validate_certificate(upsilon, b, fake)[0]


def _component_feasible(upsilon, rhs):
    result = linprog(np.zeros(upsilon.shape[1]), A_eq=upsilon, b_eq=rhs,
                     bounds=[(0, None)] * upsilon.shape[1], method="highs")
    assert result.status in (0, 2)
    return result.status == 0


def _best_ray_value(upsilon, rhs):
    """max rhs^T y over Upsilon^T y <= 0, |y| <= 1; positive exactly when a dual ray exists."""
    n, m = upsilon.shape
    result = linprog(-rhs, A_ub=upsilon.T, b_ub=np.zeros(m), bounds=[(-1, 1)] * n, method="highs")
    assert result.status == 0
    return -result.fun


def test_farkas_exactly_one_alternative_on_random_draws():
    rng = np.random.default_rng(11)
    kinds = {"primal": 0, "dual": 0}
    for trial in range(1000):
        n, m = int(rng.integers(1, 4)), int(rng.integers(1, 5))
        upsilon = rng.integers(-2, 3, size=(n, m)).astype(float)
        b = np.zeros((n, 4))
        if trial % 2:
            # feasible by construction in every component
            b = upsilon @ rng.integers(0, 3, size=(m, 4)).astype(float)
        else:
            b[:, int(rng.integers(0, 4))] = rng.integers(-3, 4, size=n)
        certificate = farkas(upsilon, b)
        ok, msg = validate_certificate(upsilon, b, certificate)
        assert ok, msg
        kinds[certificate.kind] += 1
        feasible = all(_component_feasible(upsilon, b[:, c]) for c in range(4))
        assert (certificate.kind == "primal") == feasible
        if feasible:
            assert all(_best_ray_value(upsilon, b[:, c]) <= 1e-9 for c in range(4))
        else:
            assert any(_best_ray_value(upsilon, b[:, c]) > 1e-9 for c in range(4))
    assert kinds["primal"] and kinds["dual"]


def test_validate_rejects_malformed_certificates():
    upsilon, b = [[1.0]], qvector([(1, 0, 0, 0)])
    both = FarkasCertificate(kind="primal", gamma=np.ones((1, 4)), y=np.ones(1))
    assert not validate_certificate(upsilon, b, both)[0]
    assert not validate_certificate(upsilon, b, FarkasCertificate(kind="other"))[0]
    assert not validate_certificate(upsilon, b, FarkasCertificate(kind="dual", y=np.array([1.0])))[0]


# ---------------- boxes ----------------

def test_projection_example():
    box = QuaternionBox.from_bounds(2, (1, 1, 1, 1))
    y = qvector([(2, 0.5, -1, 0), (0.5, 0.5, 0.5, 0.5)])
    xhat, dist = project_box(box, y)
    assert np.array_equal(xhat, qvector([(1, 0.5, 0, 0), (0.5, 0.5, 0.5, 0.5)]))
    assert dist == pytest.approx(np.sqrt(2.0))


def test_projection_is_nearest_point():
    rng = np.random.default_rng(0)
    box = QuaternionBox(dim=3, upper=(1, 2, 0.5, 1), lower=(-1, 0, -0.5, 0))
    for _ in range(100):
        y = rng.normal(scale=2.0, size=(3, 4))
        xhat, dist = project_box(box, y)
        assert box_contains(box, xhat)
        for _ in range(20):
            other = rng.uniform(box.lower_array, box.upper_array, size=(3, 4))
            assert np.linalg.norm(y - other) >= dist - 1e-12


def test_separation_example():
    box = QuaternionBox.from_bounds(2, (1, 1, 1, 1))
    y = qvector([(2, 0, 0, 0), (0.5, 0, 0, 0)])
    plane = separate_box(box, y)
    assert np.array_equal(plane.p, [1.0, 0.0])
    assert np.allclose(plane.alpha, [1.5, 1.0, 1.0, 1.0])
    ok, msg = check_separation(box, y, plane)
    assert ok, msg


def test_separation_of_nonpositive_point():
    box = QuaternionBox(dim=1, upper=(1, 1, 1, 1), lower=(-1, -1, -1, -1))
    y = qvector([(0, -3, 0, 0)])
    plane = separate_box(box, y)
    ok, msg = check_separation(box, y, plane)
    assert ok, msg


def test_separation_errors():
    box = QuaternionBox.from_bounds(1, (1, 1, 1, 1))
    with pytest.raises(MixedSignError):
        separate_box(box, qvector([(2, -1, 0, 0)]))
    with pytest.raises(PointInsideBoxError):
        separate_box(box, qvector([(0.5, 0, 0, 0)]))


def test_check_separation_rejects_bad_plane():
    box = QuaternionBox.from_bounds(1, (1, 1, 1, 1))
    y = qvector([(2, 0, 0, 0)])
    plane = SeparatingHyperplane(p=np.array([1.0]), alpha=np.array([0.5, 1.0, 1.0, 1.0]))
    assert not check_separation(box, y, plane)[0]


def test_box_must_contain_origin():
    with pytest.raises(InputError):
        QuaternionBox(dim=1, upper=(1, 1, 1, 1), lower=(0.5, 0, 0, 0))


def test_convex_operations():
    a = QuaternionBox.from_bounds(2, (1, 1, 1, 1))
    b = QuaternionBox.from_bounds(2, (2, 0.5, 1, 1))
    ops = convex_ops(a, b)
    assert ops["intersection"].upper == (1.0, 0.5, 1.0, 1.0)
    assert ops["sum"].upper == (3.0, 1.5, 2.0, 2.0)
    assert ops["difference"].upper == (1.0, 1.0, 1.0, 1.0)
    assert ops["difference"].lower == (-2.0, -0.5, -1.0, -1.0)
