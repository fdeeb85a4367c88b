"""
Quaternion Core Module - scalar, vector and matrix quaternion arithmetic.

A quaternion vector (QVector) is a float64 numpy array of shape (n, 4) and a
quaternion matrix (QMatrix) has shape (rows, cols, 4). The trailing axis always
holds the components in (w, x, y, z) order.
"""

import math
from dataclasses import dataclass
from typing import Iterable, Sequence, Tuple

import numpy as np

from services.errors import DimensionMismatchError

COMPONENTS = ("w", "x", "y", "z")

# L(q)[p, r] = sum_c q_c * HAMILTON_BASIS[c, p, r] is the real 4x4 block of
# left multiplication by q.
HAMILTON_BASIS = np.array([
    [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]],
    [[0, -1, 0, 0], [1, 0, 0, 0], [0, 0, 0, -1], [0, 0, 1, 0]],
    [[0, 0, -1, 0], [0, 0, 0, 1], [1, 0, 0, 0], [0, -1, 0, 0]],
    [[0, 0, 0, -1], [0, 0, -1, 0], [0, 1, 0, 0], [1, 0, 0, 0]],
], dtype=float)


@dataclass(frozen=True)
class Quaternion:
    """Quaternion w + x i + y j + z k."""

    w: float = 0.0
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "Quaternion":
        w, x, y, z = (float(v) for v in values)
        return cls(w, x, y, z)

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z], dtype=float)

    def __add__(self, other: "Quaternion") -> "Quaternion":
        return Quaternion(self.w + other.w, self.x + other.x, self.y + other.y, self.z + other.z)

    def __sub__(self, other: "Quaternion") -> "Quaternion":
        return Quaternion(self.w - other.w, self.x - other.x, self.y - other.y, self.z - other.z)

    def __neg__(self) -> "Quaternion":
        return Quaternion(-self.w, -self.x, -self.y, -self.z)

    def __mul__(self, other) -> "Quaternion":
        if isinstance(other, Quaternion):
            return qmul(self, other)
        s = float(other)
        return Quaternion(self.w * s, self.x * s, self.y * s, self.z * s)

    def __rmul__(self, other) -> "Quaternion":
        s = float(other)
        return Quaternion(self.w * s, self.x * s, self.y * s, self.z * s)

    def __abs__(self) -> float:
        return self.modulus()

    def modulus(self) -> float:
        return math.sqrt(self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z)

    def conjugate(self) -> "Quaternion":
        return Quaternion(self.w, -self.x, -self.y, -self.z)

    def inverse(self) -> "Quaternion":
        n2 = self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z
        if n2 == 0.0:
            raise ZeroDivisionError("Zero quaternion has no inverse.")
        c = self.conjugate()
        return Quaternion(c.w / n2, c.x / n2, c.y / n2, c.z / n2)

    def is_pure(self) -> bool:
        return self.w == 0.0

    def is_nonnegative(self, tol: float = 0.0) -> bool:
        return min(self.w, self.x, self.y, self.z) >= -tol


ONE = Quaternion(1.0, 0.0, 0.0, 0.0)
I = Quaternion(0.0, 1.0, 0.0, 0.0)
J = Quaternion(0.0, 0.0, 1.0, 0.0)
K = Quaternion(0.0, 0.0, 0.0, 1.0)


def qmul(a: Quaternion, b: Quaternion) -> Quaternion:
    """Hamilton product a * b."""
    return Quaternion(
        a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
        a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
        a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
        a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
    )


def hamilton_product(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise Hamilton product of two broadcastable (..., 4) arrays."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def left_matrix(q: np.ndarray) -> np.ndarray:
    """
    Real 4x4 block of left multiplication for every quaternion in a (..., 4) array.

    For a single q = (w, x, y, z) this is
    [[w, -x, -y, -z], [x, w, -z, y], [y, z, w, -x], [z, -y, x, w]].
    """
    return np.einsum("...c,cpr->...pr", np.asarray(q, dtype=float), HAMILTON_BASIS)


def qvector(entries: Iterable) -> np.ndarray:
    """Build a QVector from Quaternions or 4-sequences."""
    rows = [e.as_array() if isinstance(e, Quaternion) else np.asarray(e, dtype=float) for e in entries]
    if not rows:
        return np.zeros((0, 4))
    vec = np.vstack(rows)
    if vec.shape[1] != 4:
        raise DimensionMismatchError(f"Quaternion entries need 4 components, got {vec.shape[1]}.")
    return vec


def as_qvector(v) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.ndim == 1 and arr.shape[0] == 4:
        arr = arr.reshape(1, 4)
    if arr.ndim != 2 or arr.shape[1] != 4:
        raise DimensionMismatchError(f"Expected a quaternion vector of shape (n, 4), got {arr.shape}.")
    return arr


def qnorm(v) -> float:
    """Euclidean norm: sqrt of the sum of squares of all 4n real components."""
    arr = np.asarray(v, dtype=float)
    return float(np.sqrt(np.sum(arr * arr)))


def qdist(a, b) -> float:
    """Distance ||a - b|| between two quaternion vectors of equal length."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"Cannot compare quaternion vectors of shapes {a.shape} and {b.shape}.")
    return qnorm(a - b)


def pairwise_qdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix of qdist between every point of a (r, n, 4) and b (g, n, 4)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape[1:] != b.shape[1:]:
        raise DimensionMismatchError(f"Point shapes differ: {a.shape[1:]} vs {b.shape[1:]}.")
    diff = a.reshape(a.shape[0], 1, -1) - b.reshape(1, b.shape[0], -1)
    return np.sqrt(np.sum(diff * diff, axis=-1))


def qcmp_nonneg(v, tol: float = 0.0) -> bool:
    """True iff every real component is >= -tol (partial order X >= 0)."""
    return bool(np.all(np.asarray(v, dtype=float) >= -tol))


def qcmp_pos(v, tol: float = 0.0) -> bool:
    """True iff every real component is > tol (strict order X > 0)."""
    return bool(np.all(np.asarray(v, dtype=float) > tol))


def qgeq(a, b, tol: float = 0.0) -> bool:
    """a >= b in the componentwise partial order."""
    return qcmp_nonneg(np.asarray(a, dtype=float) - np.asarray(b, dtype=float), tol)


def split_components(v) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Split a QVector or QMatrix into its four real parts."""
    arr = np.asarray(v, dtype=float)
    return tuple(np.ascontiguousarray(arr[..., c]) for c in range(4))


def recombine(w, x, y, z) -> np.ndarray:
    """Inverse of split_components."""
    return np.stack([np.asarray(p, dtype=float) for p in (w, x, y, z)], axis=-1)


def real_dot(p: np.ndarray, v: np.ndarray) -> np.ndarray:
    """p^T v for a real vector p (n,) and a quaternion vector v (n, 4); returns (4,)."""
    return np.asarray(p, dtype=float) @ np.asarray(v, dtype=float)
