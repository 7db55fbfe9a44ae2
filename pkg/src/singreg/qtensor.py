"""Symmetric traceless 3x3 order-parameter tensors and the eigenvalue body K.

A Q-tensor is stored through its five independent coordinates

    q = (Q11, Q21, Q22, Q31, Q32),    Q33 = -Q11 - Q22,

so the matrix <-> coordinate maps are exact inverses of each other.  The
admissible body is

    K = {Q : -1/3 <= lambda_i(Q) <= 2/3},

and the distance-type function used throughout the package is the
eigenvalue margin ``min(lambda_min + 1/3, 2/3 - lambda_max)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import InvalidDirection, InvalidQTensor

LOWER = -1.0 / 3.0
UPPER = 2.0 / 3.0
DEFAULT_BOUNDARY_TOL = 1e-12
_ISOTROPIC_TOL = 1e-14

# (row, col) of each coordinate; index 2,2 is implied by tracelessness.
_COMPONENT_INDEX = ((0, 0), (1, 0), (1, 1), (2, 0), (2, 1))


def _basis():
    out = np.zeros((5, 3, 3))
    for j, (r, c) in enumerate(_COMPONENT_INDEX):
        out[j, r, c] = 1.0
        out[j, c, r] = 1.0
    out[0, 2, 2] = -1.0
    out[2, 2, 2] = -1.0
    return out


#: Matrices B_j with Q = sum_j q_j B_j.
BASIS = _basis()
BASIS.setflags(write=False)
#: Gram matrix G_ij = B_i : B_j, so that |Q|_F^2 = q^T G q.
GRAM = np.einsum("iab,jab->ij", BASIS, BASIS)
GRAM.setflags(write=False)


def matrices_from_components(q):
    """Map an array of 5-vectors ``(..., 5)`` to matrices ``(..., 3, 3)``."""
    q = np.asarray(q, dtype=float)
    m = np.empty(q.shape[:-1] + (3, 3))
    m[..., 0, 0] = q[..., 0]
    m[..., 1, 0] = m[..., 0, 1] = q[..., 1]
    m[..., 1, 1] = q[..., 2]
    m[..., 2, 0] = m[..., 0, 2] = q[..., 3]
    m[..., 2, 1] = m[..., 1, 2] = q[..., 4]
    m[..., 2, 2] = -q[..., 0] - q[..., 2]
    return m


def components_from_matrices(m):
    """Inverse of :func:`matrices_from_components` (reads the lower triangle)."""
    m = np.asarray(m, dtype=float)
    return np.stack([m[..., r, c] for r, c in _COMPONENT_INDEX], axis=-1)


def eigenvalues_traceless(m):
    """Descending eigenvalues of symmetric traceless matrices ``(..., 3, 3)``.

    Uses the trigonometric solution of the characteristic polynomial
    ``lambda^3 - J2 lambda - J3 = 0`` with ``J2 = tr(Q^2)/2`` and ``J3 = det Q``.
    Diagonal inputs take their diagonal directly and near-zero inputs return
    zeros.
    """
    m = np.asarray(m, dtype=float)
    a11, a22, a33 = m[..., 0, 0], m[..., 1, 1], m[..., 2, 2]
    a21, a31, a32 = m[..., 1, 0], m[..., 2, 0], m[..., 2, 1]
    off = a21 * a21 + a31 * a31 + a32 * a32
    j2 = 0.5 * (a11 * a11 + a22 * a22 + a33 * a33) + off
    j3 = (
        a11 * (a22 * a33 - a32 * a32)
        - a21 * (a21 * a33 - a32 * a31)
        + a31 * (a21 * a32 - a22 * a31)
    )
    scale = np.abs(m).max(axis=(-1, -2)) if m.ndim > 2 else np.abs(m).max()
    safe_j2 = np.where(j2 > 0, j2, 1.0)
    # Subnormal j2 can make this 0/0; the isotropic guard below discards it.
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        cos3t = 1.5 * math.sqrt(3.0) * j3 / safe_j2 ** 1.5
    theta = np.arccos(np.clip(np.nan_to_num(cos3t), -1.0, 1.0)) / 3.0
    amp = 2.0 * np.sqrt(safe_j2 / 3.0)
    l1 = amp * np.cos(theta)
    l3 = amp * np.cos(theta + 2.0 * math.pi / 3.0)
    l2 = -l1 - l3
    trig = np.stack([l1, l2, l3], axis=-1)

    diag = -np.sort(-np.stack([a11, a22, a33], axis=-1), axis=-1)
    out = np.where((off == 0.0)[..., None], diag, trig)
    return np.where((scale < _ISOTROPIC_TOL)[..., None], 0.0, out)


def margin_from_eigenvalues(lam):
    """Signed eigenvalue margin of descending eigenvalue triples ``(..., 3)``."""
    lam = np.asarray(lam, dtype=float)
    return np.minimum(lam[..., 2] - LOWER, UPPER - lam[..., 0])


def component_margin(q):
    """Eigenvalue margin evaluated directly on 5-coordinate arrays."""
    return margin_from_eigenvalues(eigenvalues_traceless(matrices_from_components(q)))


class EigenTriple(NamedTuple):
    largest: float
    middle: float
    smallest: float


class Status(enum.Enum):
    INTERIOR = "Interior"
    BOUNDARY = "Boundary"
    EXTERIOR = "Exterior"


@dataclass(frozen=True)
class BodyMembership:
    status: Status
    margin: float


@dataclass(frozen=True, eq=False)
class QTensor:
    """Immutable Q-tensor held by its five coordinates."""

    q: np.ndarray

    def __post_init__(self):
        q = np.array(self.q, dtype=float).reshape(5)
        if not np.all(np.isfinite(q)):
            raise InvalidQTensor("Q-tensor components must be finite")
        q.setflags(write=False)
        object.__setattr__(self, "q", q)

    @classmethod
    def from_matrix(cls, m, sym_tol=1e-12):
        """Build from a 3x3 array, checking symmetry and tracelessness."""
        m = np.asarray(m, dtype=float)
        if m.shape != (3, 3):
            raise InvalidQTensor(f"expected a 3x3 matrix, got shape {m.shape}")
        size = 1.0 + np.abs(m).max()
        if np.abs(m - m.T).max() > sym_tol * size:
            raise InvalidQTensor("matrix is not symmetric")
        if abs(np.trace(m)) > max(1e-14, sym_tol) * size:
            raise InvalidQTensor(f"matrix is not traceless (trace {np.trace(m):.3e})")
        return cls(components_from_matrices(0.5 * (m + m.T)))

    @property
    def matrix(self):
        return matrices_from_components(self.q)

    def to_components(self):
        return self.q.copy()

    def eigenvalues(self):
        return eigenvalues(self)

    def membership(self, boundary_tol=DEFAULT_BOUNDARY_TOL):
        return membership(self, boundary_tol)

    def frobenius(self):
        return float(np.sqrt(self.q @ GRAM @ self.q))

    def rotated(self, rot):
        rot = np.asarray(rot, dtype=float)
        return QTensor.from_matrix(rot @ self.matrix @ rot.T, sym_tol=1e-10)

    def __eq__(self, other):
        return isinstance(other, QTensor) and np.array_equal(self.q, other.q)

    def __hash__(self):
        return hash(self.q.tobytes())

    def __repr__(self):
        return f"QTensor({np.array2string(self.q, precision=6)})"


def from_components(q):
    return QTensor(q)


def to_components(Q):
    return Q.to_components()


def _as_qtensor(Q):
    if isinstance(Q, QTensor):
        return Q
    arr = np.asarray(Q, dtype=float)
    if arr.shape == (5,):
        return QTensor(arr)
    return QTensor.from_matrix(arr)


def eigenvalues(Q):
    Q = _as_qtensor(Q)
    return EigenTriple(*(float(v) for v in eigenvalues_traceless(Q.matrix)))


def membership(Q, boundary_tol=DEFAULT_BOUNDARY_TOL):
    if boundary_tol < 0:
        raise ValueError("boundary_tol must be non-negative")
    lam = eigenvalues(Q)
    margin = float(margin_from_eigenvalues(np.array(lam)))
    if margin > boundary_tol:
        status = Status.INTERIOR
    elif margin >= -boundary_tol:
        status = Status.BOUNDARY
    else:
        status = Status.EXTERIOR
    return BodyMembership(status, margin)


def uniaxial(s, n):
    """Return ``s (n n^T - I/3)`` for a unit vector ``n``."""
    n = np.asarray(n, dtype=float).reshape(3)
    if abs(np.linalg.norm(n) - 1.0) > 1e-12:
        raise InvalidDirection(f"director must have unit length, got |n| = {np.linalg.norm(n)!r}")
    m = s * (np.outer(n, n) - np.eye(3) / 3.0)
    return QTensor(components_from_matrices(m))


class QTensorMargin:
    """Eigenvalue margin as a function of the five coordinates.

    The margin is concave; value, gradient and Hessian follow first and
    second order eigenvalue perturbation theory on whichever branch
    (lowest or highest eigenvalue) is active.  Derivatives are undefined
    where the active eigenvalue is degenerate or where both branches tie.
    """

    dim = 5
    max_margin = 1.0 / 3.0

    @property
    def anchor(self):
        return np.zeros(5)

    def bounding_box(self):
        return -np.full(5, UPPER), np.full(5, UPPER)

    def value(self, z):
        return component_margin(z)

    def _active(self, z):
        m = matrices_from_components(z)
        w, v = np.linalg.eigh(m)
        low = w[..., 0] - LOWER
        high = UPPER - w[..., 2]
        use_low = low <= high
        idx = np.where(use_low, 0, 2)
        sign = np.where(use_low, 1.0, -1.0)
        return w, v, idx, sign

    def gradient(self, z):
        z = np.asarray(z, dtype=float)
        w, v, idx, sign = self._active(z)
        vec = np.take_along_axis(v, idx[..., None, None], axis=-1)[..., 0]
        return sign[..., None] * np.einsum("...a,jab,...b->...j", vec, BASIS, vec)

    def hessian(self, z):
        z = np.asarray(z, dtype=float)
        w, v, idx, sign = self._active(z)
        vi = np.take_along_axis(v, idx[..., None, None], axis=-1)[..., 0]
        li = np.take_along_axis(w, idx[..., None], axis=-1)[..., 0]
        out = np.zeros(z.shape[:-1] + (5, 5))
        for j in range(3):
            vj = v[..., :, j]
            gap = li - w[..., j]
            # The active eigenvalue itself contributes nothing.
            ok = idx != j
            safe_gap = np.where(ok, gap, 1.0)
            c = np.einsum("...a,kab,...b->...k", vi, BASIS, vj)
            term = 2.0 * c[..., :, None] * c[..., None, :] / safe_gap[..., None, None]
            out += np.where(ok[..., None, None], term, 0.0)
        return sign[..., None, None] * out
