"""Planes in the Grassmannian, projections and trace functionals."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

ORTHO_TOL = 1e-10


def unit_ball_volume(m: int) -> float:
    """Volume of the unit ball in R^m."""
    if m < 1:
        raise ValueError(f"unit_ball_volume needs m >= 1, got {m}")
    return math.pi ** (m / 2) / math.gamma(m / 2 + 1)


@dataclass(frozen=True)
class GeometryContext:
    d: int
    m: int

    def __post_init__(self):
        if self.d < 2:
            raise ValueError(f"ambient dimension must be >= 2, got {self.d}")
        if not 1 <= self.m < self.d:
            raise ValueError(f"need 1 <= m < d, got m={self.m}, d={self.d}")

    @property
    def omega_m(self) -> float:
        return unit_ball_volume(self.m)


class Plane:
    """An m-dimensional linear subspace of R^d stored by an orthonormal basis.

    ``basis`` has shape (m, d); rows are the basis vectors.
    """

    __slots__ = ("_basis", "_proj")

    def __init__(self, basis, *, tol: float = ORTHO_TOL):
        b = np.array(basis, dtype=float, ndmin=2)
        if b.ndim != 2 or b.shape[0] >= b.shape[1] + 1 or b.shape[0] < 1:
            raise ValueError(f"basis must have shape (m, d) with 1 <= m <= d, got {b.shape}")
        gram = b @ b.T
        err = np.abs(gram - np.eye(b.shape[0])).max()
        if err > tol:
            raise ValueError(f"basis is not orthonormal (Gram deviation {err:.3g})")
        b.setflags(write=False)
        self._basis = b
        self._proj = None

    @classmethod
    def from_vectors(cls, vectors) -> "Plane":
        """Orthonormalize spanning vectors (rows) with a QR factorization."""
        v = np.array(vectors, dtype=float, ndmin=2)
        q, r = np.linalg.qr(v.T)
        if np.min(np.abs(np.diag(r))) < 1e-12 * max(1.0, np.abs(r).max()):
            raise ValueError("vectors are linearly dependent")
        # keep orientation of the input vectors
        q = q * np.sign(np.diag(r))
        return cls(q.T)

    @classmethod
    def coordinate(cls, d: int, axes) -> "Plane":
        """Plane spanned by the given coordinate axes, e.g. ``coordinate(3, [0, 1])``."""
        return cls(np.eye(d)[list(axes)])

    @property
    def basis(self) -> np.ndarray:
        return self._basis

    @property
    def m(self) -> int:
        return self._basis.shape[0]

    @property
    def d(self) -> int:
        return self._basis.shape[1]

    @property
    def projector(self) -> np.ndarray:
        if self._proj is None:
            p = self._basis.T @ self._basis
            p.setflags(write=False)
            self._proj = p
        return self._proj

    def complement(self) -> "Plane":
        """Orthogonal complement, as a (d - m)-plane."""
        if self.m == self.d:
            raise ValueError("the full space has no proper complement")
        u, _, _ = np.linalg.svd(self._basis.T, full_matrices=True)
        comp = u[:, self.m:].T.copy()
        # canonical signs: largest entry of each normal vector positive,
        # and for hyperplanes (basis, normal) positively oriented
        if comp.shape[0] == 1:
            if np.linalg.det(np.vstack([self._basis, comp])) < 0:
                comp = -comp
        else:
            idx = np.argmax(np.abs(comp), axis=1)
            comp *= np.sign(comp[np.arange(len(comp)), idx])[:, None]
        return Plane(comp)

    def normal_basis(self) -> np.ndarray:
        return self.complement().basis

    def coords(self, x) -> np.ndarray:
        """Tangential coordinates of x (or rows of x) in the stored basis."""
        return np.asarray(x, dtype=float) @ self._basis.T

    def __eq__(self, other):
        if not isinstance(other, Plane) or other.d != self.d or other.m != self.m:
            return NotImplemented
        return plane_distance(self, other) <= 1e-12

    __hash__ = None

    def __repr__(self):
        return f"Plane(m={self.m}, d={self.d}, basis={self._basis.tolist()!r})"


def project(S: Plane, x):
    """Split x (a vector or an (N, d) array) into tangential and normal parts."""
    x = np.asarray(x, dtype=float)
    tangential = x @ S.projector
    return tangential, x - tangential


def plane_distance(S: Plane, T: Plane) -> float:
    """Operator norm of the difference of the orthogonal projectors."""
    if S.d != T.d or S.m != T.m:
        raise ValueError(f"dimension mismatch: Gr({S.m},{S.d}) vs Gr({T.m},{T.d})")
    return float(np.linalg.norm(S.projector - T.projector, 2))


def _check_square(A, d):
    A = np.asarray(A, dtype=float)
    if A.shape != (d, d):
        raise ValueError(f"matrix shape {A.shape} does not match ambient dimension {d}")
    return A


def trace_over_plane(A, S: Plane) -> float:
    """sum_i A xi_i . xi_i over the orthonormal basis of S."""
    A = _check_square(A, S.d)
    b = S.basis
    return float(np.einsum("ij,jk,ik->", b, A, b))


def trace_m_min(A, m: int) -> float:
    """Sum of the m smallest eigenvalues of the symmetric matrix A."""
    A = np.asarray(A, dtype=float)
    d = A.shape[0]
    if not 1 <= m <= d:
        raise ValueError(f"m={m} out of range for a {d}x{d} matrix")
    w = np.linalg.eigvalsh(0.5 * (A + A.T))
    return float(np.sort(w)[:m].sum())


def random_plane(d: int, m: int, rng: np.random.Generator) -> Plane:
    """Haar-distributed random m-plane."""
    g = rng.standard_normal((d, m))
    q, r = np.linalg.qr(g)
    return Plane((q * np.sign(np.diag(r))).T)


def rotation_between(u, v) -> np.ndarray:
    """Rotation matrix taking unit vector u to unit vector v (identity on the rest)."""
    u = np.asarray(u, float) / np.linalg.norm(u)
    v = np.asarray(v, float) / np.linalg.norm(v)
    c = float(u @ v)
    w = v - c * u
    s = np.linalg.norm(w)
    d = u.size
    if s < 1e-15:
        if c > 0:
            return np.eye(d)
        # 180 degrees: reflect through a perpendicular direction twice
        p = np.eye(d)[np.argmin(np.abs(u))]
        p = p - (p @ u) * u
        p /= np.linalg.norm(p)
        return np.eye(d) - 2 * np.outer(u, u) - 2 * np.outer(p, p)
    w /= s
    R = np.eye(d) + (c - 1) * (np.outer(u, u) + np.outer(w, w)) + s * (np.outer(w, u) - np.outer(u, w))
    return R
