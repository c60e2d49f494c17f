"""Discrete m-rectifiable measures (weighted atoms with tangent planes) and
the measurements that regularity hypotheses are phrased in."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.spatial import ConvexHull, QhullError, cKDTree

from .geometry import GeometryContext, Plane, unit_ball_volume

log = logging.getLogger(__name__)

PAIRWISE_LIMIT = 10_000


class EmptySupportError(ValueError):
    pass


class RankDeficientError(ValueError):
    pass


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class Ball:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if not self.radius > 0:
            raise ValueError(f"ball radius must be positive, got {self.radius}")

    @classmethod
    def at_origin(cls, d: int, radius: float) -> "Ball":
        return cls(np.zeros(d), radius)


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


class DiscreteVarifold:
    """Quadrature form of an m-rectifiable measure.

    Atom i sits at ``x[i]`` with area ``weight[i]``, multiplicity
    ``multiplicity[i]``, tangent plane spanned by the rows of ``bases[i]`` and
    mean curvature vector ``H[i]``. ``lam`` is the stored L^inf bound on H.
    ``boundary`` marks atoms that sit on the edge of the discretized patch.
    """

    def __init__(self, x, weight, bases, multiplicity=None, H=None, lam=None,
                 boundary=None, *, ortho_tol: float = 1e-8):
        x = np.array(x, dtype=float, ndmin=2)
        n, d = x.shape
        bases = np.array(bases, dtype=float)
        if bases.ndim == 2:
            bases = np.broadcast_to(bases, (n,) + bases.shape).copy()
        if bases.shape[0] != n or bases.shape[2] != d:
            raise ValueError(f"bases shape {bases.shape} incompatible with {n} atoms in R^{d}")
        m = bases.shape[1]
        self.context = GeometryContext(d, m)
        weight = np.broadcast_to(np.asarray(weight, dtype=float), (n,)).copy()
        mult = np.ones(n) if multiplicity is None else np.broadcast_to(
            np.asarray(multiplicity, dtype=float), (n,)).copy()
        H = np.zeros((n, d)) if H is None else np.array(H, dtype=float).reshape(n, d)
        if boundary is None:
            boundary = np.zeros(n, dtype=bool)
        boundary = np.broadcast_to(np.asarray(boundary, dtype=bool), (n,)).copy()

        if n and np.any(weight < 0):
            raise ValueError("atom weights must be non-negative")
        if n and np.any(mult < 1):
            raise ValueError("atom multiplicities must be >= 1")
        if n:
            gram = np.einsum("nij,nkj->nik", bases, bases)
            err = np.abs(gram - np.eye(m)).max()
            if err > ortho_tol:
                raise ValueError(f"atom bases are not orthonormal (deviation {err:.3g})")
        hmax = float(np.linalg.norm(H, axis=1).max()) if n else 0.0
        if lam is None:
            lam = hmax
        if lam < hmax - 1e-12:
            raise ValueError(f"lambda={lam} is below max |H|={hmax}")
        mass = float(np.sum(weight * mult))
        if not np.isfinite(mass):
            raise ValueError("total mass is not finite")

        self.x = _readonly(x)
        self.weight = _readonly(weight)
        self.multiplicity = _readonly(mult)
        self.H = _readonly(H)
        self.bases = _readonly(bases)
        self.boundary = _readonly(boundary)
        self.lam = float(lam)
        self._tree = None
        self._mesh_size = None

    # basic shape -----------------------------------------------------------
    @property
    def d(self) -> int:
        return self.context.d

    @property
    def m(self) -> int:
        return self.context.m

    def __len__(self):
        return self.x.shape[0]

    @property
    def mass_weights(self) -> np.ndarray:
        """weight * multiplicity per atom."""
        return self.weight * self.multiplicity

    @property
    def total_mass(self) -> float:
        return float(self.mass_weights.sum())

    @property
    def mesh_size(self) -> float:
        """Median nearest-neighbour distance between atoms."""
        if self._mesh_size is None:
            if len(self) < 2:
                self._mesh_size = 0.0
            else:
                dist, _ = self.tree.query(self.x, k=2)
                self._mesh_size = float(np.median(dist[:, 1]))
        return self._mesh_size

    @property
    def tree(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree(self.x)
        return self._tree

    def in_ball(self, ball: Ball) -> np.ndarray:
        """Boolean mask of atoms with |x - center| <= radius."""
        if len(self) == 0:
            return np.zeros(0, dtype=bool)
        return np.linalg.norm(self.x - ball.center, axis=1) <= ball.radius

    def distance_to_support(self, p) -> float:
        if len(self) == 0:
            return np.inf
        dist, _ = self.tree.query(np.asarray(p, dtype=float))
        return float(dist)

    def nearest_atom(self, p) -> int:
        _, idx = self.tree.query(np.asarray(p, dtype=float))
        return int(idx)

    # derived varifolds -----------------------------------------------------
    def _replace(self, **kw):
        args = dict(x=self.x, weight=self.weight, bases=self.bases,
                    multiplicity=self.multiplicity, H=self.H, lam=self.lam,
                    boundary=self.boundary)
        args.update(kw)
        return DiscreteVarifold(**args)

    def subset(self, mask) -> "DiscreteVarifold":
        mask = np.asarray(mask)
        return DiscreteVarifold(self.x[mask], self.weight[mask], self.bases[mask].reshape(-1, self.m, self.d),
                                self.multiplicity[mask], self.H[mask], self.lam, self.boundary[mask])

    def translated(self, shift) -> "DiscreteVarifold":
        return self._replace(x=self.x + np.asarray(shift, dtype=float))

    def rotated(self, R) -> "DiscreteVarifold":
        """Apply the orthogonal matrix R to positions, planes and curvature."""
        R = np.asarray(R, dtype=float)
        return self._replace(x=self.x @ R.T, bases=self.bases @ R.T, H=self.H @ R.T)

    def dilated(self, factor: float) -> "DiscreteVarifold":
        """The push-forward under x -> x / factor, rescaled to keep densities."""
        s = 1.0 / factor
        return self._replace(x=self.x * s, weight=self.weight * s ** self.m,
                             H=self.H / s, lam=self.lam / s)

    def combined(self, other: "DiscreteVarifold") -> "DiscreteVarifold":
        if other.context != self.context:
            raise ValueError("cannot combine varifolds of different dimensions")
        return DiscreteVarifold(np.vstack([self.x, other.x]),
                                np.concatenate([self.weight, other.weight]),
                                np.concatenate([self.bases, other.bases]),
                                np.concatenate([self.multiplicity, other.multiplicity]),
                                np.vstack([self.H, other.H]), max(self.lam, other.lam),
                                np.concatenate([self.boundary, other.boundary]))

    def __repr__(self):
        return f"DiscreteVarifold(N={len(self)}, d={self.d}, m={self.m}, lambda={self.lam:.4g})"


def empty_varifold(d: int, m: int) -> DiscreteVarifold:
    return DiscreteVarifold(np.zeros((0, d)), np.zeros(0), np.zeros((0, m, d)))


# measurements --------------------------------------------------------------

def mass_in_ball(V: DiscreteVarifold, B: Ball) -> float:
    return float(V.mass_weights[V.in_ball(B)].sum())


def density_ratio(V: DiscreteVarifold, B: Ball) -> float:
    return mass_in_ball(V, B) / (unit_ball_volume(V.m) * B.radius ** V.m)


def _half_diameter(y: np.ndarray) -> float:
    """Half of the Euclidean diameter of the rows of y."""
    k = y.shape[1]
    if y.shape[0] < 2:
        return 0.0
    if k == 1:
        return 0.5 * float(y.max() - y.min())
    pts = y
    if y.shape[0] > PAIRWISE_LIMIT:
        try:
            pts = y[ConvexHull(y).vertices]
        except QhullError:
            # degenerate (lower-dimensional) normal spread: scan all pairs below
            pts = y
    best = 0.0
    chunk = max(1, 4_000_000 // max(1, pts.shape[0]))
    for start in range(0, pts.shape[0], chunk):
        diff = pts[start:start + chunk, None, :] - pts[None, :, :]
        best = max(best, float(np.sqrt((diff ** 2).sum(-1).max())))
    return 0.5 * best


def normal_coordinates(x, S: Plane) -> np.ndarray:
    return np.asarray(x, dtype=float) @ S.normal_basis().T


def oscillation(V: DiscreteVarifold, S: Plane, B: Ball) -> float:
    """Half the diameter of supp V within B, measured in the normal directions of S."""
    mask = V.in_ball(B)
    if not mask.any():
        raise EmptySupportError(f"empty support in ball(center={B.center.tolist()}, r={B.radius})")
    return _half_diameter(normal_coordinates(V.x[mask], S))


def best_fit_plane(V: DiscreteVarifold, B: Ball) -> Plane:
    """Top-m principal directions of the mass-weighted second moments in B."""
    mask = V.in_ball(B)
    x = V.x[mask]
    w = V.mass_weights[mask]
    if x.shape[0] < V.m + 1 or w.sum() <= 0:
        raise RankDeficientError(f"need at least {V.m + 1} atoms in the ball, found {x.shape[0]}")
    mean = (w[:, None] * x).sum(0) / w.sum()
    y = x - mean
    cov = (w[:, None] * y).T @ y / w.sum()
    evals, evecs = np.linalg.eigh(cov)
    top = evals[::-1][:V.m]
    if top[-1] <= 1e-14 * max(top[0], 1e-300):
        raise RankDeficientError("atoms in the ball lie in a lower-dimensional plane")
    basis = evecs[:, ::-1][:, :V.m].T
    return Plane(basis)


# test fields and the first variation ----------------------------------------

def _smoothstep5(s):
    s = np.clip(s, 0.0, 1.0)
    return s ** 3 * (10 - 15 * s + 6 * s ** 2), 30 * s ** 2 * (1 - s) ** 2


@dataclass(frozen=True)
class RadialCutoff:
    """C^2 cutoff: 1 inside ``inner``, 0 outside ``outer``, quintic in between."""
    center: np.ndarray
    inner: float
    outer: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if not 0 <= self.inner < self.outer:
            raise ValueError("need 0 <= inner < outer")

    def __call__(self, x):
        """Values (N,) and gradients (N, d)."""
        y = np.atleast_2d(x) - self.center
        r = np.linalg.norm(y, axis=1)
        width = self.outer - self.inner
        p, dp = _smoothstep5((r - self.inner) / width)
        val = 1.0 - p
        safe = np.where(r > 0, r, 1.0)
        grad = (-dp / width / safe)[:, None] * y
        grad[r == 0] = 0.0
        return val, grad


class TestField:
    """Polynomial vector field of degree <= 3 times an optional radial cutoff.

    F_j(x) = c_j + A_jk x_k + Q_jkl x_k x_l + T_jklp x_k x_l x_p
    """

    __test__ = False  # not a pytest class

    def __init__(self, c, A=None, Q=None, T=None, cutoff: RadialCutoff | None = None):
        self.c = np.asarray(c, dtype=float)
        d = self.c.size
        self.A = np.zeros((d, d)) if A is None else np.asarray(A, dtype=float)
        self.Q = np.zeros((d, d, d)) if Q is None else np.asarray(Q, dtype=float)
        self.T = np.zeros((d, d, d, d)) if T is None else np.asarray(T, dtype=float)
        self.cutoff = cutoff

    @property
    def d(self):
        return self.c.size

    @classmethod
    def random(cls, d: int, rng: np.random.Generator, cutoff: RadialCutoff | None = None,
               scale: float = 1.0) -> "TestField":
        return cls(scale * rng.standard_normal(d), scale * rng.standard_normal((d, d)),
                   scale * rng.standard_normal((d, d, d)) / 2,
                   scale * rng.standard_normal((d, d, d, d)) / 6, cutoff)

    @classmethod
    def identity(cls, d: int) -> "TestField":
        return cls(np.zeros(d), np.eye(d))

    def _poly(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        val = (self.c + x @ self.A.T
               + np.einsum("jkl,nk,nl->nj", self.Q, x, x)
               + np.einsum("jklp,nk,nl,np->nj", self.T, x, x, x))
        jac = (self.A[None]
               + np.einsum("jkl,nl->njk", self.Q + self.Q.transpose(0, 2, 1), x)
               + np.einsum("jklp,nl,np->njk", self.T + self.T.transpose(0, 2, 1, 3)
                           + self.T.transpose(0, 3, 1, 2), x, x))
        return val, jac

    def __call__(self, x):
        return self.evaluate(x)[0]

    def evaluate(self, x):
        """Field values (N, d) and Jacobians (N, d, d) with J[n, j, k] = dF_j/dx_k."""
        val, jac = self._poly(x)
        if self.cutoff is not None:
            psi, dpsi = self.cutoff(x)
            jac = psi[:, None, None] * jac + val[:, :, None] * dpsi[:, None, :]
            val = psi[:, None] * val
        return val, jac

    def sup_norm_on(self, x) -> float:
        val, jac = self.evaluate(x)
        return float(max(np.abs(val).max(initial=0), np.abs(jac).max(initial=0)))


class FirstVariation(NamedTuple):
    value: float
    reliable: bool


def tangential_divergence(jac, bases) -> np.ndarray:
    """div_S F = sum_i (DF xi_i) . xi_i per atom."""
    return np.einsum("nij,nkj,nik->n", bases, jac, bases)


def first_variation(V: DiscreteVarifold, F: TestField) -> FirstVariation:
    """sum w * theta * div_{T_x M} F(x); flagged unreliable when the support of F
    reaches the boundary of the discretized patch."""
    _, jac = F.evaluate(V.x)
    value = float(np.sum(V.mass_weights * tangential_divergence(jac, V.bases)))
    if F.cutoff is None:
        reliable = not V.boundary.any()
    else:
        near = np.linalg.norm(V.x - F.cutoff.center, axis=1) < F.cutoff.outer
        reliable = not (near & V.boundary).any()
    if not reliable:
        log.warning("test field support meets the patch boundary; first variation unreliable")
    return FirstVariation(value, reliable)


def curvature_pairing(V: DiscreteVarifold, F: TestField) -> float:
    """sum w * theta * H . F(x), the right-hand side of the first variation identity."""
    val, _ = F.evaluate(V.x)
    return float(np.sum(V.mass_weights * np.einsum("nj,nj->n", V.H, val)))


def first_variation_residual(V: DiscreteVarifold, F: TestField) -> float:
    """|delta V(F) + int H . F| relative to sum w theta |div_S F|."""
    _, jac = F.evaluate(V.x)
    div = tangential_divergence(jac, V.bases)
    scale = float(np.sum(V.mass_weights * np.abs(div)))
    if scale == 0:
        return 0.0
    resid = float(np.sum(V.mass_weights * div)) + curvature_pairing(V, F)
    return abs(resid) / scale


# mesh ingestion -------------------------------------------------------------

@dataclass(frozen=True)
class Mesh:
    """Triangle mesh (cells of 3 indices, m = 2) or polyline (cells of 2, m = 1)."""
    vertices: np.ndarray
    cells: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "vertices", np.asarray(self.vertices, dtype=float))
        object.__setattr__(self, "cells", np.asarray(self.cells, dtype=int))

    @property
    def m(self) -> int:
        return self.cells.shape[1] - 1


def _fit_planes(vertices, neighbours, m):
    bases = np.empty((len(vertices), m, vertices.shape[1]))
    for i, nb in enumerate(neighbours):
        pts = vertices[[i] + sorted(nb)]
        y = pts - pts.mean(0)
        _, _, vt = np.linalg.svd(y, full_matrices=False)
        bases[i] = vt[:m]
    return bases


def _triangle_curvature(V, F):
    n = len(V)
    a, b, c = V[F[:, 0]], V[F[:, 1]], V[F[:, 2]]
    area2 = np.linalg.norm(np.cross(b - a, c - a) if V.shape[1] == 3 else
                           _wedge_norm(b - a, c - a)[:, None], axis=-1)
    area = 0.5 * area2
    bad = np.flatnonzero(area < 1e-14)
    if bad.size:
        raise MeshError(f"degenerate triangle(s) with area < 1e-14, first index {bad[0]} "
                        f"(vertices {F[bad[0]].tolist()})")
    lap = np.zeros_like(V)
    mixed = np.zeros(n)
    corners = [(0, 1, 2), (1, 2, 0), (2, 0, 1)]
    cots = []
    for i, j, k in corners:
        # angle at vertex i, opposite edge (j, k)
        u = V[F[:, j]] - V[F[:, i]]
        w = V[F[:, k]] - V[F[:, i]]
        cots.append(np.einsum("ij,ij->i", u, w) / area2)
    for (i, j, k), cot in zip(corners, cots):
        # cot at i weights the edge (j, k)
        e = V[F[:, k]] - V[F[:, j]]
        np.add.at(lap, F[:, j], 0.5 * cot[:, None] * e)
        np.add.at(lap, F[:, k], -0.5 * cot[:, None] * e)
    # mixed Voronoi areas
    dots = []
    for i, j, k in corners:
        u = V[F[:, j]] - V[F[:, i]]
        w = V[F[:, k]] - V[F[:, i]]
        dots.append(np.einsum("ij,ij->i", u, w))
    obtuse_any = np.stack(dots, 1) < 0
    for idx, (i, j, k) in enumerate(corners):
        # Voronoi share of vertex i: (|e_ij|^2 cot(k) + |e_ik|^2 cot(j)) / 8
        eij = np.sum((V[F[:, j]] - V[F[:, i]]) ** 2, 1)
        eik = np.sum((V[F[:, k]] - V[F[:, i]]) ** 2, 1)
        vor = (eij * cots[k] + eik * cots[j]) / 8.0
        share = np.where(obtuse_any.any(1),
                         np.where(obtuse_any[:, idx], area / 2, area / 4), vor)
        np.add.at(mixed, F[:, i], share)
    return lap, mixed


def _wedge_norm(u, w):
    uu = np.einsum("ij,ij->i", u, u)
    ww = np.einsum("ij,ij->i", w, w)
    uw = np.einsum("ij,ij->i", u, w)
    return np.sqrt(np.maximum(uu * ww - uw ** 2, 0.0))


def estimate_mean_curvature(mesh: Mesh) -> DiscreteVarifold:
    """Vertex atoms with mean curvature H = Laplace-Beltrami of the coordinates.

    Cotangent weights and mixed Voronoi areas for triangle meshes, second
    differences for polylines. Boundary vertices inherit the mean of their
    interior neighbours' curvature and are marked in ``boundary``.
    """
    V, C = mesh.vertices, mesh.cells
    n, d = V.shape
    m = mesh.m
    if m not in (1, 2):
        raise MeshError(f"only segment (m=1) and triangle (m=2) meshes are supported, got m={m}")
    neighbours = [set() for _ in range(n)]
    for cell in C:
        for a in cell:
            neighbours[a].update(int(b) for b in cell if b != a)

    if m == 2:
        if d < 3:
            raise MeshError("triangle meshes need ambient dimension >= 3")
        lap, area = _triangle_curvature(V, C)
        edges = np.sort(np.vstack([C[:, [0, 1]], C[:, [1, 2]], C[:, [2, 0]]]), axis=1)
        uniq, counts = np.unique(edges, axis=0, return_counts=True)
        boundary = np.zeros(n, dtype=bool)
        boundary[uniq[counts == 1].ravel()] = True
    else:
        seg = V[C[:, 1]] - V[C[:, 0]]
        length = np.linalg.norm(seg, axis=1)
        bad = np.flatnonzero(length < 1e-14)
        if bad.size:
            raise MeshError(f"degenerate segment {bad[0]} (vertices {C[bad[0]].tolist()})")
        area = np.zeros(n)
        np.add.at(area, C[:, 0], length / 2)
        np.add.at(area, C[:, 1], length / 2)
        unit = seg / length[:, None]
        lap = np.zeros_like(V)
        np.add.at(lap, C[:, 0], unit)
        np.add.at(lap, C[:, 1], -unit)
        degree = np.zeros(n, dtype=int)
        np.add.at(degree, C.ravel(), 1)
        boundary = degree < 2

    used = area > 0
    if not used.all():
        raise MeshError(f"{int((~used).sum())} vertices are not referenced by any cell")
    H = lap / area[:, None]
    for i in np.flatnonzero(boundary):
        inner = [j for j in neighbours[i] if not boundary[j]]
        H[i] = H[inner].mean(0) if inner else 0.0
    bases = _fit_planes(V, neighbours, m)
    return DiscreteVarifold(V, area, bases, None, H, None, boundary)
