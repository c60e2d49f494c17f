"""Analytic surfaces sampled as discrete varifolds, plus a few test meshes.

Every sampler places atoms at quadrature nodes with (near) exact area
weights, tangent planes and mean curvature taken from the closed-form
geometry, so oracles are available for the measured quantities.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geometry import Plane
from .varifold import DiscreteVarifold, Mesh


def _orthonormal_rows(vectors):
    """Gram-Schmidt on stacks of row vectors, shape (N, m, d)."""
    out = np.array(vectors, dtype=float)
    for i in range(out.shape[1]):
        for j in range(i):
            out[:, i] -= np.einsum("nd,nd->n", out[:, i], out[:, j])[:, None] * out[:, j]
        out[:, i] /= np.linalg.norm(out[:, i], axis=1)[:, None]
    return out


# parameter-domain quadratures ----------------------------------------------

def cartesian_nodes(m: int, half_width: float, h: float, *, disc: bool = False):
    """Cell centres of a uniform grid on [-L, L]^m containing the origin as a node.

    Returns nodes (N, m), cell measures (N,) and a boundary mask (outermost layer).
    """
    k = int(round(half_width / h))
    ticks = np.arange(-k, k + 1) * h
    grids = np.meshgrid(*([ticks] * m), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=1)
    if disc:
        r = np.linalg.norm(nodes, axis=1)
        nodes = nodes[r <= k * h + 1e-12]
        boundary = np.linalg.norm(nodes, axis=1) > (k - 1) * h
    else:
        boundary = (np.abs(nodes) >= k * h - 1e-12).any(axis=1)
    return nodes, np.full(len(nodes), h ** m), boundary


def polar_nodes(m: int, radius: float, n_rings: int, *, geometric: bool = False,
                r_min: float | None = None, phase: float = 0.0):
    """Ring quadrature of the m-disc (m in {1, 2}) centred at the origin.

    Ring edges are uniform, or geometric between ``r_min`` and ``radius``. The
    innermost disc is represented by one node at the origin. Cell measures are
    the exact flat areas. Returns nodes, measures, boundary mask, ring edges.
    """
    if geometric:
        r_min = radius / 2 ** n_rings if r_min is None else r_min
        edges = np.concatenate([[0.0], np.geomspace(r_min, radius, n_rings)])
    else:
        edges = np.linspace(0.0, radius, n_rings + 1)
    if m == 1:
        nodes = [0.0]
        meas = [2 * edges[1]]
        for k in range(1, len(edges) - 1):
            mid = 0.5 * (edges[k] + edges[k + 1])
            nodes += [mid, -mid]
            meas += [edges[k + 1] - edges[k]] * 2
        nodes = np.array(nodes)[:, None]
        meas = np.array(meas)
        boundary = np.abs(nodes[:, 0]) >= 0.5 * (edges[-2] + edges[-1]) - 1e-14
        return nodes, meas, boundary, edges
    if m != 2:
        raise ValueError("polar_nodes supports m in {1, 2}")
    pts = [np.zeros((1, 2))]
    meas = [np.array([np.pi * edges[1] ** 2])]
    bnd = [np.array([len(edges) == 2])]
    for k in range(1, len(edges) - 1):
        a, b = edges[k], edges[k + 1]
        mid = np.sqrt(0.5 * (a * a + b * b))  # splits the ring area in half
        n_ang = max(6, int(round(2 * np.pi * mid / (b - a))))
        ang = phase + (np.arange(n_ang) + 0.5 * (k % 2)) * 2 * np.pi / n_ang
        pts.append(mid * np.stack([np.cos(ang), np.sin(ang)], 1))
        meas.append(np.full(n_ang, np.pi * (b * b - a * a) / n_ang))
        bnd.append(np.full(n_ang, k == len(edges) - 2))
    return np.vstack(pts), np.concatenate(meas), np.concatenate(bnd), edges


def dyadic_polar_nodes(m: int, radius: float, octaves: int = 8, per_octave: int = 8):
    """Geometric ring quadrature whose ring edges include radius / 2^k for
    k = 0..octaves, so every dyadic disc sees the same relative sampling."""
    return polar_nodes(m, radius, octaves * per_octave + 1, geometric=True,
                       r_min=radius / 2 ** octaves)


# graphs of codimension one ---------------------------------------------------

@dataclass
class GraphSurface:
    """Graph x_{m+1} = u(x') over the first m coordinate axes of R^{m+1}.

    ``u``, ``grad`` and ``hess`` take parameter points of shape (N, m).
    """
    m: int
    u: Callable
    grad: Callable
    hess: Callable
    minimal: bool = False

    @property
    def d(self):
        return self.m + 1

    def points(self, p):
        p = np.atleast_2d(p)
        return np.column_stack([p, self.u(p)])

    def mean_curvature(self, p):
        if self.minimal:
            return np.zeros((len(p), self.d))
        g = self.grad(p)
        hs = self.hess(p)
        W2 = 1 + np.einsum("ni,ni->n", g, g)
        W = np.sqrt(W2)
        lap = np.trace(hs, axis1=1, axis2=2)
        ghg = np.einsum("ni,nij,nj->n", g, hs, g)
        div = (lap - ghg / W2) / W
        nu = np.column_stack([-g, np.ones(len(p))]) / W[:, None]
        return div[:, None] * nu

    def varifold(self, nodes, measures, boundary=None, multiplicity=None) -> DiscreteVarifold:
        g = self.grad(nodes)
        W = np.sqrt(1 + np.einsum("ni,ni->n", g, g))
        tangents = np.zeros((len(nodes), self.m, self.d))
        for i in range(self.m):
            tangents[:, i, i] = 1.0
            tangents[:, i, -1] = g[:, i]
        bases = _orthonormal_rows(tangents)
        return DiscreteVarifold(self.points(nodes), measures * W, bases, multiplicity,
                                self.mean_curvature(nodes), None, boundary)


def affine_graph(m: int, slope, offset: float = 0.0) -> GraphSurface:
    slope = np.broadcast_to(np.asarray(slope, dtype=float), (m,))
    return GraphSurface(
        m,
        lambda p: offset + np.atleast_2d(p) @ slope,
        lambda p: np.broadcast_to(slope, (len(p), m)).copy(),
        lambda p: np.zeros((len(p), m, m)),
        minimal=True,
    )


def sphere_cap_graph(m: int, rho: float) -> GraphSurface:
    """Lower cap of the sphere of radius rho centred at rho * e_{m+1}, tangent at 0."""
    def u(p):
        return rho - np.sqrt(rho ** 2 - np.sum(np.atleast_2d(p) ** 2, 1))

    def grad(p):
        s = np.sqrt(rho ** 2 - np.sum(p ** 2, 1))
        return p / s[:, None]

    def hess(p):
        s = np.sqrt(rho ** 2 - np.sum(p ** 2, 1))
        return (np.eye(m)[None] / s[:, None, None]
                + np.einsum("ni,nj->nij", p, p) / s[:, None, None] ** 3)

    surf = GraphSurface(m, u, grad, hess)

    def exact_H(p):
        x = surf.points(p)
        centre = np.zeros(m + 1)
        centre[-1] = rho
        return (m / rho) * (centre - x) / rho

    surf.mean_curvature = exact_H
    return surf


def quadratic_graph(A) -> GraphSurface:
    """u(x') = x'^T A x' / 2 for a symmetric m x m matrix A."""
    A = np.asarray(A, dtype=float)
    m = A.shape[0]
    return GraphSurface(
        m,
        lambda p: 0.5 * np.einsum("ni,ij,nj->n", np.atleast_2d(p), A, np.atleast_2d(p)),
        lambda p: p @ A.T,
        lambda p: np.broadcast_to(A, (len(p), m, m)).copy(),
    )


def polynomial_graph(coeffs: dict) -> GraphSurface:
    """2-d graph u(x, y) = sum c_ij x^i y^j from a {(i, j): c} mapping."""
    def u(p):
        return sum(c * p[:, 0] ** i * p[:, 1] ** j for (i, j), c in coeffs.items())

    def grad(p):
        gx = sum(c * i * p[:, 0] ** max(i - 1, 0) * p[:, 1] ** j for (i, j), c in coeffs.items() if i)
        gy = sum(c * j * p[:, 0] ** i * p[:, 1] ** max(j - 1, 0) for (i, j), c in coeffs.items() if j)
        return np.column_stack([np.broadcast_to(gx, len(p)), np.broadcast_to(gy, len(p))])

    def hess(p):
        n = len(p)
        hxx = sum(c * i * (i - 1) * p[:, 0] ** max(i - 2, 0) * p[:, 1] ** j
                  for (i, j), c in coeffs.items() if i > 1)
        hyy = sum(c * j * (j - 1) * p[:, 0] ** i * p[:, 1] ** max(j - 2, 0)
                  for (i, j), c in coeffs.items() if j > 1)
        hxy = sum(c * i * j * p[:, 0] ** (i - 1) * p[:, 1] ** (j - 1)
                  for (i, j), c in coeffs.items() if i and j)
        out = np.zeros((n, 2, 2))
        out[:, 0, 0] = hxx
        out[:, 1, 1] = hyy
        out[:, 0, 1] = out[:, 1, 0] = hxy
        return out

    return GraphSurface(2, u, grad, hess)


def random_harmonic_polynomial(rng: np.random.Generator, degree: int = 3) -> dict:
    """Coefficients of a random real harmonic polynomial sum a_k Re z^k + b_k Im z^k."""
    from math import comb

    coeffs: dict = {}
    for k in range(1, degree + 1):
        a, b = rng.standard_normal(2)
        for j in range(k + 1):
            # z^k = sum comb(k, j) x^(k-j) (i y)^j
            c = comb(k, j)
            if j % 4 == 0:
                re, im = c, 0
            elif j % 4 == 1:
                re, im = 0, c
            elif j % 4 == 2:
                re, im = -c, 0
            else:
                re, im = 0, -c
            key = (k - j, j)
            coeffs[key] = coeffs.get(key, 0.0) + a * re + b * im
    return coeffs


# closed surfaces -------------------------------------------------------------

def sphere_varifold(m: int, rho: float = 1.0, n_rings: int = 100, *, centre=None,
                    pole=None) -> DiscreteVarifold:
    """Round m-sphere (m in {1, 2}) in R^{m+1} with exact area weights.

    For m = 2 the nodes are rings equally spaced in chord distance from
    ``pole`` (default: the point of the sphere in direction -e_3 from the
    centre); since area{chord <= c} = pi c^2, every ambient ball centred at the
    pole whose radius is a ring edge carries exactly its flat-disc mass.
    For m = 1 the nodes are equally spaced in angle, one of them at the pole.
    """
    d = m + 1
    centre = np.zeros(d) if centre is None else np.asarray(centre, dtype=float)
    if m == 1:
        n = n_rings
        ang = np.arange(n) * 2 * np.pi / n - np.pi / 2
        unit = np.stack([np.cos(ang), np.sin(ang)], 1)
        bases = np.stack([-unit[:, 1], unit[:, 0]], 1)[:, None, :]
        weight = np.full(n, 2 * np.pi * rho / n)
    elif m == 2:
        edges = np.linspace(0.0, 2 * rho, n_rings + 1)
        units = [np.array([[0.0, 0.0, -1.0]])]
        weight = [np.array([np.pi * edges[1] ** 2])]
        for k in range(1, n_rings):
            a, b = edges[k], edges[k + 1]
            c = np.sqrt(0.5 * (a * a + b * b))
            z = -1 + c * c / (2 * rho * rho)  # height on the unit sphere
            s = np.sqrt(max(1 - z * z, 0.0))
            width = (b - a)
            n_ang = max(6, int(round(2 * np.pi * rho * s / width)))
            ang = (np.arange(n_ang) + 0.5 * (k % 2)) * 2 * np.pi / n_ang
            units.append(np.stack([s * np.cos(ang), s * np.sin(ang), np.full(n_ang, z)], 1))
            weight.append(np.full(n_ang, np.pi * (b * b - a * a) / n_ang))
        unit = np.vstack(units)
        weight = np.concatenate(weight)
        # tangent frame: e_phi and e_theta
        e_phi = np.stack([-unit[:, 1], unit[:, 0], np.zeros(len(unit))], 1)
        small = np.linalg.norm(e_phi, axis=1) < 1e-12
        e_phi[small] = [1.0, 0.0, 0.0]
        e_phi /= np.linalg.norm(e_phi, axis=1)[:, None]
        e_th = np.cross(unit, e_phi)
        bases = np.stack([e_phi, e_th], 1)
    else:
        raise ValueError("sphere_varifold supports m in {1, 2}")
    if pole is not None:
        from .geometry import rotation_between
        R = rotation_between(-np.eye(d)[-1], pole)
        unit = unit @ R.T
        bases = bases @ R.T
    x = centre + rho * unit
    H = -(m / rho) * unit
    return DiscreteVarifold(x, weight, bases, None, H)


def catenoid_varifold(a: float = 1.0, z_max: float = 0.6, h: float = 0.02) -> DiscreteVarifold:
    """Catenoid patch r = a cosh(z / a), |z| <= z_max, in R^3 (H = 0).

    Cell-midpoint nodes in (theta, z) with exact cell areas; the node
    (theta, z) = (0, 0) sits at (a, 0, 0).
    """
    kz = int(round(z_max / h))
    z_edges = (np.arange(-kz, kz + 2) - 0.5) * h
    z_edges = np.clip(z_edges, -z_max, z_max)
    z_mid = np.arange(-kz, kz + 1) * h
    n_th = max(8, int(round(2 * np.pi * a / h)))
    th = np.arange(n_th) * 2 * np.pi / n_th
    dth = 2 * np.pi / n_th

    def prim(z):  # integral of a cosh^2(z/a) dz
        return a * (z / 2 + a * np.sinh(2 * z / a) / 4)

    cell_z = prim(z_edges[1:]) - prim(z_edges[:-1])
    T, Z = np.meshgrid(th, z_mid, indexing="ij")
    Wz = np.broadcast_to(cell_z, T.shape)
    T, Z, Wz = T.ravel(), Z.ravel(), Wz.ravel()
    r = a * np.cosh(Z / a)
    x = np.stack([r * np.cos(T), r * np.sin(T), Z], 1)
    e_th = np.stack([-np.sin(T), np.cos(T), np.zeros_like(T)], 1)
    dr = np.sinh(Z / a)
    e_z = np.stack([dr * np.cos(T), dr * np.sin(T), np.ones_like(T)], 1)
    e_z /= np.linalg.norm(e_z, axis=1)[:, None]
    bases = np.stack([e_th, e_z], 1)
    boundary = np.abs(Z) >= kz * h - 1e-12
    return DiscreteVarifold(x, Wz * dth, bases, None, None, 0.0, boundary)


def flat_varifold(d: int, m: int, half_width: float, h: float, *, plane: Plane | None = None,
                  offset=None, disc: bool = True, polar: bool = False, n_rings: int | None = None,
                  multiplicity: float = 1.0) -> DiscreteVarifold:
    """Unit-density piece of an affine m-plane (default: first m axes through 0)."""
    if polar:
        nodes, meas, bnd, _ = polar_nodes(m, half_width, n_rings or int(round(half_width / h)))
    else:
        nodes, meas, bnd = cartesian_nodes(m, half_width, h, disc=disc)
    plane = plane or Plane.coordinate(d, range(m))
    x = nodes @ plane.basis
    if offset is not None:
        x = x + np.asarray(offset, dtype=float)
    return DiscreteVarifold(x, meas, plane.basis, multiplicity, None, 0.0, bnd)


# meshes -------------------------------------------------------------------------

def catenoid_mesh(a: float = 1.0, z_max: float = 0.6, h: float = 0.02) -> Mesh:
    """Triangulated catenoid patch on a (theta, z) grid of spacing about h."""
    kz = int(round(z_max / h))
    z = np.arange(-kz, kz + 1) * h
    n_th = max(8, int(round(2 * np.pi * a / h)))
    th = np.arange(n_th) * 2 * np.pi / n_th
    T, Z = np.meshgrid(th, z, indexing="ij")
    r = a * np.cosh(Z / a)
    verts = np.stack([r * np.cos(T), r * np.sin(T), Z], -1).reshape(-1, 3)
    idx = np.arange(n_th * len(z)).reshape(n_th, len(z))
    nxt = np.roll(idx, -1, 0)
    p, q, s, t = idx[:, :-1].ravel(), nxt[:, :-1].ravel(), nxt[:, 1:].ravel(), idx[:, 1:].ravel()
    faces = np.vstack([np.stack([p, q, s], 1), np.stack([p, s, t], 1)])
    return Mesh(verts, faces)


def icosphere(subdivisions: int = 4, rho: float = 1.0) -> Mesh:
    t = (1 + 5 ** 0.5) / 2
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
             (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
             (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
             (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(v, float) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache: dict = {}
        new_faces = []

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                v = verts[i] + verts[j]
                verts.append(v / np.linalg.norm(v))
                cache[key] = len(verts) - 1
            return cache[key]

        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return Mesh(rho * np.array(verts), np.array(faces))


def grid_mesh(half_width: float, h: float, height: Callable | None = None) -> Mesh:
    """Triangulated square [-L, L]^2 in R^3, optionally lifted as a graph."""
    k = int(round(half_width / h))
    ticks = np.arange(-k, k + 1) * h
    X, Y = np.meshgrid(ticks, ticks, indexing="ij")
    p = np.stack([X.ravel(), Y.ravel()], 1)
    z = np.zeros(len(p)) if height is None else height(p)
    n = len(ticks)
    idx = np.arange(n * n).reshape(n, n)
    a, b = idx[:-1, :-1].ravel(), idx[1:, :-1].ravel()
    c, e = idx[1:, 1:].ravel(), idx[:-1, 1:].ravel()
    faces = np.vstack([np.stack([a, b, c], 1), np.stack([a, c, e], 1)])
    return Mesh(np.column_stack([p, z]), faces)


def circle_mesh(rho: float, n: int, centre=(0.0, 0.0)) -> Mesh:
    ang = np.arange(n) * 2 * np.pi / n
    pts = np.asarray(centre) + rho * np.stack([np.cos(ang), np.sin(ang)], 1)
    cells = np.stack([np.arange(n), (np.arange(n) + 1) % n], 1)
    return Mesh(pts, cells)
