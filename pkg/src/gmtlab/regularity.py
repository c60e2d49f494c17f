"""Excess, improvement of flatness, graph extraction, the viscosity touching
diagnostic and the elliptic maximum principle."""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import InterpolatedUnivariateSpline, RectBivariateSpline
from scipy.sparse.linalg import spsolve

from .geometry import Plane, plane_distance, random_plane, trace_m_min, trace_over_plane
from .monotonicity import DENSITY_BOUND, density_bound_check
from .varifold import (Ball, DiscreteVarifold, EmptySupportError, best_fit_plane,
                       normal_coordinates, oscillation)

log = logging.getLogger(__name__)


class MultiValuedError(ValueError):
    """Two or more sheets inside one graph cell."""


class SupportGapError(ValueError):
    """A cell of the graph domain carries no support."""


class NotALocalMaxError(ValueError):
    pass


@dataclass(frozen=True)
class FlatnessParams:
    eta: float = 0.25
    alpha: float = 0.5
    eps0: float = 0.02
    c: float = 0.1

    def __post_init__(self):
        for name in ("eta", "alpha", "eps0"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if self.c <= 0:
            raise ValueError("c must be positive")


# excess and improvement of flatness ----------------------------------------------

def excess(V: DiscreteVarifold, B: Ball, C_pen: float, lam: float | None = None) -> float:
    """osc over the best-fit plane divided by the radius, plus C_pen Lambda r."""
    if not V.in_ball(B).any():
        raise EmptySupportError("empty ball")
    lam = V.lam if lam is None else lam
    T = best_fit_plane(V, B)
    return oscillation(V, T, B) / B.radius + C_pen * lam * B.radius


@dataclass
class FlatnessResult:
    T: Plane | None
    osc_S: float
    osc_T_eta: float
    eps: float
    distance_ratio: float
    ok: bool | None
    violated: list = field(default_factory=list)

    @property
    def status(self) -> str:
        if self.ok is None:
            return "not-applicable"
        return "pass" if self.ok else "fail"


def improve_flatness(V: DiscreteVarifold, B: Ball, S: Plane, alpha: float | None = None,
                     params: FlatnessParams = FlatnessParams(),
                     lam: float | None = None) -> FlatnessResult:
    """One improvement-of-flatness step at the centre of B (taken as the base point).

    eps is osc_S(B_R)/R. Hypotheses osc_S <= eps0 R, Lambda <= c eps / R, the
    3/2 density bound on sub-balls and base point in the support are measured;
    a violation yields ok = None with the failures listed.
    """
    alpha = params.alpha if alpha is None else alpha
    eta = params.eta
    R = B.radius
    W = V.translated(-B.center)
    lam = V.lam if lam is None else lam
    origin = Ball.at_origin(V.d, R)
    violated = []
    if W.distance_to_support(np.zeros(V.d)) > 1e-8:
        violated.append("base point not in support")
    if not W.in_ball(origin).any():
        raise EmptySupportError("empty ball")
    osc_S = oscillation(W, S, origin)
    eps = osc_S / R
    if osc_S > params.eps0 * R:
        violated.append(f"osc_S = {osc_S:.4g} > eps0 R = {params.eps0 * R:.4g}")
    if lam > params.c * eps / R:
        violated.append(f"Lambda = {lam:.4g} > c eps / R = {params.c * eps / R:.4g}")
    dens = density_bound_check(W, R)
    if dens > DENSITY_BOUND:
        violated.append(f"density ratio {dens:.4g} > {DENSITY_BOUND}")
    inner = Ball.at_origin(V.d, eta * R)
    T = best_fit_plane(W, inner)
    osc_T = oscillation(W, T, inner)
    dist = plane_distance(S, T)
    ratio = 0.0 if dist <= 1e-14 else (dist / eps if eps > 0 else math.inf)
    ok = None if violated else bool(osc_T <= eta ** (1 + alpha) * osc_S + 1e-15 * R)
    return FlatnessResult(T, osc_S, osc_T, eps, ratio, ok, violated)


def iterated_excess(V: DiscreteVarifold, R: float, eta: float, k: int, C_pen: float):
    """excess(B_{eta^j R}) for j = 0..k around the origin."""
    return np.array([excess(V, Ball.at_origin(V.d, R * eta ** j), C_pen) for j in range(k + 1)])


# graph extraction -------------------------------------------------------------------

@dataclass
class GraphPatch:
    base_plane: Plane
    center: np.ndarray
    domain_radius: float
    cell: float
    points: np.ndarray       # (K, m) tangential coordinates
    heights: np.ndarray      # (K, d - m)
    gradients: np.ndarray    # (K, d - m, m)
    holder_alpha: float
    c1alpha_norm: float
    max_spread: float
    spread_threshold: float
    reconstruction_tol: float

    @property
    def m(self):
        return self.points.shape[1]

    def to_rows(self):
        k = self.heights.shape[1]
        header = ([f"x{i + 1}" for i in range(self.m)] + [f"u{j + 1}" for j in range(k)]
                  + [f"du{j + 1}_{i + 1}" for j in range(k) for i in range(self.m)])
        rows = [list(p) + list(u) + list(g.ravel()) for p, u, g in
                zip(self.points, self.heights, self.gradients)]
        return header, rows

    def to_csv(self, path):
        header, rows = self.to_rows()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([format(v, ".17g") for v in row])


def _cell_fits(tang, normal, cell, centres):
    """Affine least-squares fit of normal coordinates over the 3^m block of
    cells around each centre. Returns heights, gradients, per-cell spreads and
    per-cell atom counts."""
    m = tang.shape[1]
    k = normal.shape[1]
    keys = np.floor(tang / cell + 0.5).astype(np.int64)
    buckets: dict = {}
    for i, key in enumerate(map(tuple, keys)):
        buckets.setdefault(key, []).append(i)
    heights = np.zeros((len(centres), k))
    grads = np.zeros((len(centres), k, m))
    spread = np.zeros(len(centres))
    counts = np.zeros(len(centres), dtype=int)
    offsets = list(itertools.product((-1, 0, 1), repeat=m))
    for c, centre in enumerate(centres):
        key = tuple(np.floor(centre / cell + 0.5).astype(np.int64))
        own = buckets.get(key, [])
        counts[c] = len(own)
        if not own:
            continue
        block = [i for off in offsets for i in buckets.get(tuple(np.add(key, off)), [])]
        y = tang[block] - centre
        A = np.column_stack([np.ones(len(block)), y])
        if len(block) < m + 1 or np.linalg.matrix_rank(A) < m + 1:
            heights[c] = normal[own].mean(0)
            fit_res = normal[own] - heights[c]
        else:
            coef, *_ = np.linalg.lstsq(A, normal[block], rcond=None)
            heights[c] = coef[0]
            grads[c] = coef[1:].T
            fit_res = normal[own] - (coef[0] + (tang[own] - centre) @ coef[1:])
        if len(own) > 1:
            dev = np.linalg.norm(fit_res[:, None, :] - fit_res[None, :, :], axis=-1)
            spread[c] = dev.max()
    return heights, grads, spread, counts


def _holder_constant(points, heights, grads, alpha, rng, max_pairs=200_000):
    n = len(points)
    if n < 2:
        return 0.0
    if n * (n - 1) <= max_pairs:
        i, j = np.nonzero(~np.eye(n, dtype=bool))
    else:
        i = rng.integers(0, n, max_pairs)
        j = rng.integers(0, n, max_pairs)
        keep = i != j
        i, j = i[keep], j[keep]
    dy = points[j] - points[i]
    dist = np.linalg.norm(dy, axis=1)
    lin = np.einsum("nkm,nm->nk", grads[i], dy)
    err = np.linalg.norm(heights[j] - heights[i] - lin, axis=1)
    return float(np.max(err / dist ** (1 + alpha)))


def extract_graph(V: DiscreteVarifold, B: Ball, S: Plane, *, alpha: float = 0.5, C: float = 10.0,
                  cell: float | None = None, domain_radius: float | None = None,
                  seed: int = 0) -> GraphPatch:
    """Heights of supp V over the disc of radius R/2 in S around the ball centre.

    Cells of side ``cell`` (default max(3 h_mesh, R/16)) must each be populated
    (else SupportGapError) and single-valued: the spread of atom normal
    coordinates about the local affine fit must not exceed
    4 C (eps + Lambda R) cell^{1+alpha} R^{-alpha} (else MultiValuedError).
    """
    R = B.radius
    rho = R / 2 if domain_radius is None else domain_radius
    cell = max(3 * V.mesh_size, R / 16) if cell is None else cell
    W = V.translated(-B.center)
    inball = W.in_ball(Ball.at_origin(V.d, R))
    if not inball.any():
        raise EmptySupportError("empty ball")
    x = W.x[inball]
    tang = S.coords(x)
    normal = normal_coordinates(x, S)
    m = S.m
    k = int(math.floor(rho / cell + 0.5))
    ticks = np.arange(-k, k + 1) * cell
    grid = np.stack([g.ravel() for g in np.meshgrid(*([ticks] * m), indexing="ij")], 1)
    grid = grid[np.linalg.norm(grid, axis=1) <= rho + 1e-12]
    heights, grads, spread, counts = _cell_fits(tang, normal, cell, grid)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        c = grid[empty[np.argmin(np.linalg.norm(grid[empty], axis=1))]]
        raise SupportGapError(f"support gap: no atoms in the cell centred at {np.round(c, 6).tolist()} "
                              f"(side {cell:.4g}); {empty.size} empty cell(s)")
    eps = oscillation(W, S, Ball.at_origin(V.d, R)) / R
    threshold = 4 * C * (eps + V.lam * R) * cell ** (1 + alpha) * R ** (-alpha) + 1e-12 * R
    worst = int(np.argmax(spread))
    if spread[worst] > threshold:
        raise MultiValuedError(f"multi-valued cell centred at {np.round(grid[worst], 6).tolist()}: "
                               f"normal spread {spread[worst]:.4g} > {threshold:.4g}")
    rng = np.random.default_rng(seed)
    c1a = _holder_constant(grid, heights, grads, alpha, rng)
    return GraphPatch(S, np.asarray(B.center, float), rho, cell, grid, heights, grads, alpha, c1a,
                      float(spread.max(initial=0.0)), threshold, 2 * cell)


# touching function ----------------------------------------------------------------

class TouchFunction:
    """G(x) = |S^perp x / eps - h(Sx)|^2 / 2 + delta |Sx|^2 / 2 with h harmonic on
    the disc of radius 1/4 in S.

    ``boundary`` maps tangential points (N, m) to (N, d - m) values; h is the
    finite-difference Dirichlet solution with those values on grid nodes
    outside the disc.
    """

    RADIUS = 0.25

    def __init__(self, S: Plane, boundary, eps: float, delta: float, spacing: float = 1 / 128):
        if not 0 < delta < 0.5:
            raise ValueError("delta must lie in (0, 1/2)")
        if eps <= 0:
            raise ValueError("eps must be positive")
        if S.m not in (1, 2):
            raise ValueError("touch functions are implemented for m in {1, 2}")
        self.S, self.eps, self.delta, self.spacing = S, eps, delta, spacing
        self.codim = S.d - S.m
        self._boundary = boundary
        self.solved = False
        self.residual = math.inf
        self._splines = None

    def solve(self) -> "TouchFunction":
        m, hgrid = self.S.m, self.spacing
        n = int(math.ceil(self.RADIUS / hgrid)) + 3
        ticks = np.arange(-n, n + 1) * hgrid
        shape = (len(ticks),) * m
        grid = np.stack([g.ravel() for g in np.meshgrid(*([ticks] * m), indexing="ij")], 1)
        inside = np.linalg.norm(grid, axis=1) < self.RADIUS
        # interior nodes need all neighbours on the grid
        # Dirichlet data at outside nodes: boundary values at the radial projection
        rad = np.linalg.norm(grid, axis=1)
        proj = grid * (self.RADIUS / np.where(rad > 0, rad, 1.0))[:, None]
        vals = np.asarray(self._boundary(proj), dtype=float).reshape(len(grid), self.codim).copy()
        idx = -np.ones(len(grid), dtype=int)
        idx[inside] = np.arange(inside.sum())
        strides = np.array([int(np.prod(shape[i + 1:])) for i in range(m)])
        rows, cols, data = [], [], []
        rhs = np.zeros((inside.sum(), self.codim))
        for g in np.flatnonzero(inside):
            r = idx[g]
            rows.append(r)
            cols.append(r)
            data.append(-2.0 * m)
            for s in strides:
                for nb in (g - s, g + s):
                    if inside[nb]:
                        rows.append(r)
                        cols.append(idx[nb])
                        data.append(1.0)
                    else:
                        rhs[r] -= vals[nb]
        A = sp.csr_matrix((data, (rows, cols)), shape=(inside.sum(), inside.sum()))
        sol = spsolve(A.tocsc(), rhs)
        sol = np.asarray(sol).reshape(inside.sum(), self.codim)
        vals[inside] = sol
        res = A @ sol - rhs
        self.residual = float(np.abs(res).max(initial=0.0))
        if self.residual > 1e-8:
            raise RuntimeError(f"harmonic solve residual {self.residual:.3g} exceeds 1e-8")
        self.grid_values = vals.reshape(shape + (self.codim,))
        self.ticks = ticks
        if m == 2:
            self._splines = [RectBivariateSpline(ticks, ticks, self.grid_values[..., k], kx=3, ky=3)
                             for k in range(self.codim)]
        else:
            self._splines = [InterpolatedUnivariateSpline(ticks, self.grid_values[:, k], k=3)
                             for k in range(self.codim)]
        self.solved = True
        return self

    def harmonic_residual(self) -> float:
        """Max |discrete Laplacian of h| / h^2-scaled, at interior nodes."""
        v = self.grid_values
        m = self.S.m
        pts = np.stack([g.ravel() for g in np.meshgrid(*([self.ticks] * m), indexing="ij")], 1)
        inside = (np.linalg.norm(pts, axis=1) < self.RADIUS).reshape(v.shape[:-1])
        lap = -2 * m * v
        for ax in range(m):
            lap = lap + np.roll(v, 1, axis=ax) + np.roll(v, -1, axis=ax)
        return float(np.abs(lap[inside]).max())

    def _h_derivs(self, y):
        """h, Dh (codim, m), D^2 h (codim, m, m) at one tangential point."""
        if not self.solved:
            raise RuntimeError("harmonic part not solved")
        m, k = self.S.m, self.codim
        hv = np.zeros(k)
        dh = np.zeros((k, m))
        d2 = np.zeros((k, m, m))
        for c, spl in enumerate(self._splines):
            if m == 2:
                a, b = y
                hv[c] = spl(a, b)[0, 0]
                dh[c] = [spl(a, b, dx=1)[0, 0], spl(a, b, dy=1)[0, 0]]
                d2[c] = [[spl(a, b, dx=2)[0, 0], spl(a, b, dx=1, dy=1)[0, 0]],
                         [spl(a, b, dx=1, dy=1)[0, 0], spl(a, b, dy=2)[0, 0]]]
            else:
                hv[c] = spl(y[0])
                dh[c, 0] = spl.derivative(1)(y[0])
                d2[c, 0, 0] = spl.derivative(2)(y[0])
        return hv, dh, d2

    def h(self, y):
        return self._h_derivs(np.asarray(y, float))[0]

    def value(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        y = self.S.coords(x)
        z = normal_coordinates(x, self.S)
        m = self.S.m
        if m == 2:
            hv = np.column_stack([spl(y[:, 0], y[:, 1], grid=False) for spl in self._splines])
        else:
            hv = np.column_stack([spl(y[:, 0]) for spl in self._splines])
        w = z / self.eps - hv
        return 0.5 * np.einsum("ni,ni->n", w, w) + 0.5 * self.delta * np.einsum("ni,ni->n", y, y)

    def derivatives(self, x):
        """Ambient gradient (d,) and Hessian (d, d) of G at one point."""
        x = np.asarray(x, float)
        B = self.S.basis
        N = self.S.normal_basis()
        y, z = B @ x, N @ x
        hv, dh, d2 = self._h_derivs(y)
        w = z / self.eps - hv
        gy = -dh.T @ w + self.delta * y
        gz = w / self.eps
        Gyy = dh.T @ dh - np.einsum("k,kij->ij", w, d2) + self.delta * np.eye(self.S.m)
        Gyz = -dh.T / self.eps
        Gzz = np.eye(self.codim) / self.eps ** 2
        grad = B.T @ gy + N.T @ gz
        P = np.vstack([B, N])
        H = np.block([[Gyy, Gyz], [Gyz.T, Gzz]])
        return grad, P.T @ H @ P


@dataclass
class TouchResult:
    x_star: np.ndarray
    interior: bool
    min_div: float
    rhs: float
    min_plane: Plane
    min_div_sampled: float
    split: dict
    c0: float
    certificate: bool

    def to_json(self) -> str:
        return json.dumps({"x_star": self.x_star.tolist(), "min_div": self.min_div, "rhs": self.rhs,
                           "plane": self.min_plane.basis.tolist()})


def _near_planes(S: Plane, gamma: float, rng, n: int):
    """Planes with |T - S| close to gamma: tilt S towards its complement."""
    N = S.normal_basis()
    out = []
    for _ in range(n):
        A = rng.standard_normal((S.m, N.shape[0]))
        A *= np.tan(np.arcsin(min(gamma, 0.999))) / np.linalg.norm(A, 2)
        out.append(Plane.from_vectors(S.basis + A @ N))
    return out


def viscosity_touch(V: DiscreteVarifold, tf: TouchFunction, S: Plane, *, n_planes: int = 10_000,
                    gammas=(0.05, 0.1, 0.2), seed: int = 0, lam: float | None = None) -> TouchResult:
    """Maximise G over atoms with |Sx| <= 1/4 and test the touching inequality.

    min_div is the minimum of div_T grad G(x_star) over T, evaluated exactly
    (sum of the m smallest eigenvalues), over random planes and over planes
    near S at each gamma. A certificate is emitted when the maximum is
    interior and min_div > Lambda |grad G(x_star)|.
    """
    if not tf.solved:
        raise RuntimeError("unsolved harmonic part")
    lam = V.lam if lam is None else lam
    y = S.coords(V.x)
    mask = np.linalg.norm(y, axis=1) <= tf.RADIUS
    if not mask.any():
        raise EmptySupportError("no atoms over the disc of radius 1/4")
    idx = np.flatnonzero(mask)
    vals = tf.value(V.x[idx])
    star = idx[int(np.argmax(vals))]
    x_star = V.x[star].copy()
    interior = bool(np.linalg.norm(y[star]) <= tf.RADIUS - tf.delta)
    grad, hess = tf.derivatives(x_star)
    rng = np.random.default_rng(seed)
    sampled = min(trace_over_plane(hess, random_plane(S.d, S.m, rng)) for _ in range(n_planes))
    split = {}
    c0 = math.inf
    N = S.normal_basis()
    for g in gammas:
        near = _near_planes(S, g, rng, 64)
        near_min = min(trace_over_plane(hess, T) for T in near)
        far = [T for T in (random_plane(S.d, S.m, rng) for _ in range(256)) if plane_distance(S, T) >= g]
        far_min = min((trace_over_plane(hess, T) for T in far), default=math.inf)
        # smallest normal component of a unit tangent vector of a far plane
        for T in far:
            sv = np.linalg.svd(T.basis @ N.T, compute_uv=False)
            c0 = min(c0, float(sv.max()) / g)
        split[g] = {"near": near_min, "far": far_min}
    evals, evecs = np.linalg.eigh(0.5 * (hess + hess.T))
    exact = float(evals[:S.m].sum())
    min_plane = Plane(evecs[:, :S.m].T)
    min_div = min(exact, sampled)
    rhs = lam * float(np.linalg.norm(grad))
    cert = interior and min_div > rhs
    return TouchResult(x_star, interior, min_div, rhs, min_plane, sampled, split, c0, cert)


# maximum principle ----------------------------------------------------------------------

@dataclass(frozen=True)
class QuadraticField:
    """f(x) = c + g . x + x^T A x / 2 with A symmetric."""
    c: float
    g: np.ndarray
    A: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "g", np.asarray(self.g, dtype=float))
        A = np.asarray(self.A, dtype=float)
        if np.abs(A - A.T).max(initial=0) > 1e-12:
            raise ValueError("A must be symmetric")
        object.__setattr__(self, "A", A)

    def __call__(self, x):
        x = np.atleast_2d(x)
        return self.c + x @ self.g + 0.5 * np.einsum("ni,ij,nj->n", x, self.A, x)

    def gradient(self, x):
        return self.g + self.A @ np.asarray(x, dtype=float)

    def hessian(self, x=None):
        return self.A


def is_local_max(V: DiscreteVarifold, f, x0, radius: float = 0.1, tol: float = 1e-12) -> bool:
    x0 = np.asarray(x0, float)
    if V.distance_to_support(x0) > 1e-8:
        return False
    near = V.in_ball(Ball(x0, radius))
    f0 = float(f(x0[None])[0])
    return bool(np.all(f(V.x[near]) <= f0 + tol * max(1.0, abs(f0))))


def max_principle_residual(V: DiscreteVarifold, f: QuadraticField, x0, radius: float = 0.1,
                           lam: float | None = None) -> float:
    """trace_m D^2 f(x0) - Lambda |grad f(x0)| at a verified local maximum."""
    x0 = np.asarray(x0, float)
    if not is_local_max(V, f, x0, radius):
        raise NotALocalMaxError(f"x0 = {x0.tolist()} is not a local maximum of f on the support")
    lam = V.lam if lam is None else lam
    return trace_m_min(f.hessian(x0), V.m) - lam * float(np.linalg.norm(f.gradient(x0)))
