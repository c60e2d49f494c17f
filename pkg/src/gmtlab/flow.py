"""Time-indexed varifolds, exact and simulated mean curvature flows with a
transport term, the Brakke inequality residual and the parabolic maximum
principle."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .geometry import Plane, trace_m_min
from .surfaces import _orthonormal_rows, sphere_varifold
from .varifold import DiscreteVarifold, EmptySupportError, _half_diameter, normal_coordinates

log = logging.getLogger(__name__)

TIME_TOL = 1e-12


class CFLError(ValueError):
    pass


class FlowBlowUpError(RuntimeError):
    def __init__(self, frame: int, grad: float):
        self.frame = frame
        super().__init__(f"gradient blow-up |grad u| = {grad:.4g} > 2 at frame {frame}")


class FlowTrack:
    """Frames (t_k, V_k) with strictly increasing times and per-atom transport v."""

    def __init__(self, times, frames, transport=None, lambda_v: float | None = None,
                 metadata: dict | None = None):
        times = np.array(times, dtype=float)
        frames = list(frames)
        if len(times) != len(frames) or len(frames) == 0:
            raise ValueError("need one time per frame and at least one frame")
        if np.any(np.diff(times) <= 0):
            raise ValueError("frame times must be strictly increasing")
        ctx = frames[0].context
        if any(V.context != ctx for V in frames):
            raise ValueError("all frames must share (d, m)")
        if transport is None:
            transport = [np.zeros((len(V), V.d)) for V in frames]
        transport = [np.asarray(v, dtype=float).reshape(len(V), V.d) for v, V in zip(transport, frames)]
        vmax = max((float(np.linalg.norm(v, axis=1).max(initial=0.0)) for v in transport), default=0.0)
        if lambda_v is None:
            lambda_v = vmax
        if lambda_v < vmax - 1e-12:
            raise ValueError(f"lambda_v={lambda_v} is below max |v|={vmax}")
        self.times = times
        self.times.setflags(write=False)
        self.frames = frames
        self.transport = transport
        self.lambda_v = float(lambda_v)
        self.metadata = dict(metadata or {})

    def __len__(self):
        return len(self.frames)

    @property
    def d(self):
        return self.frames[0].d

    @property
    def m(self):
        return self.frames[0].m

    @property
    def lam_H(self) -> float:
        return max(V.lam for V in self.frames)

    def frame_index(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > TIME_TOL * max(1.0, abs(t)):
            raise ValueError(f"t = {t} is not a frame time")
        return k

    def spacetime_points(self, t_lo=-math.inf, t_hi=math.inf):
        """Atoms of frames with t_lo <= t <= t_hi as (x, t) arrays."""
        xs, ts = [], []
        for t, V in zip(self.times, self.frames):
            if t_lo - TIME_TOL <= t <= t_hi + TIME_TOL and len(V):
                xs.append(V.x)
                ts.append(np.full(len(V), t))
        if not xs:
            return np.zeros((0, self.d)), np.zeros(0)
        return np.vstack(xs), np.concatenate(ts)

    def translated(self, dx=None, dt: float = 0.0) -> "FlowTrack":
        dx = np.zeros(self.d) if dx is None else np.asarray(dx, float)
        return FlowTrack(self.times + dt, [V.translated(dx) for V in self.frames], self.transport,
                         self.lambda_v, self.metadata)

    def rescaled(self, lam: float) -> "FlowTrack":
        """Parabolic rescaling (x, t) -> (lam x, lam^2 t)."""
        frames = [V.dilated(1.0 / lam) for V in self.frames]
        transport = [v / lam for v in self.transport]
        return FlowTrack(self.times * lam ** 2, frames, transport, self.lambda_v / lam, self.metadata)

    def window(self, t_lo: float, t_hi: float) -> "FlowTrack":
        keep = [k for k, t in enumerate(self.times) if t_lo - TIME_TOL <= t <= t_hi + TIME_TOL]
        return FlowTrack(self.times[keep], [self.frames[k] for k in keep],
                         [self.transport[k] for k in keep], self.lambda_v, self.metadata)


@dataclass(frozen=True)
class ParabolicCylinder:
    """B_R(x0) x [t0 - R^2, t0]."""
    x0: np.ndarray
    t0: float
    R: float

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))
        if not self.R > 0:
            raise ValueError("cylinder radius must be positive")

    def contains(self, x, t):
        x = np.atleast_2d(x)
        t = np.asarray(t)
        return ((np.linalg.norm(x - self.x0, axis=1) <= self.R)
                & (t >= self.t0 - self.R ** 2 - TIME_TOL) & (t <= self.t0 + TIME_TOL))


# space-time test functions -------------------------------------------------------------

@dataclass
class SpaceTimeTestFunction:
    """phi(x, t) >= 0 with analytic spatial gradient and time derivative.

    ``fn(x, t)`` returns (value (N,), gradient (N, d), dt (N,)).
    """
    fn: Callable
    name: str = "phi"

    def __call__(self, x, t):
        return self.fn(np.atleast_2d(np.asarray(x, dtype=float)), float(t))

    @classmethod
    def constant(cls, c: float = 1.0) -> "SpaceTimeTestFunction":
        def fn(x, t):
            n, d = x.shape
            return np.full(n, c), np.zeros((n, d)), np.zeros(n)
        return cls(fn, f"const {c}")

    @classmethod
    def power(cls, k: int, centre=None) -> "SpaceTimeTestFunction":
        """|x - centre|^(2k)."""
        def fn(x, t):
            y = x if centre is None else x - np.asarray(centre, float)
            r2 = np.einsum("ni,ni->n", y, y)
            return r2 ** k, 2 * k * (r2 ** (k - 1))[:, None] * y, np.zeros(len(x))
        return cls(fn, f"|x|^{2 * k}")

    @classmethod
    def radial_cutoff(cls, centre, inner: float, outer: float,
                      time_factor: Callable | None = None) -> "SpaceTimeTestFunction":
        """Quintic radial cutoff, optionally times a positive g(t) given as (g, g')."""
        from .varifold import RadialCutoff

        cut = RadialCutoff(np.asarray(centre, float), inner, outer)

        def fn(x, t):
            val, grad = cut(x)
            if time_factor is None:
                return val, grad, np.zeros(len(x))
            g, dg = time_factor(t)
            return g * val, g * grad, dg * val
        return cls(fn, "cutoff")


# exact and simulated flows ---------------------------------------------------------------

def shrinking_sphere_radius(m: int, t, extinction_time: float = 0.0):
    return np.sqrt(-2.0 * m * (np.asarray(t, dtype=float) - extinction_time))


def shrinking_sphere_track(m: int, t_range, n_frames: int, *, n_rings: int = 200,
                           extinction_time: float = 0.0, centre=None) -> FlowTrack:
    """Round m-sphere with r(t) = sqrt(-2 m t), exact H and zero transport."""
    t0, t1 = map(float, t_range)
    if t1 >= extinction_time or t0 >= t1:
        raise ValueError("need t0 < t1 < extinction time")
    times = np.linspace(t0, t1, n_frames)
    frames = []
    for t in times:
        r = float(shrinking_sphere_radius(m, t, extinction_time))
        frames.append(sphere_varifold(m, r, n_rings, centre=centre))
    return FlowTrack(times, frames, metadata={"method": "shrinking-sphere", "m": m})


@dataclass
class FlowGrid:
    """Uniform grid on [a, b]^m for graphs over the first m axes of R^{m+1}."""
    m: int
    a: float
    b: float
    n: int
    periodic: bool = True

    def __post_init__(self):
        if self.m not in (1, 2):
            raise ValueError("graphical flows are implemented for m in {1, 2}")
        if self.n < 4:
            raise ValueError("need at least 4 grid intervals")

    @property
    def h(self) -> float:
        return (self.b - self.a) / self.n

    @property
    def ticks(self) -> np.ndarray:
        k = self.n if self.periodic else self.n + 1
        return self.a + np.arange(k) * self.h

    def nodes(self) -> np.ndarray:
        t = self.ticks
        g = np.meshgrid(*([t] * self.m), indexing="ij")
        return np.stack([x.ravel() for x in g], 1)

    @property
    def shape(self):
        return (len(self.ticks),) * self.m


def _derivs(u, h, periodic):
    """Central differences: gradient (..., m) and Hessian (..., m, m)."""
    m = u.ndim
    if periodic:
        def shift(a, k, ax):
            return np.roll(a, -k, axis=ax)
    else:
        def shift(a, k, ax):
            out = np.roll(a, -k, axis=ax)
            # one-sided copies at the edges (values unused for boundary updates)
            sl = [slice(None)] * a.ndim
            sl[ax] = -1 if k > 0 else 0
            out[tuple(sl)] = a[tuple(sl)]
            return out
    grad = np.stack([(shift(u, 1, i) - shift(u, -1, i)) / (2 * h) for i in range(m)], -1)
    hess = np.empty(u.shape + (m, m))
    for i in range(m):
        hess[..., i, i] = (shift(u, 1, i) - 2 * u + shift(u, -1, i)) / h ** 2
        for j in range(i + 1, m):
            uij = (shift(shift(u, 1, i), 1, j) - shift(shift(u, 1, i), -1, j)
                   - shift(shift(u, -1, i), 1, j) + shift(shift(u, -1, i), -1, j)) / (4 * h * h)
            hess[..., i, j] = hess[..., j, i] = uij
    return grad, hess


def _graph_velocity(u, grid: FlowGrid, v_fn, t):
    grad, hess = _derivs(u, grid.h, grid.periodic)
    W2 = 1 + np.einsum("...i,...i->...", grad, grad)
    lap = np.trace(hess, axis1=-2, axis2=-1)
    ghg = np.einsum("...i,...ij,...j->...", grad, hess, grad)
    rate = lap - ghg / W2
    if v_fn is not None:
        pts = np.column_stack([grid.nodes(), u.ravel()])
        v = v_fn(pts, t).reshape(u.shape + (grid.m + 1,))
        # W (v . nu) with nu = (-grad u, 1)/W
        rate = rate + v[..., -1] - np.einsum("...i,...i->...", grad, v[..., :-1])
    return rate, grad


def graph_frame(u, grid: FlowGrid, v_fn=None, t: float = 0.0):
    """DiscreteVarifold of the graph of u with finite-difference H, plus the transport."""
    grad, hess = _derivs(u, grid.h, grid.periodic)
    m = grid.m
    g = grad.reshape(-1, m)
    hs = hess.reshape(-1, m, m)
    W2 = 1 + np.einsum("ni,ni->n", g, g)
    W = np.sqrt(W2)
    lap = np.trace(hs, axis1=1, axis2=2)
    ghg = np.einsum("ni,nij,nj->n", g, hs, g)
    scal = (lap - ghg / W2) / W
    nu = np.column_stack([-g, np.ones(len(g))]) / W[:, None]
    H = scal[:, None] * nu
    tangents = np.zeros((len(g), m, m + 1))
    for i in range(m):
        tangents[:, i, i] = 1.0
        tangents[:, i, -1] = g[:, i]
    bases = _orthonormal_rows(tangents)
    pts = np.column_stack([grid.nodes(), u.ravel()])
    boundary = None
    if not grid.periodic:
        nodes = grid.nodes()
        boundary = ((np.abs(nodes - grid.a) < 1e-12) | (np.abs(nodes - grid.b) < 1e-12)).any(1)
    V = DiscreteVarifold(pts, grid.h ** m * W, bases, None, H, None, boundary)
    v = np.zeros_like(pts) if v_fn is None else v_fn(pts, t)
    return V, v


def constant_transport(vec) -> Callable:
    vec = np.asarray(vec, dtype=float)
    return lambda pts, t: np.broadcast_to(vec, pts.shape).copy()


def graphical_flow_run(u0, grid: FlowGrid, t_range, *, cfl: float = 0.5, n_frames: int = 11,
                       transport: Callable | None = None, dt: float | None = None) -> FlowTrack:
    """Explicit finite-difference graphical mean curvature flow with transport.

    u_t = Delta u - grad u^T D^2u grad u / W^2 + W (v . nu). Dirichlet data
    are the initial boundary values. The step is cfl h^2 / (2m), shortened so
    that frames land on ``n_frames`` equally spaced times.
    """
    if not 0 < cfl <= 1:
        raise CFLError(f"cfl = {cfl} outside (0, 1]")
    h, m = grid.h, grid.m
    dt_max = cfl * h * h / (2 * m)
    if dt is not None and dt > dt_max * (1 + 1e-12):
        raise CFLError(f"time step {dt:.4g} exceeds the stability limit {dt_max:.4g}")
    dt_max = dt or dt_max
    u = np.array(u0(grid.nodes()) if callable(u0) else u0, dtype=float).reshape(grid.shape)
    g0 = np.abs(_derivs(u, h, grid.periodic)[0])
    if np.linalg.norm(np.atleast_1d(g0.reshape(-1, m)), axis=1).max() > 0.5 + 1e-12:
        raise ValueError("initial gradient exceeds 0.5")
    t0, t1 = map(float, t_range)
    times = np.linspace(t0, t1, n_frames)
    frames, vs = [], []
    V, v = graph_frame(u, grid, transport, t0)
    frames.append(V)
    vs.append(v)
    if not grid.periodic:
        edge = np.zeros(grid.shape, dtype=bool)
        for ax in range(m):
            sl = [slice(None)] * m
            sl[ax] = 0
            edge[tuple(sl)] = True
            sl[ax] = -1
            edge[tuple(sl)] = True
    t = t0
    for k in range(1, n_frames):
        span = times[k] - times[k - 1]
        steps = int(math.ceil(span / dt_max - 1e-9))
        step = span / steps
        for _ in range(steps):
            rate, grad = _graph_velocity(u, grid, transport, t)
            if not grid.periodic:
                rate[edge] = 0.0
            u = u + step * rate
            t += step
        t = times[k]
        grad = _derivs(u, h, grid.periodic)[0].reshape(-1, m)
        gmax = float(np.linalg.norm(grad, axis=1).max())
        if gmax > 2:
            raise FlowBlowUpError(k, gmax)
        V, v = graph_frame(u, grid, transport, t)
        frames.append(V)
        vs.append(v)
    return FlowTrack(times, frames, vs, metadata={"method": "graphical", "m": m, "h": h, "cfl": cfl,
                                                  "periodic": grid.periodic})


def half_plane_track(m: int, half_width: float, h: float, times) -> FlowTrack:
    """Static half-plane {x in R^m x 0 : x_m >= 0} in R^{m+1} (not a Brakke flow)."""
    ticks = np.arange(-int(round(half_width / h)), int(round(half_width / h)) + 1) * h
    grids = np.meshgrid(*([ticks] * (m - 1) + [ticks[ticks >= -1e-15]]), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], 1)
    x = np.column_stack([nodes, np.zeros(len(nodes))])
    basis = np.eye(m + 1)[:m]
    V = DiscreteVarifold(x, h ** m, basis, None, None, 0.0, np.abs(nodes[:, -1]) < 1e-15)
    times = np.asarray(times, dtype=float)
    return FlowTrack(times, [V] * len(times), metadata={"method": "half-plane", "m": m})


def static_track(V: DiscreteVarifold, times, transport=None) -> FlowTrack:
    times = np.asarray(times, dtype=float)
    tr = None if transport is None else [transport] * len(times)
    return FlowTrack(times, [V] * len(times), tr, metadata={"method": "static"})


def translating_track(V: DiscreteVarifold, velocity, times) -> FlowTrack:
    """x -> x + t velocity with transport v = velocity (moves a plane by its normal part)."""
    velocity = np.asarray(velocity, dtype=float)
    times = np.asarray(times, dtype=float)
    frames = [V.translated(t * velocity) for t in times]
    tr = [np.broadcast_to(velocity, (len(V), V.d)).copy() for _ in times]
    return FlowTrack(times, frames, tr, metadata={"method": "translating"})


# Brakke residual ------------------------------------------------------------------------

def normal_part(v, bases) -> np.ndarray:
    """(T_x M)^perp v per atom."""
    tang = np.einsum("nij,nj->ni", bases, v)
    return v - np.einsum("ni,nij->nj", tang, bases)


def _frame_integrand(V, v, phi, t):
    val, grad, dt = phi(V.x, t)
    if len(val) and val.min() < -1e-14:
        raise ValueError(f"test function is negative ({val.min():.3g}) at time {t}")
    vperp = normal_part(v, V.bases)
    dens = dt + np.einsum("ni,ni->n", -val[:, None] * V.H + grad, V.H + vperp)
    return float(np.sum(V.mass_weights * dens)), float(np.sum(V.mass_weights * val))


@dataclass
class BrakkeResidual:
    residual: float
    lhs: float
    rhs: float
    n_frames: int

    def __float__(self):
        return self.residual


def brakke_residual(track: FlowTrack, phi: SpaceTimeTestFunction, t1: float, t2: float) -> BrakkeResidual:
    """RHS - LHS of the Brakke inequality between frame times t1 < t2,
    with the time integral by the trapezoid rule over the stored frames."""
    if not t1 < t2:
        raise ValueError("need t1 < t2")
    k1, k2 = track.frame_index(t1), track.frame_index(t2)
    ts = track.times[k1:k2 + 1]
    integrand = np.empty(len(ts))
    masses = np.empty(len(ts))
    for j, k in enumerate(range(k1, k2 + 1)):
        integrand[j], masses[j] = _frame_integrand(track.frames[k], track.transport[k], phi, track.times[k])
    rhs = float(np.sum(0.5 * (integrand[1:] + integrand[:-1]) * np.diff(ts)))
    lhs = masses[-1] - masses[0]
    return BrakkeResidual(rhs - lhs, float(lhs), rhs, len(ts))


# space-time oscillation and maximum principle -------------------------------------------

def spacetime_oscillation(track: FlowTrack, S: Plane, Q: ParabolicCylinder) -> float:
    """Half the normal-coordinate diameter of the track atoms inside Q."""
    x, t = track.spacetime_points(Q.t0 - Q.R ** 2, Q.t0)
    if len(x):
        x = x[Q.contains(x, t)]
    if len(x) == 0:
        raise EmptySupportError("the track does not meet the cylinder")
    return _half_diameter(normal_coordinates(x, S))


@dataclass(frozen=True)
class SpaceTimeQuadratic:
    """f(x, t) = c + g . x + x^T A x / 2 + b t."""
    c: float
    g: np.ndarray
    A: np.ndarray
    b: float

    def __post_init__(self):
        object.__setattr__(self, "g", np.asarray(self.g, dtype=float))
        object.__setattr__(self, "A", np.asarray(self.A, dtype=float))

    def __call__(self, x, t):
        x = np.atleast_2d(x)
        return self.c + x @ self.g + 0.5 * np.einsum("ni,ij,nj->n", x, self.A, x) + self.b * np.asarray(t)

    def gradient(self, x):
        return self.g + self.A @ np.asarray(x, float)

    def dt(self):
        return self.b


def half_plane_barrier(m: int) -> SpaceTimeQuadratic:
    """f = |T^perp x|^2/2 - |x''|^2/(2m) + x_m^2/2 - x_m + t/(2m) for the half-plane
    {x_m >= 0} of T = span(e_1..e_m) in R^{m+1}."""
    d = m + 1
    A = np.zeros((d, d))
    for i in range(m - 1):
        A[i, i] = -1.0 / m
    A[m - 1, m - 1] = 1.0
    A[m, m] = 1.0
    g = np.zeros(d)
    g[m - 1] = -1.0
    return SpaceTimeQuadratic(0.0, g, A, 1.0 / (2 * m))


class NotALocalMaxError(ValueError):
    pass


def parabolic_max_principle_residual(track: FlowTrack, f: SpaceTimeQuadratic, X0, radius: float = 0.1,
                                     lam: float | None = None) -> float:
    """trace_m D^2 f - d_t f - Lambda |grad f| at X0 = (x0, t0), a verified local
    maximum of f over the track atoms with |x - x0| <= radius, t0 - radius^2 <= t <= t0."""
    x0, t0 = np.asarray(X0[0], float), float(X0[1])
    x, t = track.spacetime_points(t0 - radius ** 2, t0)
    near = np.linalg.norm(x - x0, axis=1) <= radius
    on_track = np.any(near & (np.linalg.norm(x - x0, axis=1) <= 1e-8) & (np.abs(t - t0) <= TIME_TOL))
    f0 = float(f(x0[None], t0)[0])
    if not on_track or np.any(f(x[near], t[near]) > f0 + 1e-12 * max(1.0, abs(f0))):
        raise NotALocalMaxError(f"X0 = ({x0.tolist()}, {t0}) is not a local maximum of f on the track")
    lam = track.lambda_v if lam is None else lam
    return trace_m_min(f.A, track.m) - f.dt() - lam * float(np.linalg.norm(f.gradient(x0)))
