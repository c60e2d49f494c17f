"""The cutoff backward heat kernel, Gaussian densities of flows, weighted
Huisken monotonicity, parabolic decay and space-time graph extraction."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .flow import FlowTrack, ParabolicCylinder, spacetime_oscillation
from .geometry import Plane
from .monotonicity import ConvexWeight, DecayFit, fit_power_law
from .regularity import MultiValuedError, SupportGapError, _cell_fits
from .varifold import Ball, EmptySupportError, density_ratio, normal_coordinates

log = logging.getLogger(__name__)


# cutoff profile -----------------------------------------------------------------

def cutoff_profile(s):
    """phi = 1 on [0, 1/2], 1 - (3u^2 - 2u^3) with u = 2s - 1 on [1/2, 1], 0 beyond.
    Returns (phi, phi', phi'')."""
    s = np.asarray(s, dtype=float)
    u = np.clip(2 * s - 1, 0.0, 1.0)
    band = (s > 0.5) & (s < 1.0)
    phi = 1 - (3 * u * u - 2 * u ** 3)
    d1 = np.where(band, -12 * u * (1 - u), 0.0)
    d2 = np.where(band, -24 * (1 - 2 * u), 0.0)
    return phi, d1, d2


@dataclass(frozen=True)
class HeatKernelSpec:
    m: int
    R: float

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if not self.R > 0:
            raise ValueError("R must be positive")


class KernelZeroError(ValueError):
    pass


def _points(x):
    x = np.asarray(x, dtype=float)
    return np.atleast_2d(x), x.ndim == 1


def _gaussian(pts, tau, m):
    r2 = np.einsum("ni,ni->n", pts, pts)
    return (4 * np.pi * tau) ** (-m / 2) * np.exp(-r2 / (4 * tau)), r2


def _cutoff_field(pts, R):
    """psi = phi(|x|/R): value, gradient, Hessian."""
    d = pts.shape[1]
    r = np.linalg.norm(pts, axis=1)
    phi, d1, d2 = cutoff_profile(r / R)
    safe = np.where(r > 0, r, 1.0)
    xhat = pts / safe[:, None]
    grad = (d1 / R)[:, None] * xhat
    outer = np.einsum("ni,nj->nij", xhat, xhat)
    hess = ((d2 / R ** 2)[:, None, None] * outer
            + (d1 / (R * safe))[:, None, None] * (np.eye(d)[None] - outer))
    return phi, grad, hess


def heat_kernel(x, t: float, spec: HeatKernelSpec):
    """rho_R(x, t) = (4 pi (-t))^{-m/2} exp(-|x|^2 / 4(-t)) phi(|x|/R): value, gradient, d/dt."""
    if t >= 0:
        raise ValueError(f"the backward heat kernel needs t < 0, got {t}")
    pts, single = _points(x)
    tau = -t
    G, r2 = _gaussian(pts, tau, spec.m)
    psi, dpsi, _ = _cutoff_field(pts, spec.R)
    val = G * psi
    grad = (G * psi)[:, None] * (-pts / (2 * tau)) + G[:, None] * dpsi
    dt = val * (spec.m / (2 * tau) - r2 / (4 * tau * tau))
    if single:
        return float(val[0]), grad[0], float(dt[0])
    return val, grad, dt


def kernel_residual(x, t: float, S: Plane, spec: HeatKernelSpec):
    """d_t rho + div_S grad rho + |S^perp grad rho|^2 / rho.

    With rho = G psi the Gaussian part cancels identically and the residual
    is G (-(x . grad psi)/tau + tr_S D^2 psi + |S^perp grad psi|^2 / psi).
    """
    if t >= 0:
        raise ValueError(f"the backward heat kernel needs t < 0, got {t}")
    pts, single = _points(x)
    tau = -t
    G, _ = _gaussian(pts, tau, spec.m)
    psi, dpsi, d2psi = _cutoff_field(pts, spec.R)
    if np.any(G * psi <= 0):
        raise KernelZeroError("the kernel vanishes at a sampled point")
    B = S.basis
    trS = np.einsum("ij,njk,ik->n", B, d2psi, B)
    tang = np.einsum("ij,nj->ni", B, dpsi)
    nperp2 = np.einsum("ni,ni->n", dpsi, dpsi) - np.einsum("ni,ni->n", tang, tang)
    res = G * (-np.einsum("ni,ni->n", pts, dpsi) / tau + trS + np.maximum(nperp2, 0.0) / psi)
    return float(res[0]) if single else res


def kernel_residual_direct(x, t: float, S: Plane, spec: HeatKernelSpec):
    """The same quantity assembled term by term from D^2 rho (reference path)."""
    pts, single = _points(x)
    tau = -t
    m = spec.m
    G, r2 = _gaussian(pts, tau, m)
    psi, dpsi, d2psi = _cutoff_field(pts, spec.R)
    rho = G * psi
    gG = -G[:, None] * pts / (2 * tau)
    hG = G[:, None, None] * (np.einsum("ni,nj->nij", pts, pts) / (4 * tau * tau) - np.eye(pts.shape[1]) / (2 * tau))
    grad = psi[:, None] * gG + G[:, None] * dpsi
    hess = (psi[:, None, None] * hG + np.einsum("ni,nj->nij", gG, dpsi) + np.einsum("ni,nj->nij", dpsi, gG)
            + G[:, None, None] * d2psi)
    dt = rho * (m / (2 * tau) - r2 / (4 * tau * tau))
    B = S.basis
    trS = np.einsum("ij,njk,ik->n", B, hess, B)
    perp = grad - np.einsum("ni,ij->nj", np.einsum("ij,nj->ni", B, grad), B)
    res = dt + trS + np.einsum("ni,ni->n", perp, perp) / rho
    return float(res[0]) if single else res


# Gaussian density -----------------------------------------------------------------

def _frame_sum(track: FlowTrack, k: int, f: ConvexWeight, x0, t: float, r: float) -> float:
    V = track.frames[k]
    if len(V) == 0:
        return 0.0
    val, _, _ = heat_kernel(V.x - x0, t, HeatKernelSpec(V.m, r))
    return float(math.fsum(V.mass_weights * f(V.x) * val))


def gaussian_density(track: FlowTrack, f: ConvexWeight, X0, r: float, t: float) -> float:
    """sum_atoms w theta f(x) rho_r(x - x0, t) on the frame at t0 + t, linearly
    interpolated in time between the neighbouring frames."""
    x0, t0 = np.asarray(X0[0], float), float(X0[1])
    if not (-r * r - 1e-12 <= t < 0):
        raise ValueError(f"t = {t} outside [-r^2, 0)")
    T = t0 + t
    times = track.times
    if T < times[0] - 1e-12 or T > times[-1] + 1e-12:
        raise ValueError(f"time {T} outside the track range [{times[0]}, {times[-1]}]")
    k = int(np.searchsorted(times, T))
    if k < len(times) and abs(times[k] - T) <= 1e-12 * max(1.0, abs(T)):
        return _frame_sum(track, k, f, x0, t, r)
    if k > 0 and abs(times[k - 1] - T) <= 1e-12 * max(1.0, abs(T)):
        return _frame_sum(track, k - 1, f, x0, t, r)
    k = min(max(k, 1), len(times) - 1)
    theta = (T - times[k - 1]) / (times[k] - times[k - 1])
    return ((1 - theta) * _frame_sum(track, k - 1, f, x0, t, r)
            + theta * _frame_sum(track, k, f, x0, t, r))


@dataclass
class HuiskenResult:
    times: np.ndarray
    values: np.ndarray
    bounds: np.ndarray
    slacks: np.ndarray
    min_slack: float
    tol_disc: float
    C: float
    smallest_C: float
    f0: float
    eps: float
    lam: float
    E1: float
    base_plane_residual: float
    warnings: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.min_slack >= -self.tol_disc


def measured_E1(track: FlowTrack, x0, R: float, n_radii: int = 4) -> float:
    """sup over frames and sampled radii r <= R of M_t(B_r(x0)) / r^m."""
    from .geometry import unit_ball_volume

    best = 0.0
    for V in track.frames:
        for j in range(n_radii):
            r = R / 2 ** j
            if len(V):
                best = max(best, density_ratio(V, Ball(x0, r)) * unit_ball_volume(V.m))
    return best


def verify_huisken_monotonicity(track: FlowTrack, f: ConvexWeight, X0, r: float, times,
                                C: float = 10.0, K: float = 1.0) -> HuiskenResult:
    """Check int f rho_r(. - x0, t) dM_{t0+t} >= f(x0) - C (Lambda + eps/r^2 + eps Lambda^2)(-t)
    with eps the sup of f on the track inside Q_r(X0) and Lambda the transport bound."""
    x0, t0 = np.asarray(X0[0], float), float(X0[1])
    xs, ts = track.spacetime_points(t0 - r * r, t0)
    if len(xs) == 0 or np.min(np.linalg.norm(xs - x0, axis=1) + np.abs(ts - t0)) > 1e-8:
        raise EmptySupportError("X0 is not on the track")
    times = np.sort(np.asarray(times, dtype=float))
    lam = track.lambda_v
    inside = np.linalg.norm(xs - x0, axis=1) <= r
    eps = float(f(xs[inside]).max(initial=0.0))
    f0 = float(f(x0[None])[0])
    values = np.array([gaussian_density(track, f, X0, r, t) for t in times])
    rate = lam + eps / r ** 2 + eps * lam ** 2
    bounds = f0 - C * rate * (-times)
    slacks = values - bounds
    k_end = int(np.argmin(np.abs(track.times - t0)))
    h = track.frames[k_end].mesh_size
    tol = K * h * (1 + lam) * eps
    deficit = f0 - values - tol
    if np.all(deficit <= 0):
        smallest = 0.0
    elif rate == 0:
        smallest = math.inf
    else:
        smallest = float(np.max(deficit / (rate * (-times))))
    E1 = measured_E1(track, x0, r)
    # approximate tangent plane at the base atom
    V = track.frames[k_end]
    near = V.in_ball(Ball(x0, 4 * max(h, 1e-12)))
    resid = 0.0
    if near.sum() > V.m:
        from .varifold import best_fit_plane, oscillation
        try:
            P = best_fit_plane(V, Ball(x0, 4 * h))
            resid = oscillation(V, P, Ball(x0, 4 * h)) / (4 * h)
        except ValueError:
            resid = math.nan
    warnings = []
    if resid > 0.1:
        warnings.append(f"base atom plane-fit residual {resid:.3g} exceeds 0.1")
    return HuiskenResult(times, values, bounds, slacks, float(slacks.min()) if len(slacks) else 0.0,
                         tol, C, smallest, f0, eps, lam, E1, resid, warnings)


# parabolic decay and graph extraction ---------------------------------------------------

def gaussian_ratio_max(track: FlowTrack, X0, R: float, n_times: int = 12) -> float:
    """Largest int rho_R(. - x0, t) dM_{t0+t} over sampled t in [-R^2, 0)."""
    one = ConvexWeight.const(1.0)
    t0 = float(X0[1])
    lo = max(-R * R, track.times[0] - t0)
    ts = [t for t in np.linspace(lo, 0.0, n_times + 1)[:-1] if t < 0]
    # include stored frame times inside the window
    ts += [t - t0 for t in track.times if lo <= t - t0 < 0]
    return max((gaussian_density(track, one, X0, R, t) for t in ts), default=0.0)


def parabolic_decay_fit(track: FlowTrack, S: Plane, R: float, scales, X0=None) -> DecayFit:
    """Fit osc(Q_r) against C (osc(Q_R) + Lambda R^2)(r/R)^beta; not applicable
    when the Gaussian density ratio exceeds 3/2 on [-R^2, 0)."""
    X0 = (np.zeros(track.d), 0.0) if X0 is None else X0
    x0, t0 = np.asarray(X0[0], float), float(X0[1])
    scales = np.sort(np.asarray(scales, dtype=float))[::-1]
    if scales.size < 3:
        raise ValueError("need at least 3 scales")
    lam = track.lambda_v
    osc_R = spacetime_oscillation(track, S, ParabolicCylinder(x0, t0, R))
    top = osc_R + lam * R * R
    osc = np.array([spacetime_oscillation(track, S, ParabolicCylinder(x0, t0, r)) for r in scales])
    ratio = gaussian_ratio_max(track, (x0, t0), R)
    if ratio > 1.5:
        return DecayFit(math.nan, math.nan, scales, osc, top, R, False,
                        f"Gaussian density ratio {ratio:.4g} > 3/2")
    beta, C = fit_power_law(scales, osc, R, top)
    return DecayFit(beta, C, scales, osc, top, R, True)


@dataclass
class HarnackParabolic:
    hyp_ok: bool
    violated: list
    osc_R: float
    osc_etaR: float
    conclusion_ok: bool | None


def parabolic_harnack_certificate(track: FlowTrack, S: Plane, R: float, eta: float, X0=None):
    X0 = (np.zeros(track.d), 0.0) if X0 is None else X0
    x0, t0 = np.asarray(X0[0], float), float(X0[1])
    osc_R = spacetime_oscillation(track, S, ParabolicCylinder(x0, t0, R))
    osc_e = spacetime_oscillation(track, S, ParabolicCylinder(x0, t0, eta * R))
    violated = []
    ratio = gaussian_ratio_max(track, X0, R)
    if ratio > 1.5:
        violated.append(f"Gaussian density ratio {ratio:.4g} > 3/2")
    if osc_R > eta * R:
        violated.append(f"osc(Q_R) = {osc_R:.4g} > eta R")
    if track.lambda_v * R * R > osc_R:
        violated.append("Lambda R^2 > osc(Q_R)")
    ok = None if violated else bool(osc_e <= (1 - eta) * osc_R)
    return HarnackParabolic(not violated, violated, osc_R, osc_e, ok)


@dataclass
class SpaceTimeGraphPatch:
    base_plane: Plane
    domain_radius: float
    cell: float
    times: np.ndarray
    points: np.ndarray       # (K, m)
    heights: np.ndarray      # (T, K, d - m)
    gradients: np.ndarray    # (T, K, d - m, m)
    holder_alpha: float
    seminorm: float
    max_spread: float


def parabolic_extract_graph(track: FlowTrack, Q: ParabolicCylinder, S: Plane, *, alpha: float = 0.5,
                            C: float = 10.0, cell: float | None = None, domain_radius: float | None = None,
                            max_gap: float | None = None, seed: int = 0) -> SpaceTimeGraphPatch:
    """Per-frame cell heights over the disc of radius R/2 (default) for frames in
    [t0 - rho^2, t0], with single-valuedness, coverage and the parabolic
    C^{1,alpha} quotient |u(x,t) - u(y,s) - grad u(x,t)(y - x)| / (|x-y|^2 + |t-s|)^{(1+alpha)/2}."""
    R = Q.R
    rho = R / 2 if domain_radius is None else domain_radius
    keep = [k for k, t in enumerate(track.times) if Q.t0 - rho * rho - 1e-12 <= t <= Q.t0 + 1e-12]
    if not keep:
        raise SupportGapError("support gap: no frames in the time window")
    times = track.times[keep]
    max_gap = rho * rho / 4 if max_gap is None else max_gap
    edges = np.concatenate([[Q.t0 - rho * rho], times, [Q.t0]])
    gaps = np.diff(edges)
    if gaps.max() > max_gap + 1e-12:
        j = int(np.argmax(gaps))
        raise SupportGapError(f"support gap in time: no frames in ({edges[j]:.6g}, {edges[j + 1]:.6g})")
    mesh = max(track.frames[k].mesh_size for k in keep)
    cell = max(3 * mesh, R / 16) if cell is None else cell
    m = S.m
    k_ = int(math.floor(rho / cell + 0.5))
    ticks = np.arange(-k_, k_ + 1) * cell
    grid = np.stack([g.ravel() for g in np.meshgrid(*([ticks] * m), indexing="ij")], 1)
    grid = grid[np.linalg.norm(grid, axis=1) <= rho + 1e-12]
    xs, ts = track.spacetime_points(Q.t0 - R * R, Q.t0)
    inq = Q.contains(xs, ts)
    if not inq.any():
        raise EmptySupportError("the track does not meet the cylinder")
    eps = 0.5 * np.ptp(normal_coordinates(xs[inq] - Q.x0, S), axis=0).max() / R
    threshold = 4 * C * (eps + track.lambda_v * R) * cell ** (1 + alpha) * R ** (-alpha) + 1e-12 * R
    H, G, spreads = [], [], []
    for k, t in zip(keep, times):
        V = track.frames[k]
        x = V.x - Q.x0
        sel = np.linalg.norm(x, axis=1) <= R
        tang, normal = S.coords(x[sel]), normal_coordinates(x[sel], S)
        h, g, spread, counts = _cell_fits(tang, normal, cell, grid)
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            c = grid[empty[0]]
            raise SupportGapError(f"support gap: empty cell centred at {np.round(c, 6).tolist()} at t = {t:.6g}")
        worst = int(np.argmax(spread))
        if spread[worst] > threshold:
            raise MultiValuedError(f"multi-valued cell centred at {np.round(grid[worst], 6).tolist()} at t = {t:.6g}")
        H.append(h)
        G.append(g)
        spreads.append(spread.max(initial=0.0))
    H, G = np.array(H), np.array(G)
    rng = np.random.default_rng(seed)
    nT, nK = H.shape[:2]
    n_pairs = 200_000
    a_t, a_k = rng.integers(0, nT, n_pairs), rng.integers(0, nK, n_pairs)
    b_t, b_k = rng.integers(0, nT, n_pairs), rng.integers(0, nK, n_pairs)
    dy = grid[b_k] - grid[a_k]
    dist2 = np.einsum("ni,ni->n", dy, dy) + np.abs(times[b_t] - times[a_t])
    ok = dist2 > 0
    lin = np.einsum("nkm,nm->nk", G[a_t, a_k], dy)
    err = np.linalg.norm(H[b_t, b_k] - H[a_t, a_k] - lin, axis=1)
    semi = float(np.max(err[ok] / dist2[ok] ** ((1 + alpha) / 2))) if ok.any() else 0.0
    return SpaceTimeGraphPatch(S, rho, cell, times, grid, H, G, alpha, semi, float(max(spreads)))
