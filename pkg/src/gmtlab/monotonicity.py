"""Elliptic kernels h and g_{r,s}, the weighted density I(r), and the
weighted monotonicity, Harnack and oscillation-decay checks."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Plane, unit_ball_volume
from .varifold import Ball, DiscreteVarifold, EmptySupportError, density_ratio, oscillation

log = logging.getLogger(__name__)

DENSITY_BOUND = 1.5
SUPPORT_TOL = 1e-8


# convex weights ---------------------------------------------------------------

@dataclass(frozen=True)
class ConvexWeight:
    """Non-negative convex weight with gradient norm at most one.

    kind ``const``: f = c (c >= 0)
    kind ``tlin``:  f = (a . (x - y0) - c)^+
    kind ``abslin``: f = |a . x|
    """
    kind: str
    a: np.ndarray = None
    y0: np.ndarray = None
    c: float = 0.0

    def __post_init__(self):
        if self.kind not in ("const", "tlin", "abslin"):
            raise ValueError(f"unknown weight kind {self.kind!r}")
        if self.kind == "const":
            if self.c < 0:
                raise ValueError("constant weight must be non-negative")
            return
        a = np.asarray(self.a, dtype=float)
        if np.linalg.norm(a) > 1 + 1e-12:
            raise ValueError(f"|a| = {np.linalg.norm(a):.6g} exceeds 1")
        object.__setattr__(self, "a", a)
        if self.kind == "tlin":
            y0 = np.zeros_like(a) if self.y0 is None else np.asarray(self.y0, dtype=float)
            object.__setattr__(self, "y0", y0)

    @classmethod
    def const(cls, c: float) -> "ConvexWeight":
        return cls("const", c=float(c))

    @classmethod
    def tlin(cls, a, y0, c: float) -> "ConvexWeight":
        return cls("tlin", a=a, y0=y0, c=float(c))

    @classmethod
    def abslin(cls, a) -> "ConvexWeight":
        return cls("abslin", a=a)

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.kind == "const":
            return np.full(len(x), self.c)
        if self.kind == "tlin":
            return np.maximum((x - self.y0) @ self.a - self.c, 0.0)
        return np.abs(x @ self.a)

    def gradient(self, x) -> np.ndarray:
        """A subgradient (the one-sided zero choice at kinks)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n, d = x.shape
        if self.kind == "const":
            return np.zeros((n, d))
        if self.kind == "tlin":
            on = ((x - self.y0) @ self.a - self.c) > 0
            return on[:, None] * self.a[None, :]
        return np.sign(x @ self.a)[:, None] * self.a[None, :]

    def at_origin(self, d: int) -> float:
        return float(self(np.zeros(d))[0])

    def to_spec(self) -> str:
        fmt = lambda v: format(float(v), ".17g")  # noqa: E731
        if self.kind == "const":
            return f"const {fmt(self.c)}"
        if self.kind == "tlin":
            return " ".join(["tlin", *map(fmt, self.a), *map(fmt, self.y0), fmt(self.c)])
        return " ".join(["abslin", *map(fmt, self.a)])

    @classmethod
    def from_spec(cls, text: str, d: int | None = None) -> "ConvexWeight":
        """Parse ``const c`` | ``tlin a.. y0.. c`` | ``abslin a..``."""
        parts = text.split()
        if not parts:
            raise ValueError("empty weight spec")
        kind, vals = parts[0], [float(v) for v in parts[1:]]
        if kind == "const":
            if len(vals) != 1:
                raise ValueError("const takes one value")
            return cls.const(vals[0])
        if kind == "tlin":
            if len(vals) % 2 != 1 or len(vals) < 3:
                raise ValueError("tlin takes 2d + 1 values")
            k = (len(vals) - 1) // 2
            if d is not None and k != d:
                raise ValueError(f"tlin spec has dimension {k}, expected {d}")
            return cls.tlin(vals[:k], vals[k:2 * k], vals[-1])
        if kind == "abslin":
            if d is not None and len(vals) != d:
                raise ValueError(f"abslin spec has dimension {len(vals)}, expected {d}")
            return cls.abslin(vals)
        raise ValueError(f"unknown weight kind {kind!r}")


# kernels ----------------------------------------------------------------------

def _as_points(x):
    x = np.asarray(x, dtype=float)
    return np.atleast_2d(x), x.ndim == 1


def kernel_h(x, m: int):
    """Value and gradient of the truncated fundamental solution h."""
    if m < 2:
        raise ValueError(f"kernel_h needs m >= 2, got {m}")
    pts, single = _as_points(x)
    om = unit_ball_volume(m)
    r2 = np.einsum("ni,ni->n", pts, pts)
    r = np.sqrt(r2)
    inside = r <= 1.0
    safe = np.where(inside, 1.0, r)
    if m == 2:
        val = np.where(inside, (1 - r2) / (4 * np.pi), -np.log(safe) / (2 * np.pi))
    else:
        val = np.where(inside, (m / 2 - (m - 2) * r2 / 2) / (om * m * (m - 2)),
                       safe ** (2 - m) / (om * m * (m - 2)))
    scale = np.where(inside, 1.0, safe ** (-m)) / (m * om)
    grad = -scale[:, None] * pts
    if single:
        return float(val[0]), grad[0]
    return val, grad


def kernel_h_hessian(x, m: int) -> np.ndarray:
    """D^2 h: -(I/m)/omega_m inside B_1, -|x|^{-m}(I/m - xhat xhat)/omega_m outside."""
    pts, single = _as_points(x)
    d = pts.shape[1]
    om = unit_ball_volume(m)
    r = np.linalg.norm(pts, axis=1)
    inside = r <= 1.0
    safe = np.where(inside, 1.0, r)
    xhat = pts / safe[:, None]
    out = np.empty((len(pts), d, d))
    eye = np.eye(d) / m
    out[:] = -eye / om
    outer = ~inside
    if outer.any():
        xo = xhat[outer]
        out[outer] = -(eye[None] - np.einsum("ni,nj->nij", xo, xo)) * (safe[outer] ** (-m) / om)[:, None, None]
    return out[0] if single else out


@dataclass(frozen=True)
class KernelSpec:
    m: int
    r: float
    s: float
    R: float | None = None

    def __post_init__(self):
        if self.m < 2:
            raise ValueError("kernel g needs m >= 2")
        if not 0 < self.r < self.s:
            raise ValueError(f"need 0 < r < s, got r={self.r}, s={self.s}")
        if self.R is not None and self.s > self.R:
            raise ValueError(f"s={self.s} exceeds the domain radius R={self.R}")


class KernelG(tuple):
    """(value, divergence, slack) of g_{r,s}; divergence and slack are None without a plane."""

    __slots__ = ()

    def __new__(cls, value, divergence, slack):
        return super().__new__(cls, (value, divergence, slack))

    value = property(lambda self: self[0])
    divergence = property(lambda self: self[1])
    slack = property(lambda self: self[2])


def kernel_g(x, spec: KernelSpec, S: Plane | None = None):
    """g_{r,s}(x) = r^{2-m} h(x/r) - s^{2-m} h(x/s), zero outside B_s.

    With a plane S, also returns div_S grad g and the slack of
    div_S grad g <= -chi_{B_r}/(omega r^m) + chi_{B_s}/(omega s^m).
    For m = 2 the logarithmic kernel needs the constant log(s/r)/(2 pi)
    so that g vanishes outside B_s.
    """
    m, r, s = spec.m, spec.r, spec.s
    pts, single = _as_points(x)
    hr, _ = kernel_h(pts / r, m)
    hs, _ = kernel_h(pts / s, m)
    val = r ** (2 - m) * hr - s ** (2 - m) * hs
    if m == 2:
        val = val + np.log(s / r) / (2 * np.pi)
    rad = np.linalg.norm(pts, axis=1)
    val = np.where(rad >= s, 0.0, val)
    if S is None:
        return KernelG(float(val[0]) if single else val, None, None)
    om = unit_ball_volume(m)
    hess = (r ** (-m) * kernel_h_hessian(pts / r, m) - s ** (-m) * kernel_h_hessian(pts / s, m))
    b = S.basis
    div = np.einsum("ij,njk,ik->n", b, hess, b)
    bound = -(rad <= r).astype(float) / (om * r ** m) + (rad <= s).astype(float) / (om * s ** m)
    # closed form of the slack in the annulus, avoids cancellation
    safe = np.where(rad > 0, rad, 1.0)
    tang = np.einsum("nj,ij->ni", pts, b)
    frac = np.einsum("ni,ni->n", tang, tang) / safe ** 2
    annulus = (rad > r) & (rad < s)
    slack = np.where(annulus, (1.0 - frac) / (om * safe ** m), bound - div)
    slack = np.where(rad >= s, 0.0, slack)
    if single:
        return KernelG(float(val[0]), float(div[0]), float(slack[0]))
    return KernelG(val, div, slack)


# weighted density -----------------------------------------------------------

def weighted_density(V: DiscreteVarifold, f: ConvexWeight, r: float) -> float:
    """I(r) = (omega_m r^m)^{-1} sum_{|x| <= r} w theta f(x)."""
    if not r > 0:
        raise ValueError(f"radius must be positive, got {r}")
    if len(V) == 0:
        return 0.0
    mask = np.einsum("ni,ni->n", V.x, V.x) <= r * r
    if not mask.any():
        return 0.0
    vals = V.mass_weights[mask] * f(V.x[mask])
    return float(math.fsum(vals)) / (unit_ball_volume(V.m) * r ** V.m)


@dataclass
class DensityCurve:
    radii: np.ndarray
    values: np.ndarray
    f: ConvexWeight
    lam: float

    def __post_init__(self):
        self.radii = np.asarray(self.radii, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if np.any(np.diff(self.radii) <= 0):
            raise ValueError("radii must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("density values must be finite")


@dataclass
class MonotonicityResult:
    curve: DensityCurve
    slacks: np.ndarray
    min_slack: float
    tol_disc: float
    C0: float
    smallest_C0: float
    f0: float
    f_sup: float
    density_max: float
    density_ok: bool
    warnings: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.min_slack >= -self.tol_disc


def tol_disc(h: float, lam: float, f_sup: float, K: float = 1.0) -> float:
    """Discretization tolerance K h (1 + Lambda) ||f||."""
    return K * h * (1.0 + lam) * f_sup


def richardson_constant(builder, f: ConvexWeight, radii, h: float, order: float = 1.0,
                        floor: float = 1.0) -> float:
    """Calibrate K from two mesh levels.

    ``builder(h)`` returns the varifold at mesh size h. The error at level h is
    estimated as |I_h - I_{h/2}| * 2^p / (2^p - 1); K is that error divided by
    h (1 + Lambda) ||f||, never below ``floor``.
    """
    Vc, Vf = builder(h), builder(h / 2)
    ic = np.array([weighted_density(Vc, f, r) for r in radii])
    ifn = np.array([weighted_density(Vf, f, r) for r in radii])
    err = np.abs(ic - ifn).max() * 2 ** order / (2 ** order - 1)
    sup = _f_sup(Vc, f, max(radii))
    denom = h * (1 + Vc.lam) * sup
    if denom == 0:
        return floor
    return max(floor, float(err / denom))


def _f_sup(V: DiscreteVarifold, f: ConvexWeight, radius: float) -> float:
    mask = np.einsum("ni,ni->n", V.x, V.x) <= radius * radius
    if not mask.any():
        return 0.0
    return float(f(V.x[mask]).max())


def _require_base_point(V: DiscreteVarifold, origin=None):
    o = np.zeros(V.d) if origin is None else origin
    if V.distance_to_support(o) > SUPPORT_TOL:
        raise EmptySupportError("base point 0 is not in the support (translate the varifold first)")


def density_bound_check(V: DiscreteVarifold, radius: float, n_centres: int = 25,
                        n_radii: int = 4, min_radius: float | None = None) -> float:
    """Largest sampled M(B_r(x)) / (omega_m r^m) over atoms x in B_{radius/2}
    and r in a dyadic range up to radius/2 (r >= 4 mesh sizes)."""
    floor = 4 * V.mesh_size if min_radius is None else min_radius
    centres_mask = np.einsum("ni,ni->n", V.x, V.x) <= (radius / 2) ** 2
    idx = np.flatnonzero(centres_mask)
    if idx.size == 0:
        return 0.0
    # deterministic spread of centres: origin-nearest atom plus a stride sample
    order = idx[np.argsort(np.einsum("ni,ni->n", V.x[idx], V.x[idx]), kind="stable")]
    pick = order[:: max(1, len(order) // n_centres)][:n_centres]
    radii = [radius / 2 ** k for k in range(1, n_radii + 1)]
    radii = [r for r in radii if r >= floor] or [radius / 2]
    best = 0.0
    for i in pick:
        for r in radii:
            best = max(best, density_ratio(V, Ball(V.x[i], r)))
    return best


def verify_weighted_monotonicity(V: DiscreteVarifold, f: ConvexWeight, radii, C0: float = 10.0,
                                 *, K: float = 1.0, h: float | None = None) -> MonotonicityResult:
    """Check I(r) >= f(0) - C0 Lambda (||f|| + r) r at every radius.

    ``K`` scales the discretization tolerance K h (1 + Lambda) ||f||; ``h``
    defaults to the varifold's mesh size.
    """
    radii = np.asarray(radii, dtype=float)
    if np.any(radii <= 0):
        raise ValueError("radii must be positive")
    _require_base_point(V)
    lam = V.lam
    values = np.array([weighted_density(V, f, r) for r in radii])
    f0 = f.at_origin(V.d)
    fsup = _f_sup(V, f, radii.max())
    penalty = lam * (fsup + radii) * radii
    slacks = values - f0 + C0 * penalty
    h = V.mesh_size if h is None else h
    tol = tol_disc(h, lam, fsup, K)
    deficit = f0 - values - tol
    if np.all(deficit <= 0):
        smallest = 0.0
    elif lam == 0:
        smallest = math.inf
    else:
        smallest = float(np.max(deficit / penalty))
    dens = density_bound_check(V, radii.max())
    warnings = []
    if dens > DENSITY_BOUND:
        msg = f"density bound violated: sampled ratio {dens:.4g} > {DENSITY_BOUND}"
        log.warning(msg)
        warnings.append(msg)
    return MonotonicityResult(DensityCurve(radii, values, f, lam), slacks, float(slacks.min()),
                              tol, C0, smallest, f0, fsup, dens, dens <= DENSITY_BOUND, warnings)


# Harnack and decay ---------------------------------------------------------------

@dataclass
class HarnackCertificate:
    hyp_ok: bool
    violated: list
    osc_R: float
    osc_etaR: float
    conclusion_ok: bool | None
    density_max: float

    @property
    def status(self) -> str:
        if not self.hyp_ok:
            return "not-applicable"
        return "pass" if self.conclusion_ok else "fail"


def harnack_certificate(V: DiscreteVarifold, S: Plane, R: float, eta: float,
                        lam: float | None = None) -> HarnackCertificate:
    """Evaluate osc(B_R) <= eta R, Lambda <= osc(B_R)/R^2, the 3/2 density bound,
    and the conclusion osc(B_{eta R}) <= (1 - eta) osc(B_R)."""
    _require_base_point(V)
    lam = V.lam if lam is None else lam
    origin = np.zeros(V.d)
    osc_R = oscillation(V, S, Ball(origin, R))
    osc_eta = oscillation(V, S, Ball(origin, eta * R))
    dens = density_bound_check(V, R)
    violated = []
    if osc_R > eta * R:
        violated.append(f"osc(B_R) = {osc_R:.4g} > eta R = {eta * R:.4g}")
    if lam > osc_R / R ** 2:
        violated.append(f"Lambda = {lam:.4g} > osc(B_R)/R^2 = {osc_R / R ** 2:.4g}")
    if dens > DENSITY_BOUND:
        violated.append(f"density ratio {dens:.4g} > {DENSITY_BOUND}")
    hyp = not violated
    concl = bool(osc_eta <= (1 - eta) * osc_R) if hyp else None
    return HarnackCertificate(hyp, violated, osc_R, osc_eta, concl, dens)


@dataclass
class DecayFit:
    beta_fit: float
    C_fit: float
    radii: np.ndarray
    osc: np.ndarray
    top: float
    R: float
    applicable: bool = True
    reason: str = ""
    out_of_range: list = field(default_factory=list)

    def bound(self, r):
        """C (osc(B_R) + Lambda R^2) (r / R)^beta."""
        if math.isinf(self.beta_fit):
            return np.zeros_like(np.asarray(r, dtype=float))
        return self.C_fit * self.top * (np.asarray(r) / self.R) ** self.beta_fit

    def curve_rows(self):
        """(log r, log osc) pairs for plotting; zero oscillations are skipped."""
        return [(math.log(r), math.log(o)) for r, o in zip(self.radii, self.osc) if o > 0]


def dyadic_scales(R: float, k: int) -> np.ndarray:
    return R / 2.0 ** np.arange(k)


def fit_power_law(radii, osc, R: float, top: float):
    """Least-squares exponent of osc against r / R and the smallest constant C
    with osc <= C top (r/R)^beta at every sample."""
    radii = np.asarray(radii, dtype=float)
    osc = np.asarray(osc, dtype=float)
    pos = osc > 0
    if not pos.any():
        return math.inf, 0.0
    if pos.sum() < 2:
        raise ValueError("need at least two scales with positive oscillation for a fit")
    lx = np.log(radii[pos] / R)
    ly = np.log(osc[pos])
    A = np.column_stack([lx, np.ones_like(lx)])
    (beta, _), *_ = np.linalg.lstsq(A, ly, rcond=None)
    if top <= 0:
        return float(beta), math.inf
    C = float(np.max(osc[pos] / (top * (radii[pos] / R) ** beta)))
    return float(beta), C


def fit_decay(V: DiscreteVarifold, S: Plane, R: float, scales, lam: float | None = None,
              check_density: bool = True) -> DecayFit:
    """Fit osc(B_r) ~ C (osc(B_R) + Lambda R^2) (r/R)^beta over the given radii."""
    scales = np.sort(np.asarray(scales, dtype=float))[::-1]
    if scales.size < 3:
        raise ValueError("fit_decay needs at least 3 scales")
    _require_base_point(V)
    lam = V.lam if lam is None else lam
    origin = np.zeros(V.d)
    osc_R = oscillation(V, S, Ball(origin, R))
    top = osc_R + lam * R * R
    osc = np.array([oscillation(V, S, Ball(origin, r)) for r in scales])
    out = [float(r) for r in scales if not (top - 1e-15 <= r <= R + 1e-15)]
    if out:
        log.info("%d scales lie outside [osc + Lambda R^2, R] = [%.4g, %.4g]", len(out), top, R)
    if check_density:
        dens = density_bound_check(V, R)
        if dens > DENSITY_BOUND:
            return DecayFit(math.nan, math.nan, scales, osc, top, R, False,
                            f"density ratio {dens:.4g} > {DENSITY_BOUND}", out)
    beta, C = fit_power_law(scales, osc, R, top)
    return DecayFit(beta, C, scales, osc, top, R, True, "", out)
