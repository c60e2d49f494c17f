"""Named scenarios: analytic geometry plus the module checks wired to each."""

from __future__ import annotations

import datetime as _dt
import math
from typing import Callable

import numpy as np

from .. import __version__
from ..flow import (FlowGrid, SpaceTimeQuadratic, SpaceTimeTestFunction, brakke_residual,
                    graphical_flow_run, half_plane_barrier, half_plane_track,
                    parabolic_max_principle_residual, shrinking_sphere_track, translating_track)
from ..geometry import Plane
from ..huisken import gaussian_density, parabolic_decay_fit, verify_huisken_monotonicity
from ..monotonicity import (ConvexWeight, dyadic_scales, fit_decay, harnack_certificate,
                            richardson_constant, tol_disc, verify_weighted_monotonicity)
from ..regularity import (FlatnessParams, MultiValuedError, QuadraticField, SupportGapError,
                          extract_graph, improve_flatness, max_principle_residual)
from ..surfaces import (affine_graph, catenoid_mesh, catenoid_varifold, dyadic_polar_nodes,
                        flat_varifold, grid_mesh, icosphere, sphere_cap_graph, sphere_varifold)
from ..varifold import (Ball, DiscreteVarifold, RadialCutoff, TestField, density_ratio,
                        estimate_mean_curvature, first_variation_residual)
from .config import ScenarioConfig
from .report import Check, VerificationReport

FIRST_VARIATION_TOL = 1e-2
MAX_PRINCIPLE_TOL = 1e-3
BARRIER_TOL = 1e-6
DENSITY_EXAMPLE_TOL = 5e-3
DENSITY_CONST_TOL = 1e-2


class UnknownScenarioError(KeyError):
    pass


def weights(d: int) -> dict:
    """One weight of each kind; all have gradient norm <= 1."""
    a = np.zeros(d)
    a[0], a[1] = 0.6, 0.8
    y0 = np.zeros(d)
    y0[0] = -0.5
    b = np.zeros(d)
    b[0], b[-1] = 0.6, 0.8
    return {"const": ConvexWeight.const(1.0), "tlin": ConvexWeight.tlin(a, y0, 0.2),
            "abslin": ConvexWeight.abslin(b)}


# first variation on meshed samplers ---------------------------------------------------

def _ico_level(h: float) -> int:
    # the level-0 icosahedron has edge about 1.05 and each level halves it
    return max(1, math.ceil(math.log2(1.12 / h)))


def meshed_sampler(kind: str, h: float, cfg: ScenarioConfig | None = None) -> tuple:
    """Varifold with estimated curvature plus a sampler of test-field centres."""
    if kind == "sphere":
        V = estimate_mean_curvature(icosphere(_ico_level(h)))
        return V, lambda rng: V.x[rng.integers(len(V))]
    if kind == "catenoid":
        V = estimate_mean_curvature(catenoid_mesh(1.0, 0.6, h))

        def centre(rng):
            t = rng.uniform(0, 2 * np.pi)
            return np.array([np.cos(t), np.sin(t), rng.uniform(-0.1, 0.1)])
        return V, centre
    if kind == "tilted-plane":
        s = 0.2 if cfg is None else cfg.tilt
        slope = np.array([s, s / 2])
        V = estimate_mean_curvature(grid_mesh(1.0, h, lambda p: p @ slope))

        def centre(rng):
            p = rng.uniform(-0.2, 0.2, 2)
            return np.array([p[0], p[1], p @ slope])
        return V, centre
    raise ValueError(f"no meshed sampler for {kind!r}")


def first_variation_errors(V: DiscreteVarifold, centre: Callable, n_fields: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_fields):
        F = TestField.random(V.d, rng, RadialCutoff(centre(rng), 0.1, 0.4))
        out.append(first_variation_residual(V, F))
    return np.array(out)


def _first_variation_check(kind, cfg: ScenarioConfig) -> Check:
    V, centre = meshed_sampler(kind, cfg.h, cfg)
    errs = first_variation_errors(V, centre, cfg.n_fields, cfg.seed)
    return Check.at_most("first-variation", float(errs.max()), FIRST_VARIATION_TOL, 0.0,
                         f"max over {cfg.n_fields} fields, mesh {V.mesh_size:.3g}")


# elliptic helpers -------------------------------------------------------------------------

def _monotonicity_checks(report, V, radii, cfg, builder=None):
    for name, f in weights(V.d).items():
        K = cfg.K
        if builder is not None:
            K = max(K, richardson_constant(builder, f, radii, cfg.h))
        res = verify_weighted_monotonicity(V, f, radii, cfg.C0, K=K, h=cfg.h)
        report.add(Check.at_least(f"monotonicity-{name}", res.min_slack, 0.0, res.tol_disc,
                                  f"K = {K:.3g}"))
        report.add(Check.at_most(f"monotonicity-{name}-C0", res.smallest_C0, cfg.C0, 0.0))


def _decay(report, V, S, cfg, target=None, tol=None):
    fit = fit_decay(V, S, cfg.R, dyadic_scales(cfg.R, cfg.n_scales))
    report.fitted.update(beta=fit.beta_fit, C=fit.C_fit)
    report.fitted.setdefault("curves", {})["decay"] = fit.curve_rows()
    if not fit.applicable:
        report.add(Check.not_applicable("decay", fit.reason))
    elif target is None:
        ok = fit.beta_fit > 0
        report.add(Check("decay", fit.beta_fit, 0.0, 0.0, "pass" if ok else "fail",
                         "zero oscillation at every scale" if math.isinf(fit.beta_fit) else ""))
    else:
        report.add(Check.at_most("decay-beta", abs(fit.beta_fit - target), tol, 0.0,
                                 f"beta = {fit.beta_fit:.6g}, target {target}"))
    return fit


def _harnack(report, V, S, cfg):
    cert = harnack_certificate(V, S, cfg.R, cfg.eta)
    if not cert.hyp_ok:
        report.add(Check.not_applicable("harnack", "; ".join(cert.violated)))
    else:
        report.add(Check.at_most("harnack", cert.osc_etaR, (1 - cfg.eta) * cert.osc_R, 0.0))
    return cert


def _flatness(report, V, S, cfg):
    params = FlatnessParams(cfg.eta, cfg.alpha, cfg.eps0, cfg.c)
    res = improve_flatness(V, Ball.at_origin(V.d, cfg.R), S, params=params)
    if res.ok is None:
        report.add(Check.not_applicable("improvement-of-flatness", "; ".join(res.violated)))
        return res
    report.add(Check.at_most("improvement-of-flatness", res.osc_T_eta,
                             cfg.eta ** (1 + cfg.alpha) * res.osc_S, 1e-15 * cfg.R))
    report.add(Check.at_most("flatness-rotation", res.distance_ratio, 2.0, 0.0,
                             "plane_distance(S, T) / eps"))
    if res.ok:
        report.fitted["eps0_working"] = res.eps
    return res


def _graph(report, V, S, cfg, exact: Callable | None):
    B = Ball.at_origin(V.d, cfg.R)
    patch = extract_graph(V, B, S, alpha=cfg.alpha, seed=cfg.seed)
    if exact is not None:
        err = float(np.abs(patch.heights[:, 0] - exact(patch.points)).max())
        report.add(Check.at_most("graph-heights", err, 1e-3, 0.0))
    osc = float(report.fitted.get("osc_R", 0.0))
    bound = 10 * (osc + V.lam)
    report.add(Check.at_most("graph-c1alpha", patch.c1alpha_norm, bound, 0.0, "10 (osc + Lambda)"))
    return patch


# scenarios --------------------------------------------------------------------------------

def _plane(cfg, report):
    V = flat_varifold(3, 2, 2 * cfg.R, cfg.h, polar=True)
    S = Plane.coordinate(3, [0, 1])
    rng = np.random.default_rng(cfg.seed)
    errs = first_variation_errors(V, lambda r: np.r_[r.uniform(-0.5, 0.5, 2), 0.0], cfg.n_fields,
                                  int(rng.integers(2 ** 32)))
    report.add(Check.at_most("first-variation", float(errs.max()), FIRST_VARIATION_TOL, 0.0))
    _monotonicity_checks(report, V, cfg.h * np.arange(3, 13), cfg)
    report.fitted["osc_R"] = 0.0
    _harnack(report, V, S, cfg)
    _decay(report, V, S, cfg)
    _flatness(report, V, S, cfg)
    _graph(report, V, S, cfg, lambda p: np.zeros(len(p)))


def _tilted_sampler(cfg, graph):
    """Graph over octave-aligned rings; also returns 10 ring edges in [R/10, R/2]
    used as monotonicity radii."""
    nodes, meas, bnd, edges = dyadic_polar_nodes(2, 2 * cfg.R)
    radii = edges[(edges >= 0.1 * cfg.R) & (edges <= 0.5 * cfg.R + 1e-12)][-10:]
    return graph.varifold(nodes, meas, bnd), radii


def _tilted_plane(cfg, report):
    g = affine_graph(2, [cfg.tilt, 0.0])
    V, radii = _tilted_sampler(cfg, g)
    S = Plane.coordinate(3, [0, 1])
    report.add(_first_variation_check("tilted-plane", cfg))
    _monotonicity_checks(report, V, radii, cfg)
    cert = _harnack(report, V, S, cfg)
    report.fitted["osc_R"] = cert.osc_R
    _decay(report, V, S, cfg, 1.0, 0.01)
    _flatness(report, V, S, cfg)
    # heights are measured along e_3, the normal of S, at tangential points of S
    _graph(report, V, S, cfg, lambda p: cfg.tilt * p[:, 0])


def _two_planes(cfg, report):
    a = cfg.crossing_angle
    S = Plane.coordinate(3, [0, 1])
    T = Plane([[1.0, 0.0, 0.0], [0.0, math.cos(a), math.sin(a)]])
    V = flat_varifold(3, 2, 2 * cfg.R, cfg.h, polar=True)
    W = flat_varifold(3, 2, 2 * cfg.R, cfg.h, polar=True, plane=T)
    U = V.combined(W)
    _monotonicity_checks(report, U, cfg.h * np.arange(3, 13), cfg)
    _harnack(report, U, S, cfg)
    _decay(report, U, S, cfg, 1.0, 0.01)
    flat = _flatness(report, U, S, cfg)
    # extraction presupposes the flatness hypotheses; report it only when they hold
    if flat.ok is None:
        report.add(Check.not_applicable("graph", "; ".join(flat.violated)))
        return
    try:
        _graph(report, U, S, cfg, None)
    except MultiValuedError as exc:
        report.add(Check.not_applicable("graph", str(exc)))


def _sphere(cfg, report):
    rho = cfg.sphere_radius
    n_rings = int(round(2 * rho / cfg.h))
    V = sphere_varifold(2, rho, n_rings, centre=(0.0, 0.0, rho))
    report.add(_first_variation_check("sphere", cfg))
    _monotonicity_checks(report, V, np.linspace(0.05, 0.3, 10) * rho, cfg)
    r = 10 * (2 * rho / n_rings)
    dr = density_ratio(V, Ball(np.zeros(3), r))
    report.add(Check.near("density-ratio", dr, 1.0, DENSITY_EXAMPLE_TOL, f"r = {r:.4g} at the pole"))
    f = QuadraticField(0.5 * rho * rho, np.array([0.0, 0.0, -rho]), np.eye(3))
    x0 = V.x[len(V) // 2]
    res = max_principle_residual(V, f, x0)
    report.add(Check.near("max-principle-equality", res, 0.0, MAX_PRINCIPLE_TOL,
                          "f = |x - c|^2 / 2 on the round sphere"))


def _sphere_cap(cfg, report):
    rho = cfg.cap_radius
    g = sphere_cap_graph(2, rho)
    V, radii = _tilted_sampler(cfg, g)
    S = Plane.coordinate(3, [0, 1])
    _monotonicity_checks(report, V, radii, cfg)
    cert = _harnack(report, V, S, cfg)
    report.fitted["osc_R"] = cert.osc_R
    _decay(report, V, S, cfg, 2.0, 0.1)
    _graph(report, V, S, cfg, lambda p: g.u(p))


def _catenoid_patch(cfg, report):
    def builder(h):
        return catenoid_varifold(1.0, 0.6, h).translated((-1.0, 0.0, 0.0))

    V = builder(cfg.h)
    report.add(_first_variation_check("catenoid", cfg))
    _monotonicity_checks(report, V, np.linspace(0.1, 0.5, 10), cfg, builder=builder)


def _punctured_plane(cfg, report):
    V = flat_varifold(3, 2, 2 * cfg.R, cfg.h, polar=True)
    hole = np.array([0.3 * cfg.R, 0.0, 0.0])
    V = V.subset(np.linalg.norm(V.x - hole, axis=1) > cfg.hole_radius)
    S = Plane.coordinate(3, [0, 1])
    reach = 0.3 * cfg.R - cfg.hole_radius
    radii = cfg.h * np.arange(2, int(reach / cfg.h) + 1)
    if len(radii):
        _monotonicity_checks(report, V, radii, cfg)
    try:
        extract_graph(V, Ball.at_origin(3, cfg.R), S, alpha=cfg.alpha, seed=cfg.seed)
        report.add(Check.flag("graph-detects-support-gap", False, "extraction unexpectedly succeeded"))
    except SupportGapError as exc:
        report.add(Check.flag("graph-detects-support-gap", True, str(exc)))


# parabolic ----------------------------------------------------------------------------------

def build_flow(cfg: ScenarioConfig):
    """The flow track of a parabolic scenario."""
    name = cfg.name
    if name == "shrinking-sphere":
        n_rings = max(20, int(round(4.0 / cfg.h / 2)))
        return shrinking_sphere_track(2, (-1.0, -0.25), cfg.n_frames, n_rings=n_rings)
    if name == "graph-heat":
        n = int(round(2 * np.pi / cfg.h))
        grid = FlowGrid(1, 0.0, 2 * np.pi, n, periodic=True)
        A = cfg.amplitude
        return graphical_flow_run(lambda p: A * np.sin(p[:, 0]), grid, (0.0, 1.0), cfl=cfg.cfl,
                                  n_frames=11)
    if name == "translating-plane":
        V = flat_varifold(3, 2, 2 * cfg.R, cfg.h)
        return translating_track(V, (0.0, 0.0, cfg.velocity), np.linspace(-0.5, 0.0, 11))
    if name == "half-plane-barrier":
        return half_plane_track(2, 0.5, cfg.h, np.linspace(-0.1, 0.0, 11))
    raise UnknownScenarioError(name)


def _shrinking_sphere(cfg, report):
    track = build_flow(cfg)
    m = track.m
    br = brakke_residual(track, SpaceTimeTestFunction.constant(1.0), track.times[0], track.times[-1])
    report.add(Check.at_most("brakke-residual", abs(br.residual), 5e-2 * abs(br.rhs), 0.0,
                             f"{br.n_frames} frames, phi = 1"))
    X0 = (np.zeros(3), 0.0)
    ts = np.linspace(track.times[0], track.times[-1], 20)
    dens = np.array([gaussian_density(track, ConvexWeight.const(1.0), X0, 10.0, t) for t in ts])
    report.add(Check.at_most("huisken-nonincreasing", float(np.max(np.diff(dens), initial=0.0)), 0.0,
                             DENSITY_CONST_TOL))
    report.add(Check.near("huisken-density", float(dens.mean()), 4 / math.e, DENSITY_CONST_TOL,
                          "self-similar value 4/e"))
    k = len(track.times) - 1
    V = track.frames[k]
    x0 = V.x[len(V) // 2]
    f = SpaceTimeQuadratic(0.0, np.zeros(3), np.eye(3), float(m))
    res = parabolic_max_principle_residual(track, f, (x0, track.times[k]))
    report.add(Check.near("parabolic-max-principle-equality", res, 0.0, MAX_PRINCIPLE_TOL,
                          "f = |x|^2 / 2 + m t"))


def _graph_heat(cfg, report):
    track = build_flow(cfg)
    h = track.metadata["h"]
    phi = SpaceTimeTestFunction.constant(1.0)
    br = brakke_residual(track, phi, track.times[0], track.times[-1])
    report.add(Check.at_least("brakke-residual", br.residual, 0.0,
                              tol_disc(h, track.lam_H, 1.0, cfg.K)))
    amp = float(np.abs(track.frames[-1].x[:, 1]).max())
    expected = cfg.amplitude * math.exp(-(track.times[-1] - track.times[0]))
    report.add(Check.at_most("heat-amplitude", abs(amp / expected - 1), 1e-2, 0.0,
                             f"amplitude {amp:.6g} vs {expected:.6g}"))


def _translating_plane(cfg, report):
    track = build_flow(cfg)
    phi = SpaceTimeTestFunction.radial_cutoff(np.zeros(3), 0.5 * cfg.R, cfg.R)
    br = brakke_residual(track, phi, track.times[0], track.times[-1])
    report.add(Check.at_least("brakke-residual", br.residual, 0.0,
                              tol_disc(cfg.h, track.lambda_v, 1.0, cfg.K)))
    r = 0.5
    X0 = (np.zeros(3), 0.0)
    times = -np.linspace(r * r / 20, r * r, 20)
    for name in ("const", "tlin"):
        f = weights(3)[name]
        res = verify_huisken_monotonicity(track, f, X0, r, times, C=cfg.C0, K=cfg.K)
        report.add(Check.at_least(f"huisken-{name}", res.min_slack, 0.0, res.tol_disc))
    fit = parabolic_decay_fit(track, Plane.coordinate(3, [0, 1]), r, dyadic_scales(r, cfg.n_scales), X0)
    report.fitted.update(beta=fit.beta_fit, C=fit.C_fit)
    report.fitted.setdefault("curves", {})["decay"] = fit.curve_rows()


def _half_plane_barrier(cfg, report):
    track = build_flow(cfg)
    m = track.m
    f = half_plane_barrier(m)
    res = parabolic_max_principle_residual(track, f, (np.zeros(m + 1), track.times[-1]))
    report.add(Check.near("barrier-violation", res, 1 / (2 * m), BARRIER_TOL,
                          "positive residual certifies the half-plane is not a flow"))


ELLIPTIC = {
    "plane": _plane,
    "tilted-plane": _tilted_plane,
    "two-planes": _two_planes,
    "sphere": _sphere,
    "sphere-cap": _sphere_cap,
    "catenoid-patch": _catenoid_patch,
    "punctured-plane": _punctured_plane,
}
PARABOLIC = {
    "shrinking-sphere": _shrinking_sphere,
    "graph-heat": _graph_heat,
    "translating-plane": _translating_plane,
    "half-plane-barrier": _half_plane_barrier,
}
SCENARIOS = tuple(ELLIPTIC) + tuple(PARABOLIC)


def run_scenario(cfg: ScenarioConfig) -> VerificationReport:
    """Build the scenario geometry and run its checks."""
    if cfg.name in ELLIPTIC:
        side, fn = "elliptic", ELLIPTIC[cfg.name]
    elif cfg.name in PARABOLIC:
        side, fn = "parabolic", PARABOLIC[cfg.name]
    else:
        raise UnknownScenarioError(f"unknown scenario {cfg.name!r}; known: {', '.join(SCENARIOS)}")
    report = VerificationReport(cfg.name, side)
    report.fitted.update(beta=None, C=None, eps0_working=None)
    fn(cfg, report)
    report.fitted.pop("osc_R", None)
    report.provenance = {
        "config": cfg.echo(),
        "version": __version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    return report
