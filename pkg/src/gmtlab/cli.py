"""``gmtlab`` command line interface.

Exit codes: 0 every check passed, 1 some check failed (or the computation
itself failed), 2 usage or parse error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .geometry import Plane
from .harness import (SCENARIOS, Check, ConfigError, ScenarioConfig, UnknownScenarioError,
                      VerificationReport, apply_env, build_flow, emit_report, load_config,
                      run_scenario)
from .harness.report import curve_to_csv
from .huisken import parabolic_decay_fit, verify_huisken_monotonicity
from .io import DVFParseError, load_flow, load_varifold, parse_dvf, parse_flow, save_flow
from .monotonicity import ConvexWeight, dyadic_scales, fit_decay, verify_weighted_monotonicity
from .varifold import Ball, best_fit_plane

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(ValueError):
    pass


# argument helpers ----------------------------------------------------------------

def _floats(text: str, what: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError:
        raise UsageError(f"{what}: expected comma-separated numbers, got {text!r}") from None


def _radii(text: str) -> np.ndarray:
    parts = text.split(":")
    if len(parts) != 3:
        raise UsageError(f"--radii expects a:b:n, got {text!r}")
    try:
        a, b, n = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise UsageError(f"--radii expects a:b:n, got {text!r}") from None
    if not (0 < a <= b and n >= 1):
        raise UsageError("--radii needs 0 < a <= b and n >= 1")
    return np.linspace(a, b, n)


def _weight(spec: str, d: int) -> ConvexWeight:
    try:
        return ConvexWeight.from_spec(spec, d)
    except ValueError as exc:
        raise UsageError(f"--f: {exc}") from None


def _load_any(path: str):
    """Load a DVF or DVFLOW file, deciding by its first keyword."""
    text = Path(path).read_text(encoding="utf-8")
    for line in text.splitlines():
        s = line.strip()
        if s and not s.startswith("#"):
            if s.split()[0] == "DVFLOW":
                return parse_flow(text)
            return parse_dvf(text)
    raise DVFParseError("empty file", 1)


def _plane(spec: str, points: np.ndarray, fallback) -> Plane:
    if spec == "auto":
        return fallback()
    try:
        axes = [int(v) for v in spec.split(",")]
    except ValueError:
        raise UsageError(f"--plane expects 'auto' or axis indices like 0,1, got {spec!r}") from None
    return Plane.coordinate(points.shape[1], axes)


def _report_out(report: VerificationReport, args) -> int:
    for line in report.summary_lines():
        print(line)
    if getattr(args, "out", None):
        fmt = getattr(args, "format", None) or ("csv" if str(args.out).endswith(".csv") else "json")
        emit_report(report, fmt, args.out)
    return report.exit_code


def _provenance(args) -> dict:
    return {"command": " ".join(sys.argv[1:]) if sys.argv else "", "version": __version__,
            "args": {k: v for k, v in vars(args).items() if k != "func"}}


# commands ------------------------------------------------------------------------------

def _config(args, name: str) -> ScenarioConfig:
    if args.config:
        cfg = load_config(args.config, name)
    else:
        cfg = apply_env(ScenarioConfig(name))
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def cmd_scenario_run(args) -> int:
    if args.name not in SCENARIOS:
        raise UsageError(f"unknown scenario {args.name!r}; known: {', '.join(SCENARIOS)}")
    cfg = _config(args, args.name)
    if args.out:
        cfg = cfg.replace(out_dir=args.out)
    if args.format:
        cfg = cfg.replace(format=args.format)
    report = run_scenario(cfg)
    for line in report.summary_lines():
        print(line)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = emit_report(report, cfg.format, out / f"{cfg.name}.{cfg.format}")
    print(f"wrote {', '.join(str(p) for p in paths)}")
    return report.exit_code


def cmd_verify_mono(args) -> int:
    V = load_varifold(args.input)
    f = _weight(args.f, V.d)
    radii = _radii(args.radii)
    res = verify_weighted_monotonicity(V, f, radii, args.c0, K=args.K)
    report = VerificationReport(Path(args.input).name, "elliptic", provenance=_provenance(args))
    report.add(Check.at_least("monotonicity", res.min_slack, 0.0, res.tol_disc))
    report.add(Check.at_most("monotonicity-C0", res.smallest_C0, args.c0, 0.0))
    report.fitted.update(smallest_C0=res.smallest_C0, density_max=res.density_max,
                         radii=res.curve.radii, values=res.curve.values)
    return _report_out(report, args)


def cmd_verify_huisken(args) -> int:
    track = load_flow(args.flow)
    x0 = np.array(_floats(args.x0, "--x0"))
    if x0.size != track.d:
        raise UsageError(f"--x0 has {x0.size} coordinates, the flow lives in R^{track.d}")
    f = _weight(args.f, track.d)
    r = args.r
    lo = max(-r * r, track.times[0] - args.t0)
    if lo >= 0:
        raise UsageError("the flow has no frames before t0")
    times = np.linspace(lo, 0.0, args.n_times + 1)[:-1]
    res = verify_huisken_monotonicity(track, f, (x0, args.t0), r, times, C=args.C, K=args.K)
    report = VerificationReport(Path(args.flow).name, "parabolic", provenance=_provenance(args))
    report.add(Check.at_least("huisken", res.min_slack, 0.0, res.tol_disc))
    report.fitted.update(smallest_C=res.smallest_C, E1=res.E1, times=res.times, values=res.values)
    return _report_out(report, args)


def cmd_decay_fit(args) -> int:
    obj = _load_any(args.input)
    scales = dyadic_scales(args.R, args.scales)
    if hasattr(obj, "frames"):
        V = obj.frames[-1]
        x0 = np.zeros(obj.d)
        S = _plane(args.plane, V.x, lambda: best_fit_plane(V, Ball(x0, args.R)))
        fit = parabolic_decay_fit(obj, S, args.R, scales, (x0, float(obj.times[-1])))
        side = "parabolic"
    else:
        S = _plane(args.plane, obj.x, lambda: best_fit_plane(obj, Ball.at_origin(obj.d, args.R)))
        fit = fit_decay(obj, S, args.R, scales)
        side = "elliptic"
    report = VerificationReport(Path(args.input).name, side, provenance=_provenance(args))
    if fit.applicable:
        ok = fit.beta_fit > 0
        report.add(Check("decay", fit.beta_fit, 0.0, 0.0, "pass" if ok else "fail"))
    else:
        report.add(Check.not_applicable("decay", fit.reason))
    report.fitted.update(beta=fit.beta_fit, C=fit.C_fit, curves={"decay": fit.curve_rows()})
    print(f"beta = {fit.beta_fit:.6g}  C = {fit.C_fit:.6g}")
    if args.curve:
        Path(args.curve).write_text(curve_to_csv(fit.curve_rows()), encoding="utf-8")
    return _report_out(report, args)


def cmd_flow_run(args) -> int:
    cfg = _config(args, args.scenario)
    try:
        track = build_flow(cfg)
    except UnknownScenarioError:
        raise UsageError(f"{args.scenario!r} is not a flow scenario") from None
    save_flow(track, args.out)
    print(f"wrote {len(track)} frames to {args.out}")
    return EXIT_OK


def cmd_graph_extract(args) -> int:
    from .regularity import extract_graph

    obj = _load_any(args.input)
    V = obj.frames[-1] if hasattr(obj, "frames") else obj
    vals = _floats(args.ball, "--ball")
    if len(vals) != V.d + 1:
        raise UsageError(f"--ball expects {V.d} centre coordinates and a radius")
    B = Ball(np.array(vals[:-1]), vals[-1])
    S = _plane(args.plane, V.x, lambda: best_fit_plane(V, B))
    patch = extract_graph(V, B, S, alpha=args.alpha, C=args.C)
    header, rows = patch.to_rows()
    if args.out:
        patch.to_csv(args.out)
        print(f"wrote {len(rows)} cells to {args.out}; c1alpha_norm = {patch.c1alpha_norm:.6g}")
    else:
        print(",".join(header))
        for row in rows:
            print(",".join(format(v, ".17g") for v in row))
    return EXIT_OK


# parser --------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gmtlab", description="Numerical checks for varifolds and Brakke flows.")
    p.add_argument("--version", action="version", version=f"gmtlab {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="group", required=True)

    sc = sub.add_parser("scenario").add_subparsers(dest="action", required=True)
    run = sc.add_parser("run", help="run a named scenario")
    run.add_argument("name")
    run.add_argument("--config")
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help="output directory")
    run.add_argument("--format", choices=["json", "csv"])
    run.set_defaults(func=cmd_scenario_run)

    ver = sub.add_parser("verify").add_subparsers(dest="action", required=True)
    mono = ver.add_parser("allard-mono", help="weighted monotonicity on a DVF file")
    mono.add_argument("--input", required=True)
    mono.add_argument("--f", default="const 1", help="weight spec: const c | tlin a.. y0.. c | abslin a..")
    mono.add_argument("--c0", type=float, default=10.0)
    mono.add_argument("--radii", required=True, help="a:b:n")
    mono.add_argument("--K", type=float, default=1.0)
    mono.add_argument("--out")
    mono.set_defaults(func=cmd_verify_mono)
    hk = ver.add_parser("huisken", help="weighted Huisken monotonicity on a DVFLOW file")
    hk.add_argument("--flow", required=True)
    hk.add_argument("--x0", required=True)
    hk.add_argument("--t0", type=float, required=True)
    hk.add_argument("--r", type=float, required=True)
    hk.add_argument("--f", default="const 1")
    hk.add_argument("--C", type=float, default=10.0)
    hk.add_argument("--K", type=float, default=1.0)
    hk.add_argument("--n-times", type=int, default=20)
    hk.add_argument("--out")
    hk.set_defaults(func=cmd_verify_huisken)

    dec = sub.add_parser("decay").add_subparsers(dest="action", required=True)
    fit = dec.add_parser("fit", help="oscillation decay exponent")
    fit.add_argument("--input", required=True)
    fit.add_argument("--plane", default="auto")
    fit.add_argument("--R", type=float, required=True)
    fit.add_argument("--scales", type=int, default=5)
    fit.add_argument("--curve", help="write (log r, log osc) CSV here")
    fit.add_argument("--out")
    fit.set_defaults(func=cmd_decay_fit)

    fl = sub.add_parser("flow").add_subparsers(dest="action", required=True)
    frun = fl.add_parser("run", help="simulate a flow scenario and save it as DVFLOW")
    frun.add_argument("--scenario", required=True)
    frun.add_argument("--config")
    frun.add_argument("--seed", type=int)
    frun.add_argument("--out", required=True)
    frun.set_defaults(func=cmd_flow_run)

    gr = sub.add_parser("graph").add_subparsers(dest="action", required=True)
    ex = gr.add_parser("extract", help="graph heights over a ball")
    ex.add_argument("--input", required=True)
    ex.add_argument("--ball", required=True, help="c_1,..,c_d,r")
    ex.add_argument("--plane", default="auto")
    ex.add_argument("--alpha", type=float, default=0.5)
    ex.add_argument("--C", type=float, default=10.0)
    ex.add_argument("--out")
    ex.set_defaults(func=cmd_graph_extract)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, DVFParseError, UnknownScenarioError, FileNotFoundError) as exc:
        print(f"gmtlab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"gmtlab: check failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
