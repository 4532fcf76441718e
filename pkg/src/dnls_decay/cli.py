"""Command-line front end: ``dnls-decay <subcommand> ...``.

Exit codes: 0 success, 1 a verdict failed, 2 invalid input, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import io
from ._dopri import StepLimitError
from .decay import (
    CertificateError,
    DecayCurve,
    DecayError,
    FitModel,
    ThetaProfile,
    eval_S,
    fit_rate,
    lower_bound_cert,
    lower_constant,
    upper_bound_cert,
)
from .nonlinearity import classify, nu_closed_form
from .pipeline import ExperimentConfig, PipelineError, PlotError, ComparisonReport, emit_plots, run_pipeline
from .profile import (
    ProfileError,
    ProfileField,
    ProfileIntegrationError,
    RemainderSpec,
    gaussian_profile,
    japan,
    lorentzian_profile,
    tracking_harness,
)
from .solver import ConfigError, SolverError, log_schedule, run_experiment

log = logging.getLogger("dnls_decay")

EXIT_OK, EXIT_VERDICT, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3

NUMERIC_ERRORS = (SolverError, ProfileIntegrationError, StepLimitError, FloatingPointError, ArithmeticError)
INPUT_ERRORS = (io.InputError, ConfigError, ProfileError, DecayError, PlotError, KeyError, ValueError, OSError)


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, PipelineError):
        exc = exc.cause
    if isinstance(exc, CertificateError):
        return EXIT_VERDICT
    if isinstance(exc, NUMERIC_ERRORS):
        return EXIT_NUMERIC
    if isinstance(exc, INPUT_ERRORS):
        return EXIT_INPUT
    return EXIT_NUMERIC


def _out_dir(args) -> Path:
    out = Path(getattr(args, "out", None) or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_config(args) -> ExperimentConfig | None:
    path = getattr(args, "config", None)
    return ExperimentConfig.load(path) if path else None


# ------------------------------------------------------------------ classify

def cmd_classify(args) -> int:
    cfg = _load_config(args)
    if args.coeffs:
        nl = io.read_coefficients(args.coeffs)
    elif cfg is not None:
        nl = cfg.nonlinearity()
    else:
        raise io.InputError("classify needs a coefficient file or --config")
    nu = nu_closed_form(nl)
    rep = classify(nu, tol=args.tol)
    if args.json:
        print(json.dumps(io._jsonable({"nu": str(nu), "re_part": nu.re_part, "im_part": nu.im_part,
                                       **rep.to_dict()}), indent=2, sort_keys=True))
        return EXIT_OK
    print(f"nu(xi) = {nu}")
    print(f"class: {rep.cls}")
    for key in ("c0", "xi0", "sup_im_nu", "best_c_star"):
        val = getattr(rep, key)
        if val is not None:
            print(f"{key} = {val:.17g}")
    print(f"tolerance = {rep.tolerance_used:g}")
    for note in rep.notes:
        print(f"note: {note}")
    return EXIT_OK


# ------------------------------------------------------------------- profile

def _read_mu(text: str):
    p = Path(text)
    if p.is_file():
        return nu_closed_form(io.read_coefficients(p))
    return io.parse_nu(text)


def _theta0(spec: str, xi: np.ndarray, eps: float) -> ProfileField:
    if spec == "gaussian":
        return gaussian_profile(xi, eps)
    if spec == "lorentzian":
        return lorentzian_profile(xi, eps)
    tab = io.read_csv(spec, ("xi", "re", "im"))
    vals = np.interp(xi, tab["xi"], tab["re"], 0, 0) + 1j * np.interp(xi, tab["xi"], tab["im"], 0, 0)
    return ProfileField(xi, vals, meta={"family": "file", "source": spec})


def cmd_profile(args) -> int:
    mu = _read_mu(args.mu)
    xi = io.parse_range(args.xi_grid)
    theta0 = _theta0(args.theta0, xi, args.eps)
    amp = args.eps ** 3 if args.amplitude is None else args.amplitude
    rho = RemainderSpec(kappa=args.kappa, amplitude=amp, omega=args.omega)
    t_eval = np.geomspace(1.0, args.tmax, args.n_times)
    rep = tracking_harness(theta0, mu, rho, t_eval, args.delta, args.eps, rtol=args.rtol,
                          workers=args.threads)
    if not rep.envelope_ok:
        print(f"FAIL remainder exceeds its envelope by a factor {rep.envelope_ratio:.3g}; nothing integrated")
        return EXIT_VERDICT
    out = _out_dir(args)
    w = japan(xi) ** 2

    def rows():
        for b, A in zip(rep.beta_run, rep.A_run):
            t = math.exp(b.tau)
            err = w * t ** (args.kappa - args.delta) * np.abs(b.values - A.values) / args.eps ** 3
            for k in range(xi.size):
                yield (t, xi[k], b.values[k].real, b.values[k].imag, abs(A.values[k]), err[k])

    path = io.write_csv(out / "profile.csv", ("t", "xi", "re_beta", "im_beta", "abs_A", "weighted_err"), rows())
    verdict = "PASS" if rep.passed else "FAIL"
    print(f"{verdict} weighted error sup {rep.sup:.6g}, log-log slope {rep.trend_slope:+.3e} on "
          f"t >= {rep.trend_start:g}; tail bound {rep.tail_bound:.2e}; wrote {path}")
    return EXIT_OK if rep.passed else EXIT_VERDICT


# --------------------------------------------------------------------- decay

def _theta(args) -> ThetaProfile:
    spec = args.theta
    if spec == "constant":
        th = ThetaProfile.constant(1.0, args.xi0)
    elif spec == "indicator":
        th = ThetaProfile.indicator(args.xi0 - 1.0, args.xi0 + 1.0, 1.0, args.xi0)
    elif spec == "gaussian":
        th = ThetaProfile.gaussian(1.0, args.xi0, 1.0, args.xi0, interval_halfwidth=1.0)
    else:
        tab = io.read_csv(spec)
        if "sq_modulus" in tab:
            sq = tab["sq_modulus"]
        elif "re" in tab and "im" in tab:
            sq = tab["re"] ** 2 + tab["im"] ** 2
        else:
            raise io.InputError(f"{spec} needs columns xi and sq_modulus (or re, im)")
        th = ThetaProfile.tabulated(tab["xi"], sq, args.xi0)
    if args.interval:
        lo, hi = (float(v) for v in args.interval.split(":"))
        th = th.with_interval(lo, hi)
    return th


def cmd_decay(args) -> int:
    theta = _theta(args)
    taus = io.parse_range(args.taus, default_kind="log")
    if np.any(taus < 1):
        raise io.InputError("taus must be >= 1")
    want_upper = args.cert in ("upper", "both")
    want_lower = args.cert in ("lower", "both")
    S = np.array([eval_S(theta, float(t)) for t in taus])
    upper = 4 * theta.sup_norm / np.sqrt(taus)
    C2 = lower_constant(theta)[0] if want_lower else float("nan")
    lower = C2 / np.sqrt(taus)
    out = _out_dir(args)
    path = io.write_csv(out / "decay.csv", ("tau", "S", "upper_bound", "lower_bound"), zip(taus, S, upper, lower))
    verdicts = []
    try:
        if want_upper:
            rep = upper_bound_cert(theta, taus)
            verdicts.append(f"upper {rep.verdict()}")
        if want_lower:
            rep = lower_bound_cert(theta, taus)
            verdicts.append(f"lower {rep.verdict()} (C2 = {C2:.12g})")
    except CertificateError as exc:
        print(f"FAIL {exc}; wrote {path}")
        return EXIT_VERDICT
    print(f"PASS {'; '.join(verdicts)}; wrote {path}")
    return EXIT_OK


# ----------------------------------------------------------------------- fit

def cmd_fit(args) -> int:
    tab = io.read_csv(args.csv, ("t", "value"))
    curve = DecayCurve(tab["t"], tab["value"], Path(args.csv).stem, "t")
    window = None
    if args.window:
        lo, hi = (float(v) for v in args.window.split(":"))
        window = (lo, hi)
    fit = fit_rate(curve, args.model, window)
    out = _out_dir(args)
    path = io.write_csv(out / "fit.csv", ("exponent", "prefactor", "residual", "tau_min", "tau_max", "eps_eff"),
                        [(fit.exponent, fit.prefactor, fit.residual, *fit.window,
                          float("nan") if fit.eps_eff is None else fit.eps_eff)])
    line = f"exponent {fit.exponent:+.6f} residual {fit.residual:.3e} over tau in [{fit.window[0]:g}, {fit.window[1]:g}]"
    if args.expect is None:
        print(f"FIT {line}; wrote {path}")
        return EXIT_OK
    ok = abs(fit.exponent - args.expect) <= args.tol
    print(f"{'PASS' if ok else 'FAIL'} {line} (expected {args.expect:+g} +/- {args.tol:g}); wrote {path}")
    return EXIT_OK if ok else EXIT_VERDICT


# ------------------------------------------------------------------ simulate

def cmd_simulate(args) -> int:
    cfg = _load_config(args) or ExperimentConfig()
    if args.coeffs:
        cfg.coeffs_file, cfg.coeffs, cfg.base_dir = str(Path(args.coeffs).resolve()), {}, "."
    if args.psi:
        if args.psi in ("gaussian", "sech"):
            cfg.family = args.psi
        else:
            cfg.family, cfg.psi_file = "file", str(Path(args.psi).resolve())
    for name in ("eps", "width", "L", "n", "tmax"):
        val = getattr(args, name)
        if val is not None:
            setattr(cfg, "t_max" if name == "tmax" else name, val)
    if args.auto_dt:
        cfg.dt = None
    elif args.dt is not None:
        cfg.dt = args.dt
    if args.record:
        cfg.schedule = args.record
    snaps = log_schedule(args.snapshots, cfg.t_max)
    sim = cfg.simulation(snapshots=[float(s) for s in snaps])
    out = _out_dir(args)
    manifest = {"config": cfg.to_text(), "seed": getattr(args, "seed", 0), "boundary_check": sim.boundary_report(),
                "data": {"family": sim.data.name, **sim.data.params}}
    try:
        sim.validate()
        res = run_experiment(sim, lambda r: log.info("t=%.6g l2=%.12g", r.t, r.l2_norm))
    except Exception as exc:
        manifest["error"] = str(exc)
        io.write_json(out / "manifest.json", manifest)
        raise
    io.write_csv(out / "diagnostics.csv", ("t", "l2", "h3", "j_h2", "mass_flux", "alpha_env"),
                 (r.row() for r in res.records))
    snap_files = {}
    for i, t in enumerate(sorted(res.snapshots)):
        name = f"alpha_{i:03d}.csv"
        a = res.snapshots[t]
        io.write_csv(out / name, ("xi", "re", "im"), zip(a.xi_grid, a.alpha.real, a.alpha.imag))
        snap_files[name] = t
    manifest.update({"dt_used": res.dt, "snapshots": snap_files, "n_records": len(res.records)})
    io.write_json(out / "manifest.json", manifest)
    last = res.records[-1]
    print(f"t={last.t:g} l2={last.l2_norm:.12g} (initial {res.records[0].l2_norm:.12g}); dt={res.dt:g}; "
          f"{len(snap_files)} snapshot(s) in {out}")
    return EXIT_OK


# ------------------------------------------------------------------ pipeline

def cmd_pipeline(args) -> int:
    cfg = _load_config(args)
    if cfg is None:
        raise io.InputError("pipeline needs --config")
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "threads", None):
        cfg.threads = args.threads
    out = Path(args.out) if getattr(args, "out", None) else cfg.resolve(cfg.out)
    report = run_pipeline(cfg, out, progress=lambda r: log.info("t=%.6g l2=%.12g", r.t, r.l2_norm))
    print(report.summary())
    print(f"{'PASS' if report.passed else 'FAIL'} report in {out}")
    return EXIT_OK if report.passed else EXIT_VERDICT


def cmd_plots(args) -> int:
    out = Path(getattr(args, "out", None) or ".")
    report = ComparisonReport.load(out)
    paths = emit_plots(report, out)
    print("wrote " + ", ".join(str(p) for p in paths))
    return EXIT_OK


# -------------------------------------------------------------------- parser

def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    d = argparse.SUPPRESS if suppress else None
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=d, help="experiment config (INI)")
    p.add_argument("--out", default=d, help="output directory")
    p.add_argument("--seed", type=int, default=d if suppress else 0)
    p.add_argument("--threads", type=int, default=d if suppress else 1)
    p.add_argument("--verbose", "-v", action="store_true", default=d if suppress else False)
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dnls-decay", parents=[_global_flags(False)],
                                     description="Decay laws for dissipative cubic derivative NLS.")
    sub = parser.add_subparsers(dest="command", required=True)
    common = [_global_flags(True)]

    p = sub.add_parser("classify", parents=common, help="nu(xi) and the dissipativity class")
    p.add_argument("coeffs", nargs="?", help="coefficient file (key = re,im)")
    p.add_argument("--json", action="store_true")
    p.add_argument("--tol", type=float, default=1e-12)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("profile", parents=common, help="profile ODE run and tracking harness")
    p.add_argument("--mu", required=True, help="coefficient file or inline 'nu0;nu1;nu2;nu3' (re,im each)")
    p.add_argument("--theta0", default="gaussian", help="gaussian, lorentzian or a CSV with xi,re,im")
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--kappa", type=float, default=0.2)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--amplitude", type=float, default=None, help="remainder amplitude (default eps^3)")
    p.add_argument("--omega", type=float, default=0.0)
    p.add_argument("--tmax", type=float, default=1e6)
    p.add_argument("--n-times", type=int, default=41)
    p.add_argument("--xi-grid", default="-10:10:101")
    p.add_argument("--rtol", type=float, default=1e-10)
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("decay", parents=common, help="S(tau) and its two-sided bounds")
    p.add_argument("--theta", default="constant", help="constant, indicator, gaussian or a CSV file")
    p.add_argument("--xi0", type=float, default=0.0)
    p.add_argument("--taus", default="1:1e6:13", help="a:b:n, log-spaced")
    p.add_argument("--cert", choices=("upper", "lower", "both"), default="both")
    p.add_argument("--interval", help="lo:hi interval for the lower bound")
    p.set_defaults(func=cmd_decay)

    p = sub.add_parser("fit", parents=common, help="fit a power of log t to a t,value CSV")
    p.add_argument("csv")
    p.add_argument("--model", choices=[m.value for m in FitModel], default="log_power")
    p.add_argument("--window", help="tau_min:tau_max")
    p.add_argument("--expect", type=float)
    p.add_argument("--tol", type=float, default=0.02)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", parents=common, help="pseudospectral PDE run")
    p.add_argument("--coeffs")
    p.add_argument("--psi", help="gaussian, sech or a CSV with x,re,im")
    p.add_argument("--width", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--L", type=float)
    p.add_argument("--n", type=int)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--dt", type=float)
    g.add_argument("--auto-dt", action="store_true")
    p.add_argument("--tmax", type=float)
    p.add_argument("--record", help="diagnostics schedule, e.g. log:1:tmax:40")
    p.add_argument("--snapshots", default="log:1:tmax:40")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("pipeline", parents=common, help="classify, simulate, predict, fit, compare")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("plots", parents=common, help="write plot scripts for a finished report")
    p.set_defaults(func=cmd_plots)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - mapped to an exit code
        code = _exit_code(exc)
        print(f"error: {exc}", file=sys.stderr)
        if args.verbose:
            log.exception("details")
        return code


if __name__ == "__main__":
    sys.exit(main())
