"""End-to-end experiment: classify, simulate, predict from the profile law,
fit, and compare.  Every stage writes flat files and every later stage
reads its inputs back from them, so a rerun can resume after the last
stage whose outputs are intact and still produce identical bytes.
"""
from __future__ import annotations

import configparser
import hashlib
import io as _io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from . import io
from .decay import DecayCurve, FitModel, fit_rate, predicted_l2
from .nonlinearity import (
    DISSIPATIVE_CLASSES,
    CubicNonlinearity,
    DissipativityClass,
    classify,
    nu_closed_form,
)
from .profile import ProfileField
from .solver import (
    ConfigError,
    SimulationConfig,
    gaussian_data,
    log_schedule,
    run_experiment,
    sech_data,
    tabulated_data,
)

log = logging.getLogger(__name__)

STAGES = ("classify", "simulate", "profile", "fit", "compare")
STAGE_OUTPUTS = {
    "classify": ("classify.json", "nu.csv"),
    "simulate": ("diagnostics.csv", "alpha_0.csv", "alpha_e.csv", "alpha_map.csv", "manifest.json"),
    "profile": ("profile_curve.csv", "profile_at_pde.csv"),
    "fit": ("fits.json",),
    "compare": ("comparison.csv", "report.json"),
}
PLOT_INPUTS = ("comparison.csv", "profile_curve.csv", "nu.csv", "alpha_map.csv")


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage, self.cause = stage, cause


# ------------------------------------------------------------------- config

@dataclass
class ExperimentConfig:
    coeffs: dict = field(default_factory=dict)
    coeffs_file: str | None = None
    family: str = "gaussian"
    eps: float = 0.3
    width: float = 2.0
    k0: float = 0.0
    psi_file: str | None = None
    L: float = 8192.0
    n: int = 16384
    dt: float | None = 0.05
    t_max: float = 1000.0
    schedule: str = "log:1:tmax:40"
    fit_model: str = "log_power"
    tau_min: float = 1e2
    tau_max: float = 1e6
    n_taus: int = 41
    compare_t_min: float = 10.0
    gap_tol: float = 0.10
    exponent_tol: float = 0.02
    flat_tol: float = 1e-6
    out: str = "out"
    seed: int = 0
    threads: int = 1
    base_dir: str = field(default=".", repr=False, compare=False)

    _LAYOUT = {
        "initial": ("family", "eps", "width", "k0", "psi_file"),
        "solver": ("L", "n", "dt", "t_max", "schedule"),
        "decay": ("fit_model", "tau_min", "tau_max", "n_taus"),
        "verdict": ("compare_t_min", "gap_tol", "exponent_tol", "flat_tol"),
        "run": ("out", "seed", "threads"),
    }

    def resolve(self, p: str | None) -> Path | None:
        if p is None:
            return None
        p = Path(p)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def nonlinearity(self) -> CubicNonlinearity:
        if self.coeffs_file:
            base = io.read_coefficients(self.resolve(self.coeffs_file)).to_dict(nonzero_only=True)
            base.update(self.coeffs)
            return CubicNonlinearity.from_dict(base)
        return CubicNonlinearity.from_dict(self.coeffs)

    def initial_data(self):
        if self.family == "gaussian":
            return gaussian_data(self.width, self.k0)
        if self.family == "sech":
            return sech_data(self.width)
        if self.family == "file":
            tab = io.read_csv(self.resolve(self.psi_file), ("x", "re", "im"))
            return tabulated_data(tab["x"], tab["re"] + 1j * tab["im"])
        raise io.InputError(f"unknown initial-data family {self.family!r}")

    def record_times(self) -> list[float]:
        return log_schedule(self.schedule, self.t_max)

    def simulation(self, snapshots=()) -> SimulationConfig:
        times = sorted(set(self.record_times()) | {math.e})
        return SimulationConfig(self.nonlinearity(), self.initial_data(), eps=self.eps, L=self.L, n=self.n,
                                dt=self.dt, t_max=self.t_max, record_times=times,
                                snapshot_times=tuple(snapshots))

    def taus(self) -> np.ndarray:
        return np.geomspace(self.tau_min, self.tau_max, self.n_taus)

    def validate(self):
        """Cross-checks that must hold before anything is computed."""
        for p in (self.coeffs_file, self.psi_file if self.family == "file" else None):
            if p is not None and not self.resolve(p).is_file():
                raise io.InputError(f"referenced file does not exist: {self.resolve(p)}")
        if self.family == "file" and self.psi_file is None:
            raise io.InputError("family = file needs psi_file")
        self.nonlinearity()
        FitModel(self.fit_model)
        if not 0 < self.eps:
            raise ConfigError("eps must be positive")
        if self.t_max <= math.e:
            raise ConfigError("t_max must exceed e so the profile can be seeded at t = e")
        if not math.e <= self.compare_t_min < self.t_max:
            raise ConfigError("compare_t_min must lie in [e, t_max)")
        if not 1.0 <= self.tau_min < self.tau_max or self.n_taus < 8:
            raise ConfigError("tau window must satisfy 1 <= tau_min < tau_max with >= 8 points")
        in_window = [t for t in self.record_times() if self.compare_t_min <= t <= self.t_max]
        if len(in_window) < 2:
            raise ConfigError("schedule leaves fewer than two comparison times in the window")
        self.simulation().validate()

    # -- text form

    def to_text(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        nl_sec = {}
        if self.coeffs_file:
            nl_sec["file"] = self.coeffs_file
        for k, v in sorted(CubicNonlinearity.from_dict(self.coeffs).to_dict(nonzero_only=True).items()):
            nl_sec[k] = f"{v.real + 0.0!r},{v.imag + 0.0!r}"
        cp["nonlinearity"] = nl_sec
        for sec, keys in self._LAYOUT.items():
            cp[sec] = {}
            for k in keys:
                v = getattr(self, k)
                if v is None and k != "dt":
                    continue
                if v is None:
                    v = "auto"
                cp[sec][k] = repr(v + 0.0) if isinstance(v, float) else str(v)
        buf = _io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str, base_dir: str = ".") -> "ExperimentConfig":
        cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise io.InputError(f"config: {exc}") from None
        known = {"nonlinearity", *cls._LAYOUT}
        unknown = set(cp.sections()) - known
        if unknown:
            raise io.InputError(f"config: unknown section(s) {sorted(unknown)}")
        kw: dict = {"base_dir": base_dir}
        types = {f.name: f.type for f in fields(cls)}
        if cp.has_section("nonlinearity"):
            coeffs = {}
            for k, v in cp["nonlinearity"].items():
                if k == "file":
                    kw["coeffs_file"] = v
                else:
                    coeffs[k] = io.parse_complex(v)
            try:
                kw["coeffs"] = CubicNonlinearity.from_dict(coeffs).to_dict(nonzero_only=True)
            except KeyError as exc:
                raise io.InputError(f"config: {exc}") from None
        for sec, keys in cls._LAYOUT.items():
            if not cp.has_section(sec):
                continue
            for k, v in cp[sec].items():
                if k not in keys:
                    raise io.InputError(f"config: unknown key {sec}.{k}")
                kw[k] = _convert(k, v, types[k])
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.is_file():
            raise io.InputError(f"config file not found: {path}")
        return cls.from_text(path.read_text(), str(path.parent))

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


def _convert(key, value: str, typ):
    value = value.strip()
    try:
        if key == "dt":
            return None if value.lower() == "auto" else float(value)
        if typ in ("int", int):
            return int(value)
        if typ in ("float", float):
            return float(value)
    except ValueError:
        raise io.InputError(f"config: {key} = {value!r} is not a number") from None
    if key == "psi_file" and not value:
        return None
    return value


# ------------------------------------------------------------------- report

@dataclass
class ComparisonReport:
    t: np.ndarray
    pde_l2: np.ndarray
    profile_l2: np.ndarray
    rel_gap: np.ndarray
    cls: str
    c0: float | None
    xi0: float | None
    profile_fit: dict
    pde_fit: dict
    tolerances: dict
    seeding: dict = field(default_factory=dict)
    verdicts: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.verdicts:
            self.verdicts = self.compute_verdicts()

    @property
    def passed(self) -> bool:
        return all(self.verdicts.values())

    def compute_verdicts(self) -> dict:
        """Pass/fail from the stored table, fits and tolerances only."""
        tol = self.tolerances
        cls = DissipativityClass(self.cls)
        v = {"gap": bool(np.max(self.rel_gap) <= tol["gap_tol"])}
        e = self.profile_fit["exponent"]
        if cls is DissipativityClass.WEAKLY_DISSIPATIVE:
            v["exponent"] = abs(e + 0.25) <= tol["exponent_tol"]
        elif cls is DissipativityClass.NULL_IMAGINARY:
            v["exponent"] = abs(e) <= tol["exponent_tol"]
        else:
            # only the lower-rate side is established for these classes
            v["exponent"] = e >= -0.5 - tol["exponent_tol"]
        if cls is DissipativityClass.NULL_IMAGINARY:
            v["flat"] = bool(np.max(np.abs(self.pde_l2 / self.pde_l2[0] - 1)) <= tol["flat_tol"])
        else:
            v["monotone"] = bool(np.all(np.diff(self.pde_l2) <= 1e-13 * self.pde_l2[:-1]))
        return {k: bool(x) for k, x in v.items()}

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("t", "pde_l2", "profile_l2", "rel_gap"):
            d.pop(k)
        d["class"] = d.pop("cls")
        d["passed"] = self.passed
        return d

    @classmethod
    def load(cls, out_dir) -> "ComparisonReport":
        out_dir = Path(out_dir)
        tab = io.read_csv(out_dir / "comparison.csv", ("t", "pde_l2", "profile_l2", "rel_gap"))
        d = io.read_json(out_dir / "report.json")
        return cls(tab["t"], tab["pde_l2"], tab["profile_l2"], tab["rel_gap"], d["class"], d["c0"], d["xi0"],
                   d["profile_fit"], d["pde_fit"], d["tolerances"], d.get("seeding", {}), d["verdicts"])

    def summary(self) -> str:
        lines = [f"class: {self.cls}" + (f"  c0={self.c0:.6g} xi0={self.xi0:.6g}" if self.c0 is not None else "")]
        lines.append(f"profile exponent: {self.profile_fit['exponent']:+.5f} "
                     f"over tau in [{self.profile_fit['window'][0]:g}, {self.profile_fit['window'][1]:g}]")
        lines.append(f"pde exponent (reachable window): {self.pde_fit['exponent']:+.5f}")
        lines.append(f"max relative gap pde vs profile: {np.max(self.rel_gap):.3e}")
        lines += [f"{k}: {'PASS' if ok else 'FAIL'}" for k, ok in self.verdicts.items()]
        return "\n".join(lines)


# ------------------------------------------------------------------- stages

def _alpha_rows(a):
    return zip(a.xi_grid, a.alpha.real, a.alpha.imag)


def _load_alpha(path, time: float, tau: float) -> ProfileField:
    """Read an alpha snapshot as a profile with a smooth interpolant.

    Nodes below 1e-14 of the peak are dropped; the spline is zero
    outside the retained range.
    """
    tab = io.read_csv(path, ("xi", "re", "im"))
    xi, vals = tab["xi"], tab["re"] + 1j * tab["im"]
    keep = np.flatnonzero(np.abs(vals) >= 1e-14 * np.max(np.abs(vals)))
    lo, hi = max(keep[0] - 2, 0), min(keep[-1] + 3, xi.size)
    xi, vals = xi[lo:hi], vals[lo:hi]
    spl = CubicSpline(xi, vals)

    def func(x):
        x = np.asarray(x, dtype=float)
        return np.where((x >= xi[0]) & (x <= xi[-1]), spl(np.clip(x, xi[0], xi[-1])), 0.0)

    return ProfileField(xi, vals, time=tau, time_kind="tau", meta={"t": time}, func=func)


def stage_classify(cfg: ExperimentConfig, out: Path):
    nl = cfg.nonlinearity()
    nu = nu_closed_form(nl)
    rep = classify(nu)
    centre = rep.xi0 if rep.xi0 is not None else 0.0
    xi = np.linspace(centre - 5, centre + 5, 401)
    io.write_csv(out / "nu.csv", ("xi", "re_nu", "im_nu"), zip(xi, nu.real(xi), nu.imag(xi)))
    io.write_json(out / "classify.json", {"nu": str(nu), "re_part": nu.re_part, "im_part": nu.im_part,
                                          "coefficients": nl.to_dict(nonzero_only=True), **rep.to_dict()})


def stage_simulate(cfg: ExperimentConfig, out: Path, progress=None):
    sim = cfg.simulation(snapshots=[0.0, math.e, *cfg.record_times()])
    res = run_experiment(sim, progress)
    io.write_csv(out / "diagnostics.csv", ("t", "l2", "h3", "j_h2", "mass_flux", "alpha_env"),
                 (r.row() for r in res.records))
    io.write_csv(out / "alpha_0.csv", ("xi", "re", "im"), _alpha_rows(res.snapshots[0.0]))
    io.write_csv(out / "alpha_e.csv", ("xi", "re", "im"), _alpha_rows(res.snapshots[math.e]))
    rows = []
    for t in sorted(res.snapshots):
        a = res.snapshots[t]
        sel = np.abs(a.xi_grid) <= sim.data.xi_max
        stride = max(1, int(sel.sum()) // 256)
        xs, al = a.xi_grid[sel][::stride], a.alpha[sel][::stride]
        rows += [(t, x, w) for x, w in zip(xs, (1 + xs ** 2) * np.abs(al))]
    io.write_csv(out / "alpha_map.csv", ("t", "xi", "weighted_abs"), rows)
    io.write_json(out / "manifest.json", {
        "config": cfg.to_text(), "fingerprint": cfg.fingerprint(), "seed": cfg.seed,
        "dt_used": res.dt, "boundary_check": res.boundary, "n_records": len(res.records),
        "data": {"family": sim.data.name, **sim.data.params},
    })


def stage_profile(cfg: ExperimentConfig, out: Path):
    nu = nu_closed_form(cfg.nonlinearity())
    rep = classify(nu)
    if rep.cls not in DISSIPATIVE_CLASSES and rep.cls is not DissipativityClass.NULL_IMAGINARY:
        raise io.InputError(f"no profile prediction for class {rep.cls}")
    seed_e = _load_alpha(out / "alpha_e.csv", math.e, 1.0)
    seed_0 = _load_alpha(out / "alpha_0.csv", 0.0, 0.0)
    diag = io.read_csv(out / "diagnostics.csv", ("t", "l2"))
    t_pde = diag["t"][diag["t"] >= math.e]

    def run(args):
        seed, tau, tau_seed = args
        return predicted_l2(seed, nu, tau=tau, tau_seed=tau_seed, report=rep)

    taus = cfg.taus()
    jobs = [(seed_e, float(t), 1.0) for t in taus]
    jobs += [(seed_e, float(np.log(t)), 1.0) for t in t_pde]
    jobs += [(seed_0, float(np.log(t)), 0.0) for t in t_pde]
    with ThreadPoolExecutor(max(1, cfg.threads)) as ex:
        vals = list(ex.map(run, jobs))
    k = len(taus)
    io.write_csv(out / "profile_curve.csv", ("tau", "value"), zip(taus, vals[:k]))
    m = len(t_pde)
    io.write_csv(out / "profile_at_pde.csv", ("t", "profile_l2", "profile_l2_psi"),
                 zip(t_pde, vals[k:k + m], vals[k + m:]))


def _fit_dict(f) -> dict:
    return {"exponent": f.exponent, "prefactor": f.prefactor, "residual": f.residual,
            "window": list(f.window), "model": f.model.value, "eps_eff": f.eps_eff, "n_points": f.n_points}


def stage_fit(cfg: ExperimentConfig, out: Path):
    pc = io.read_csv(out / "profile_curve.csv", ("tau", "value"))
    prof = fit_rate(DecayCurve(pc["tau"], pc["value"], "profile", "tau"), cfg.fit_model,
                    (cfg.tau_min, cfg.tau_max))
    diag = io.read_csv(out / "diagnostics.csv", ("t", "l2"))
    sel = diag["t"] >= math.e
    pde_curve = DecayCurve(diag["t"][sel], diag["l2"][sel], "pde", "t")
    pde = fit_rate(pde_curve, FitModel.LOG_POWER)
    io.write_json(out / "fits.json", {"profile": _fit_dict(prof), "pde": _fit_dict(pde)})


def stage_compare(cfg: ExperimentConfig, out: Path) -> ComparisonReport:
    cl = io.read_json(out / "classify.json")
    diag = io.read_csv(out / "diagnostics.csv", ("t", "l2"))
    pap = io.read_csv(out / "profile_at_pde.csv", ("t", "profile_l2", "profile_l2_psi"))
    fits = io.read_json(out / "fits.json")
    lookup = dict(zip(diag["t"], diag["l2"]))
    sel = (pap["t"] >= cfg.compare_t_min * (1 - 1e-12)) & (pap["t"] <= cfg.t_max)
    t = pap["t"][sel]
    pde = np.array([lookup[x] for x in t])
    prof = pap["profile_l2"][sel]
    gap = np.abs(pde - prof) / prof
    gap_psi = np.abs(pde - pap["profile_l2_psi"][sel]) / pap["profile_l2_psi"][sel]
    tol = {"gap_tol": cfg.gap_tol, "exponent_tol": cfg.exponent_tol, "flat_tol": cfg.flat_tol,
           "compare_t_min": cfg.compare_t_min}
    report = ComparisonReport(t, pde, prof, gap, cl["class"], cl["c0"], cl["xi0"], fits["profile"],
                              fits["pde"], tol, {"alpha_e_max_gap": float(gap.max()),
                                                 "eps_psi_hat_max_gap": float(gap_psi.max())})
    io.write_csv(out / "comparison.csv", ("t", "pde_l2", "profile_l2", "rel_gap"), zip(t, pde, prof, gap))
    io.write_json(out / "report.json", report.to_dict())
    return report


_RUNNERS = {
    "classify": stage_classify,
    "simulate": stage_simulate,
    "profile": stage_profile,
    "fit": stage_fit,
    "compare": stage_compare,
}


def _completed(out: Path, fingerprint: str) -> list[str]:
    path = out / "stages.json"
    if not path.is_file():
        return []
    rec = io.read_json(path)
    if rec.get("fingerprint") != fingerprint:
        return []
    done = []
    for s in STAGES:
        if s in rec.get("done", []) and all((out / f).is_file() for f in STAGE_OUTPUTS[s]):
            done.append(s)
        else:
            break
    return done


def run_pipeline(cfg: ExperimentConfig, out_dir=None, progress=None, plots: bool = True) -> ComparisonReport:
    """Run (or resume) every stage and return the comparison report."""
    out = Path(out_dir if out_dir is not None else cfg.resolve(cfg.out))
    try:
        cfg.validate()
    except (ValueError, KeyError) as exc:
        raise PipelineError("config", exc) from exc
    out.mkdir(parents=True, exist_ok=True)
    fp = cfg.fingerprint()
    done = _completed(out, fp)
    if done:
        log.info("resuming after stage %s", done[-1])
    (out / "config.ini").write_text(cfg.to_text())
    for stage in STAGES:
        if stage in done:
            continue
        log.info("stage %s", stage)
        try:
            if stage == "simulate":
                stage_simulate(cfg, out, progress)
            else:
                _RUNNERS[stage](cfg, out)
        except Exception as exc:
            raise PipelineError(stage, exc) from exc
        done.append(stage)
        io.write_json(out / "stages.json", {"fingerprint": fp, "done": done})
    report = ComparisonReport.load(out)
    if plots:
        emit_plots(report, out)
    return report


# -------------------------------------------------------------------- plots

_DECAY_SCRIPT = '''import csv
import matplotlib.pyplot as plt


def load(name):
    with open(name) as fh:
        rows = list(csv.DictReader(fh))
    return {k: [float(r[k]) for r in rows] for k in rows[0]}


cmp = load("comparison.csv")
prof = load("profile_curve.csv")
fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4))
ax1.loglog(cmp["t"], cmp["pde_l2"], "o", label="PDE ||u(t)||")
ax1.loglog(cmp["t"], cmp["profile_l2"], "-", label="profile law")
ax1.set_xlabel("t")
ax1.legend()
ax2.loglog(prof["tau"], prof["value"], "-")
ax2.set_xlabel("tau = log t")
ax2.set_ylabel("||A(tau)||")
ax2.set_title("{title}")
fig.tight_layout()
fig.savefig("decay_overlay.png", dpi=150)
'''

_NU_SCRIPT = '''import csv
import matplotlib.pyplot as plt

with open("nu.csv") as fh:
    rows = list(csv.DictReader(fh))
xi = [float(r["xi"]) for r in rows]
im = [float(r["im_nu"]) for r in rows]
fig, ax = plt.subplots(figsize=(6, 4))
ax.plot(xi, im)
ax.axhline(0.0, color="k", lw=0.5)
ax.set_xlabel("xi")
ax.set_ylabel("Im nu(xi)")
ax.set_title("{title}")
{annotation}
fig.tight_layout()
fig.savefig("im_nu.png", dpi=150)
'''

_ALPHA_SCRIPT = '''import csv
import matplotlib.pyplot as plt
import numpy as np

with open("alpha_map.csv") as fh:
    rows = list(csv.DictReader(fh))
t = np.array([float(r["t"]) for r in rows])
xi = np.array([float(r["xi"]) for r in rows])
w = np.array([float(r["weighted_abs"]) for r in rows])
times = np.unique(t)
grid = np.array([w[t == s] for s in times])
xs = xi[t == times[0]]
fig, ax = plt.subplots(figsize=(7, 4))
mesh = ax.pcolormesh(xs, np.maximum(times, times[1] / 2), grid, shading="nearest")
ax.set_yscale("log")
ax.set_xlabel("xi")
ax.set_ylabel("t")
fig.colorbar(mesh, label="<xi>^2 |alpha(t, xi)|")
fig.tight_layout()
fig.savefig("alpha_envelope.png", dpi=150)
'''


class PlotError(OSError):
    pass


def emit_plots(report: ComparisonReport, out_dir) -> list[Path]:
    """Write three matplotlib scripts that read the CSVs in ``out_dir``."""
    out = Path(out_dir)
    for name in PLOT_INPUTS:
        if not (out / name).is_file():
            raise PlotError(f"plot input missing: {out / name}")
    title = f"{report.cls}, profile exponent {report.profile_fit['exponent']:+.4f}"
    if report.c0 is not None:
        annotation = (f'ax.annotate("c0 = {report.c0:.6g}, xi0 = {report.xi0:.6g}", '
                      f'xy=({report.xi0!r}, 0.0), xytext=(0.05, 0.9), textcoords="axes fraction", '
                      f'arrowprops={{"arrowstyle": "->"}})')
    else:
        annotation = ""
    scripts = {
        "plot_decay.py": _DECAY_SCRIPT.replace("{title}", title),
        "plot_im_nu.py": _NU_SCRIPT.replace("{title}", report.cls).replace("{annotation}", annotation),
        "plot_alpha_envelope.py": _ALPHA_SCRIPT,
    }
    paths = []
    try:
        for name, text in scripts.items():
            p = out / name
            p.write_text(text)
            paths.append(p)
    except OSError as exc:
        raise PlotError(f"cannot write plot scripts to {out}: {exc}") from exc
    return paths
