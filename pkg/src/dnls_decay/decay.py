"""The decay integral S(tau), its two-sided tau^{-1/2} bounds, predicted
L^2 curves of the profile, and decay-exponent fits.
"""
from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, optimize

from .nonlinearity import DissipativityClass, NuPolynomial, classify
from .profile import ProfileField

QUAD_RTOL = 1e-12
BOUND_SLACK = 1e-10


class DecayError(ValueError):
    pass


class CertificateError(AssertionError):
    """A bound that must hold for every admissible theta was violated."""


@dataclass
class ThetaProfile:
    """|theta(xi)|^2 as a callable, plus the constants the bounds need.

    ``inf_on_interval`` is ((lo, hi), b) with b = inf over (lo, hi) of |theta|^2.
    ``breakpoints`` lists xi where |theta|^2 is not smooth.
    """

    sq_modulus: Callable[[np.ndarray], np.ndarray]
    xi0: float
    sup_norm: float
    family: str = "tabulated"
    params: dict = field(default_factory=dict)
    breakpoints: tuple[float, ...] = ()
    inf_on_interval: tuple[tuple[float, float], float] | None = None

    def __post_init__(self):
        if not np.isfinite(self.sup_norm) or self.sup_norm < 0:
            raise DecayError("theta must be bounded")
        if self.inf_on_interval is not None:
            (lo, hi), b = self.inf_on_interval
            if not lo < self.xi0 < hi:
                raise DecayError("the interval carrying inf |theta| must contain xi0")

    def __call__(self, xi):
        return self.sq_modulus(np.asarray(xi, dtype=float))

    @classmethod
    def constant(cls, level=1.0, xi0=0.0) -> "ThetaProfile":
        c2 = float(level) ** 2
        return cls(lambda x: np.full(np.shape(x), c2), xi0, abs(level), "constant",
                   {"level": level}, inf_on_interval=((-np.inf, np.inf), c2))

    @classmethod
    def indicator(cls, lo=-1.0, hi=1.0, level=1.0, xi0=0.0) -> "ThetaProfile":
        c2 = float(level) ** 2
        f = lambda x: np.where((x >= lo) & (x <= hi), c2, 0.0)  # noqa: E731
        inf = ((lo, hi), c2) if lo < xi0 < hi else None
        return cls(f, xi0, abs(level), "indicator", {"lo": lo, "hi": hi, "level": level},
                   breakpoints=(lo, hi), inf_on_interval=inf)

    @classmethod
    def gaussian(cls, amp=1.0, center=0.0, width=1.0, xi0=0.0, interval_halfwidth=None) -> "ThetaProfile":
        """|theta|^2 = amp^2 exp(-(xi - center)^2 / width^2)."""
        f = lambda x: amp ** 2 * np.exp(-((x - center) / width) ** 2)  # noqa: E731
        prof = cls(f, xi0, abs(amp), "gaussian", {"amp": amp, "center": center, "width": width})
        if amp != 0:
            r = interval_halfwidth if interval_halfwidth is not None else max(width, 1.0)
            prof = prof.with_interval(xi0 - r, xi0 + r)
        return prof

    @classmethod
    def bumps(cls, amps, centers, widths, xi0=0.0) -> "ThetaProfile":
        """|theta| = sum of Gaussian bumps; the sup is taken on a fine grid plus centres."""
        amps, centers, widths = (np.asarray(v, dtype=float) for v in (amps, centers, widths))

        def mod(x):
            x = np.asarray(x, dtype=float)[..., None]
            return np.sum(amps * np.exp(-0.5 * ((x - centers) / widths) ** 2), axis=-1)

        lo = float(np.min(centers - 8 * widths))
        hi = float(np.max(centers + 8 * widths))
        grid = np.concatenate([np.linspace(lo, hi, 20001), centers])
        sup = float(np.max(np.abs(mod(grid))))
        # refine the sup with a local maximiser so the bound is not underestimated
        h = (hi - lo) / 20000
        for c in grid[np.argsort(-np.abs(mod(grid)))[:3]]:
            res = optimize.minimize_scalar(lambda x: -abs(mod(x)), bounds=(c - h, c + h), method="bounded",
                                           options={"xatol": 1e-12})
            sup = max(sup, float(-res.fun))
        return cls(lambda x: mod(x) ** 2, xi0, sup, "bumps",
                   {"amps": amps.tolist(), "centers": centers.tolist(), "widths": widths.tolist()})

    @classmethod
    def tabulated(cls, xi, sq_modulus, xi0=0.0, interval=None) -> "ThetaProfile":
        """Piecewise-linear |theta|^2 through the table, zero outside its support."""
        xi = np.asarray(xi, dtype=float)
        g = np.asarray(sq_modulus, dtype=float)
        if np.any(np.diff(xi) <= 0) or xi.shape != g.shape:
            raise DecayError("table must have strictly increasing xi and matching values")
        if np.any(g < 0):
            raise DecayError("|theta|^2 cannot be negative")
        f = lambda x: np.interp(x, xi, g, left=0.0, right=0.0)  # noqa: E731
        prof = cls(f, xi0, float(np.sqrt(g.max())), "tabulated", {"n": int(xi.size)},
                   breakpoints=(float(xi[0]), float(xi[-1])))
        prof._nodes = xi
        if interval is not None:
            prof = prof.with_interval(*interval)
        return prof

    @classmethod
    def from_profile(cls, pf: ProfileField, xi0: float, weight: float = 1.0, interval=None) -> "ThetaProfile":
        """theta = sqrt(weight) * profile, using the profile's analytic form when it has one."""
        if pf.func is None:
            return cls.tabulated(pf.xi_grid, weight * np.abs(pf.values) ** 2, xi0, interval)
        f = lambda x: weight * pf.sq_modulus(x)  # noqa: E731
        xs = np.linspace(pf.xi_grid[0], pf.xi_grid[-1], 20001)
        sup = float(np.sqrt(max(f(xs).max(), f(np.array([xi0]))[0])))
        prof = cls(f, xi0, sup, "profile", {})
        if interval is not None:
            prof = prof.with_interval(*interval)
        return prof

    def with_interval(self, lo: float, hi: float) -> "ThetaProfile":
        xs = np.linspace(lo, hi, 4001)
        nodes = getattr(self, "_nodes", None)
        if nodes is not None:
            xs = np.union1d(xs, nodes[(nodes > lo) & (nodes < hi)])
        b = float(np.min(self(xs)))
        out = ThetaProfile(self.sq_modulus, self.xi0, self.sup_norm, self.family, dict(self.params),
                           self.breakpoints, ((lo, hi), b))
        if nodes is not None:
            out._nodes = nodes
        return out


def _mapped_quad(f, center: float, w: float, points: Sequence[float] = (), rtol: float = QUAD_RTOL):
    """int_R f(xi) dxi through xi = center + w tan(phi).

    The quadrant |phi| < pi/4 is the core |xi - center| < w.  Integrands
    bounded by C/(xi - center)^2 become bounded in phi, so nothing is
    truncated.  Returns (value, error estimate).
    """
    def g(phi):
        c = np.cos(phi)
        return f(center + w * np.tan(phi)) * w / (c * c)

    half = 0.5 * np.pi
    cuts = {-half, -0.25 * np.pi, 0.0, 0.25 * np.pi, half}
    for p in points:
        if np.isfinite(p):
            cuts.add(float(np.arctan((p - center) / w)))
    cuts = sorted(c for c in cuts if -half <= c <= half)
    total, err = 0.0, 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        if hi - lo < 1e-15:
            continue
        with warnings.catch_warnings():
            # exactly representable integrands trip QUADPACK's roundoff detector
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            val, e = integrate.quad(g, lo, hi, epsabs=0.0, epsrel=rtol, limit=500)
        total += val
        err += e
    return total, err


def eval_S(theta: ThetaProfile, tau: float, m: float | None = None, rtol: float = QUAD_RTOL,
           with_error: bool = False):
    """S(tau) = int |theta|^2 / (1 + (xi - xi0)^2 |theta|^2 tau) dxi.

    The core |xi - xi0| < m tau^{-1/2} (m = 1/||theta||_inf by default) is
    integrated separately from the two tails.
    """
    if not tau >= 1:
        raise DecayError("tau must be >= 1")
    if theta.sup_norm == 0:
        return (0.0, 0.0) if with_error else 0.0
    m = 1.0 / theta.sup_norm if m is None else m
    xi0 = theta.xi0

    def integrand(xi):
        g = theta(xi)
        return g / (1.0 + (xi - xi0) ** 2 * g * tau)

    pts = list(theta.breakpoints)
    nodes = getattr(theta, "_nodes", None)
    if nodes is not None and nodes.size <= 400:
        pts.extend(nodes.tolist())
    val, err = _mapped_quad(integrand, xi0, m / np.sqrt(tau), pts, rtol)
    return (val, err) if with_error else val


@dataclass
class BoundReport:
    taus: np.ndarray
    S: np.ndarray
    bound: np.ndarray
    ratio: np.ndarray
    passed: bool
    constant: float = float("nan")
    trivial: bool = False
    kind: str = "upper"

    def verdict(self) -> str:
        if self.trivial:
            return f"{self.kind}: trivial (theta = 0)"
        state = "PASS" if self.passed else "FAIL"
        return (f"{self.kind}: {state} at {len(self.taus)} taus, "
                f"ratio in [{np.min(self.ratio):.6g}, {np.max(self.ratio):.6g}]")


def upper_bound_cert(theta: ThetaProfile, taus) -> BoundReport:
    """Check S(tau) <= 4 ||theta||_inf tau^{-1/2}; raise on any violation."""
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    if np.any(taus < 1):
        raise DecayError("taus must be >= 1")
    S = np.array([eval_S(theta, t) for t in taus])
    bound = 4.0 * theta.sup_norm / np.sqrt(taus)
    if theta.sup_norm == 0:
        return BoundReport(taus, S, bound, np.full(taus.shape, np.nan), True, 4 * theta.sup_norm,
                           trivial=True, kind="upper")
    ratio = S / bound
    bad = np.nonzero(ratio > 1.0 + BOUND_SLACK)[0]
    if bad.size:
        raise CertificateError(f"S(tau) exceeds 4||theta|| tau^-1/2 at tau={taus[bad[0]]!r}")
    return BoundReport(taus, S, bound, ratio, True, 4 * theta.sup_norm, kind="upper")


def lower_constant(theta: ThetaProfile, m: float | None = None) -> tuple[float, float]:
    """(C2, m) with C2 = int_{-m}^{m} b / (1 + a eta^2) d eta = 2b/sqrt(a) arctan(m sqrt(a))."""
    if theta.inf_on_interval is None:
        raise DecayError("lower bound needs inf |theta| on an interval around xi0")
    (lo, hi), b = theta.inf_on_interval
    if not b > 0:
        raise DecayError("inf |theta|^2 on the interval must be positive")
    if m is None:
        m = min(theta.xi0 - lo, hi - theta.xi0)
        if not np.isfinite(m):
            m = 1.0
    elif theta.xi0 - m < lo or theta.xi0 + m > hi:
        raise DecayError("[xi0 - m, xi0 + m] must lie inside the interval")
    a = theta.sup_norm ** 2
    return float(2 * b / np.sqrt(a) * np.arctan(m * np.sqrt(a))), float(m)


def lower_bound_cert(theta: ThetaProfile, taus, m: float | None = None) -> BoundReport:
    """Check S(tau) >= C2 tau^{-1/2}; raise on any violation."""
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    if np.any(taus < 1):
        raise DecayError("taus must be >= 1")
    C2, _ = lower_constant(theta, m)
    S = np.array([eval_S(theta, t) for t in taus])
    bound = C2 / np.sqrt(taus)
    ratio = S / bound
    bad = np.nonzero(ratio < 1.0 - BOUND_SLACK)[0]
    if bad.size:
        raise CertificateError(f"S(tau) falls below C2 tau^-1/2 at tau={taus[bad[0]]!r}")
    return BoundReport(taus, S, bound, ratio, True, C2, kind="lower")


_PREDICTABLE = {
    DissipativityClass.NULL_IMAGINARY,
    DissipativityClass.WEAKLY_DISSIPATIVE,
    DissipativityClass.STRICTLY_DISSIPATIVE,
    DissipativityClass.STRONGLY_DISSIPATIVE,
}


def predicted_l2(A0: ProfileField, nu: NuPolynomial, t: float | None = None, *, tau: float | None = None,
                 tau_seed: float = 0.0, report=None) -> float:
    """||A(tau)||_{L^2} from |A|^2 = |A0|^2 / (1 - 2 Im nu |A0|^2 (tau - tau_seed)).

    Pass either ``t`` (tau = log t) or ``tau`` directly; huge tau values
    are fine.  ``A0`` is the profile at tau_seed.
    """
    if (t is None) == (tau is None):
        raise DecayError("give exactly one of t or tau")
    tau = float(np.log(t)) if tau is None else float(tau)
    if tau < 1.0 - 1e-12:
        raise DecayError("prediction needs t >= e")
    s = tau - tau_seed
    if s < 0:
        raise DecayError("tau precedes the seed time")
    report = report or classify(nu)
    if report.cls not in _PREDICTABLE:
        raise DecayError(f"no L^2 prediction for class {report.cls}")

    if report.cls is DissipativityClass.WEAKLY_DISSIPATIVE and s >= 1.0:
        # ||A||^2 = S(s) / (2 c0) with theta = sqrt(2 c0) A0
        theta = ThetaProfile.from_profile(A0, report.xi0, weight=2 * report.c0)
        return float(np.sqrt(eval_S(theta, s) / (2 * report.c0)))

    q = lambda x: -nu.imag(x)  # noqa: E731

    def integrand(x):
        g = A0.sq_modulus(x)
        return g / (1.0 + 2.0 * q(x) * g * s)

    pts = [] if A0.func is not None else [A0.xi_grid[0], A0.xi_grid[-1]]
    center = 0.5 * (A0.xi_grid[0] + A0.xi_grid[-1])
    width = 0.5 * (A0.xi_grid[-1] - A0.xi_grid[0])
    if report.xi0 is not None:
        center = report.xi0
        pts.append(report.xi0)
    val, _ = _mapped_quad(integrand, center, width, pts, rtol=1e-11)
    return float(np.sqrt(val))


@dataclass
class DecayCurve:
    """Positive values against tau = log t (or t when ``abscissa == 't'``)."""

    x: np.ndarray
    values: np.ndarray
    label: str = ""
    abscissa: str = "tau"

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.x.shape != self.values.shape or self.x.ndim != 1:
            raise DecayError("abscissae and values must be 1-d arrays of equal length")
        if np.any(np.diff(self.x) <= 0):
            raise DecayError("abscissae must be increasing")
        if self.abscissa not in ("t", "tau"):
            raise DecayError("abscissa is 't' or 'tau'")

    @property
    def taus(self) -> np.ndarray:
        return self.x if self.abscissa == "tau" else np.log(self.x)


class FitModel(str, enum.Enum):
    LOG_POWER = "log_power"
    SMALL_DATA_FORM = "small_data_form"


@dataclass
class RateFit:
    exponent: float
    prefactor: float
    residual: float
    window: tuple[float, float]
    model: FitModel = FitModel.LOG_POWER
    eps_eff: float | None = None
    n_points: int = 0


def fit_rate(curve: DecayCurve, model: FitModel | str = FitModel.LOG_POWER,
             window: tuple[float, float] | None = None) -> RateFit:
    """Fit a decay law in powers of log t over ``window`` (a tau range).

    log_power: least squares of log(value) on log(tau).
    small_data_form: value ~ C eps (1 + eps^2 log(t + 1))^{-1/4}, exponent fixed.
    """
    model = FitModel(model)
    taus = curve.taus
    if window is None:
        window = (float(taus[0]), float(taus[-1]))
    lo, hi = window
    if not lo < hi:
        raise DecayError("degenerate window")
    sel = (taus >= lo * (1 - 1e-12)) & (taus <= hi * (1 + 1e-12))
    if sel.sum() < 8:
        raise DecayError(f"window {window} holds {int(sel.sum())} points; need >= 8")
    tw, vw = taus[sel], curve.values[sel]
    if np.any(vw <= 0) or np.any(tw <= 0):
        raise DecayError("fit needs positive values and tau > 0")
    used = (float(tw[0]), float(tw[-1]))

    if model is FitModel.LOG_POWER:
        X, Y = np.log(tw), np.log(vw)
        slope, icpt = np.polyfit(X, Y, 1)
        resid = float(np.sqrt(np.mean((Y - (slope * X + icpt)) ** 2)))
        return RateFit(float(slope), float(np.exp(icpt)), resid, used, model, n_points=int(sel.sum()))

    # log(t + 1) = tau + log1p(e^{-tau})
    L = tw + np.log1p(np.exp(-tw))
    Y = np.log(vw)

    def resid_fn(p):
        logC, logeps = p
        e2 = np.exp(2 * logeps)
        return logC + logeps - 0.25 * np.log1p(e2 * L) - Y

    guess_eps = 1.0 / np.sqrt(L[0])
    guess_C = float(np.exp(np.mean(Y + 0.25 * np.log1p(guess_eps ** 2 * L))) / guess_eps)
    sol = optimize.least_squares(resid_fn, [np.log(guess_C), np.log(guess_eps)], method="lm")
    r = resid_fn(sol.x)
    return RateFit(-0.25, float(np.exp(sol.x[0])), float(np.sqrt(np.mean(r ** 2))), used, model,
                   eps_eff=float(np.exp(sol.x[1])), n_points=int(sel.sum()))


def predicted_curve(A0: ProfileField, nu: NuPolynomial, taus, tau_seed: float = 0.0,
                    label: str = "profile") -> DecayCurve:
    rep = classify(nu)
    vals = [predicted_l2(A0, nu, tau=float(t), tau_seed=tau_seed, report=rep) for t in taus]
    return DecayCurve(np.asarray(taus, dtype=float), np.array(vals), label, "tau")
