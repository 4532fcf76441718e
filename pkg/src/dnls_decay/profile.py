"""The profile equation i d_t beta = (mu/t)|beta|^2 beta + rho and its
asymptotic profile A(tau, xi).

All integration happens in tau = log t, where the equation reads
i d_tau beta = mu |beta|^2 beta + e^tau rho(e^tau, xi).
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import trapezoid

from ._dopri import integrate_rows
from .nonlinearity import NuPolynomial

DEFAULT_RTOL = 1e-10


class ProfileError(ValueError):
    """Invalid input to a profile computation."""


class ProfileIntegrationError(RuntimeError):
    """The integration produced a state the equations forbid."""


def japan(xi):
    """<xi> = sqrt(1 + xi^2)."""
    return np.sqrt(1.0 + np.asarray(xi, dtype=float) ** 2)


@dataclass
class ProfileField:
    """Complex samples of a profile (A, beta, P, ...) on a frequency grid.

    ``func`` optionally evaluates the same profile off-grid; quadratures
    prefer it to interpolation when present.
    """

    xi_grid: np.ndarray
    values: np.ndarray
    time: float = 0.0
    time_kind: str = "tau"
    meta: dict = field(default_factory=dict)
    func: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        self.xi_grid = np.asarray(self.xi_grid, dtype=float)
        self.values = np.asarray(self.values, dtype=complex)
        if self.xi_grid.ndim != 1 or self.values.shape != self.xi_grid.shape:
            raise ProfileError("xi_grid and values must be 1-d arrays of equal length")
        if np.any(np.diff(self.xi_grid) <= 0):
            raise ProfileError("xi_grid must be strictly increasing")
        if self.time_kind not in ("t", "tau"):
            raise ProfileError("time_kind is 't' or 'tau'")

    @property
    def tau(self) -> float:
        return self.time if self.time_kind == "tau" else float(np.log(self.time))

    def sq_modulus(self, xi):
        """|profile|^2 at arbitrary xi (zero outside the grid when tabulated)."""
        if self.func is not None:
            return np.abs(self.func(np.asarray(xi, dtype=float))) ** 2
        return np.interp(xi, self.xi_grid, np.abs(self.values) ** 2, left=0.0, right=0.0)

    def envelope_constant(self, eps: float) -> float:
        """Smallest C with |values| <= C eps <xi>^-2 on the grid."""
        return float(np.max(japan(self.xi_grid) ** 2 * np.abs(self.values)) / eps)

    def l2_norm(self) -> float:
        return float(np.sqrt(trapezoid(np.abs(self.values) ** 2, self.xi_grid)))


def gaussian_profile(xi_grid, eps=1.0, width=1.0, center=0.0) -> ProfileField:
    """eps * exp(-(xi - center)^2 / (2 width^2))."""
    f = lambda x: eps * np.exp(-((x - center) ** 2) / (2 * width ** 2)) + 0j  # noqa: E731
    xi_grid = np.asarray(xi_grid, dtype=float)
    pf = ProfileField(xi_grid, f(xi_grid), meta={"family": "gaussian", "eps": eps,
                                                 "width": width, "center": center}, func=f)
    pf.meta["envelope_C"] = pf.envelope_constant(eps) if eps else 0.0
    return pf


def lorentzian_profile(xi_grid, eps=1.0) -> ProfileField:
    """eps * <xi>^-2, which saturates the admissible envelope with C = 1."""
    f = lambda x: eps / (1.0 + x ** 2) + 0j  # noqa: E731
    xi_grid = np.asarray(xi_grid, dtype=float)
    return ProfileField(xi_grid, f(xi_grid), meta={"family": "lorentzian", "eps": eps,
                                                   "envelope_C": 1.0}, func=f)


@dataclass
class RemainderSpec:
    """Forcing rho(t, xi) bounded by amplitude / (<xi>^2 t^(1+kappa)).

    Without ``shape`` the forcing is amplitude e^{i omega t} / (<xi>^2 t^(1+kappa)),
    which sits exactly on the envelope.  Nonzero ``omega`` oscillates in t,
    i.e. at rate omega e^tau in the integration variable; keep t small then.
    """

    kappa: float = 0.2
    amplitude: float = 0.0
    omega: float = 0.0
    shape: Callable[[float, np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if not 0 < self.kappa < 0.25:
            raise ProfileError("kappa must lie in (0, 1/4)")
        if self.amplitude < 0:
            raise ProfileError("amplitude must be nonnegative")

    @classmethod
    def zero(cls) -> "RemainderSpec":
        return cls(amplitude=0.0)

    @property
    def is_zero(self) -> bool:
        return self.shape is None and self.amplitude == 0.0

    def envelope(self, t, xi):
        return self.amplitude / (japan(xi) ** 2 * np.asarray(t, dtype=float) ** (1 + self.kappa))

    def __call__(self, t, xi):
        if self.shape is not None:
            return np.asarray(self.shape(t, xi), dtype=complex)
        return self.envelope(t, xi) * np.exp(1j * self.omega * np.asarray(t, dtype=float))

    def scaled(self, tau, xi):
        """e^tau rho(e^tau, xi), evaluated without forming e^tau when possible."""
        tau = np.asarray(tau, dtype=float)
        if self.is_zero:
            return np.zeros(np.broadcast(tau, xi).shape, dtype=complex)
        if self.shape is not None:
            t = np.exp(tau)
            return t * self(t, xi)
        mag = self.amplitude * np.exp(-self.kappa * tau) / japan(xi) ** 2
        if self.omega == 0.0:
            return mag + 0j
        return mag * np.exp(1j * self.omega * np.exp(tau))

    def envelope_ratio(self, xi, t_samples) -> float:
        """max |rho| / envelope over the sample grid (<= 1 means admissible)."""
        if self.is_zero:
            return 0.0
        t = np.asarray(t_samples, dtype=float)[:, None]
        xi = np.asarray(xi, dtype=float)[None, :]
        env = self.envelope(t, xi)
        mag = np.abs(self(t, xi))
        if self.amplitude == 0.0:
            return float("inf") if np.any(mag > 0) else 0.0
        return float(np.max(mag / env))


@dataclass
class PQState:
    """Polar-type variables with beta = P / sqrt(Q).

    ``Z`` is int_1^t |P|^2 ds/s, carried along to evaluate Lambda.
    """

    xi_grid: np.ndarray
    t: float
    P: np.ndarray
    Q: np.ndarray
    Psi: np.ndarray
    Z: np.ndarray

    @property
    def beta(self) -> np.ndarray:
        return self.P / np.sqrt(self.Q)


def _mu_arrays(mu: NuPolynomial | np.ndarray | complex, xi):
    if isinstance(mu, NuPolynomial):
        vals = mu(xi)
    else:
        vals = np.broadcast_to(np.asarray(mu, dtype=complex), np.shape(xi))
    return np.asarray(vals, dtype=complex)


def _taus_from(t_grid) -> np.ndarray:
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size == 0:
        raise ProfileError("t_grid must be a nonempty 1-d array")
    if t_grid[0] != 1.0:
        raise ProfileError("t_grid must start at t = 1")
    if np.any(np.diff(t_grid) <= 0):
        raise ProfileError("t_grid must be strictly increasing")
    return np.log(t_grid)


def _check_dissipative(mu_vals):
    if np.any(mu_vals.imag > 0):
        raise ProfileError("Im mu > 0 somewhere: growth regime is not supported")


def _chunked(run, n_rows: int, workers: int):
    if workers <= 1 or n_rows < 2 * workers:
        return run(np.arange(n_rows))
    chunks = np.array_split(np.arange(n_rows), workers)
    with ThreadPoolExecutor(workers) as pool:
        parts = list(pool.map(run, chunks))
    return np.concatenate(parts, axis=1)


def _row_atol(theta0: np.ndarray, rho: RemainderSpec, xi, rtol):
    size = np.maximum(np.abs(theta0), rho.amplitude / japan(xi) ** 2)
    return 1e-3 * rtol * size


def integrate_beta(
    theta0: ProfileField,
    mu: NuPolynomial,
    rho: RemainderSpec | None,
    t_grid: Sequence[float],
    rtol: float = DEFAULT_RTOL,
    max_steps: int = 200_000,
    workers: int = 1,
) -> list[ProfileField]:
    """Solve the profile equation from beta(1) = theta0 and sample at ``t_grid``."""
    rho = rho or RemainderSpec.zero()
    taus = _taus_from(t_grid)
    xi = theta0.xi_grid
    mu_v = _mu_arrays(mu, xi)
    _check_dissipative(mu_v)
    atol = _row_atol(theta0.values, rho, xi, rtol)

    def run(rows):
        mu_r, xi_r = mu_v[rows], xi[rows]

        def rhs(s, y, idx):
            b = y[:, 0] + 1j * y[:, 1]
            d = -1j * (mu_r[idx] * (b.real ** 2 + b.imag ** 2) * b + rho.scaled(s, xi_r[idx]))
            return np.stack([d.real, d.imag], axis=1)

        y0 = np.stack([theta0.values[rows].real, theta0.values[rows].imag], axis=1)
        out, _ = integrate_rows(rhs, y0, taus, rtol=rtol, atol=atol[rows], max_steps=max_steps)
        return out

    out = _chunked(run, xi.size, workers)
    beta = out[:, :, 0] + 1j * out[:, :, 1]
    meta = {"mu": mu, "kappa": rho.kappa, "rho_amplitude": rho.amplitude, "rtol": rtol}
    return [
        ProfileField(xi, beta[j], time=float(t), time_kind="t", meta=dict(meta))
        for j, t in enumerate(np.asarray(t_grid, dtype=float))
    ]


def integrate_pq(
    theta0: ProfileField,
    mu: NuPolynomial,
    rho: RemainderSpec | None,
    t_grid: Sequence[float],
    rtol: float = DEFAULT_RTOL,
    max_steps: int = 200_000,
    workers: int = 1,
) -> list[PQState]:
    """Solve the coupled (P, Q) system with P(1) = theta0, Q(1) = 1.

    Psi (the accumulated phase) and Z = int |P|^2 ds/s ride along.
    """
    rho = rho or RemainderSpec.zero()
    taus = _taus_from(t_grid)
    xi = theta0.xi_grid
    mu_v = _mu_arrays(mu, xi)
    _check_dissipative(mu_v)
    a_row = _row_atol(theta0.values, rho, xi, rtol)
    size = a_row / (1e-3 * rtol)
    flat = np.full_like(a_row, 1e-3 * rtol)
    atol = np.stack([a_row, a_row, flat, flat, a_row * size], axis=1)

    def run(rows):
        re_mu, im_mu, xi_r = mu_v[rows].real, mu_v[rows].imag, xi[rows]

        def rhs(s, y, idx):
            P = y[:, 0] + 1j * y[:, 1]
            Q = y[:, 2]
            p2 = P.real ** 2 + P.imag ** 2
            dP = -1j * re_mu[idx] * p2 / Q * P - 1j * np.sqrt(Q) * rho.scaled(s, xi_r[idx])
            return np.stack([dP.real, dP.imag, -2 * im_mu[idx] * p2,
                             re_mu[idx] * p2 / Q, p2], axis=1)

        th = theta0.values[rows]
        y0 = np.stack([th.real, th.imag, np.ones(len(rows)), np.zeros(len(rows)),
                       np.zeros(len(rows))], axis=1)
        out, _ = integrate_rows(rhs, y0, taus, rtol=rtol, atol=atol[rows], max_steps=max_steps)
        return out

    out = _chunked(run, xi.size, workers)
    if np.any(out[:, :, 2] < 1.0 - 1e-12):
        raise ProfileIntegrationError("Q dropped below 1; the integration failed")
    return [
        PQState(xi, float(t), out[j, :, 0] + 1j * out[j, :, 1], out[j, :, 2].copy(),
                out[j, :, 3].copy(), out[j, :, 4].copy())
        for j, t in enumerate(np.asarray(t_grid, dtype=float))
    ]


def _phase_integral(a, b, tau):
    """int_0^tau ds / (a + b s), elementwise; b = 0 gives tau / a."""
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    x = b * tau / a
    small = np.abs(x) < 1e-8
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(small, 1.0 - x / 2 + x * x / 3, np.log1p(x) / np.where(small, 1.0, x))
    return tau / a * ratio


def closed_form_A(theta_inf: ProfileField, Lambda, mu: NuPolynomial, tau: float) -> ProfileField:
    """Exact solution of i d_tau A = mu |A|^2 A fixed by theta_inf and Lambda.

    A = theta_inf exp(-i |theta_inf|^2 Re mu G(tau)) / sqrt(D(tau)) with
    D(s) = 1 - 2 Im mu (|theta_inf|^2 s + Lambda) and G(tau) = int_0^tau ds/D(s).
    """
    xi = theta_inf.xi_grid
    mu_v = _mu_arrays(mu, xi)
    th = theta_inf.values
    th2 = np.abs(th) ** 2
    Lambda = np.broadcast_to(np.asarray(Lambda, dtype=float), xi.shape)
    a = 1.0 - 2.0 * mu_v.imag * Lambda
    b = -2.0 * mu_v.imag * th2
    rad = a + b * tau
    if np.any(a <= 0) or np.any(rad <= 0):
        raise ProfileError("nonpositive radicand in the closed-form profile")
    phase = th2 * mu_v.real * _phase_integral(a, b, tau)
    vals = th * np.exp(-1j * phase) / np.sqrt(rad)
    return ProfileField(xi, vals, time=float(tau), time_kind="tau",
                        meta={"mu": mu, "source": "closed_form_A"})


def modulus_law(theta0: ProfileField, mu: NuPolynomial, tau) -> np.ndarray:
    """|A(tau)|^2 = |A0|^2 / (1 - 2 Im mu |A0|^2 tau) for the unforced equation."""
    th2 = np.abs(theta0.values) ** 2
    return th2 / (1.0 - 2.0 * _mu_arrays(mu, theta0.xi_grid).imag * th2 * tau)


@dataclass
class AsymptoticData:
    """Limits extracted from a (P, Q) run, as used to build A."""

    P_inf: np.ndarray
    theta_inf: np.ndarray
    Lambda: np.ndarray
    phase_shift: np.ndarray
    t_end: float
    tail_bound: float


def asymptotic_data(final: PQState, mu: NuPolynomial, rho: RemainderSpec, delta: float) -> AsymptoticData:
    """P_inf, Lambda and theta_inf from the state at the end of a long run.

    Uses P_inf = P(T) e^{i Psi(T)} (the remaining forcing integral is the
    reported ``tail_bound``), Lambda = Z(T) - |P_inf|^2 log T, and the
    total Phi-integral Psi(T) - |P_inf|^2 Re mu int_0^{log T} ds/Q_inf.
    """
    xi = final.xi_grid
    mu_v = _mu_arrays(mu, xi)
    T = final.t
    logT = float(np.log(T))
    P_inf = final.P * np.exp(1j * final.Psi)
    p2 = np.abs(P_inf) ** 2
    Lambda = final.Z - p2 * logT
    a = 1.0 - 2.0 * mu_v.imag * Lambda
    b = -2.0 * mu_v.imag * p2
    phi_total = final.Psi - p2 * mu_v.real * _phase_integral(a, b, logT)
    theta_inf = P_inf * np.exp(-1j * phi_total)
    rate = rho.kappa - delta
    tail = 0.0
    if not rho.is_zero:
        tail = float(rho.amplitude * np.sqrt(np.max(final.Q)) / (rate * np.exp(rate * logT)))
    return AsymptoticData(P_inf, theta_inf, Lambda, phi_total, T, tail)


def A_sweep(data: AsymptoticData, xi, mu: NuPolynomial, taus) -> list[ProfileField]:
    th = ProfileField(xi, data.theta_inf, time=0.0)
    return [closed_form_A(th, data.Lambda, mu, float(tau)) for tau in taus]


@dataclass
class TrackingReport:
    t: np.ndarray
    weighted_sup: np.ndarray
    sup: float
    trend_slope: float
    trend_start: float
    passed: bool
    envelope_ok: bool = True
    envelope_ratio: float = 0.0
    tail_bound: float = 0.0
    pq_beta_gap: float = float("nan")
    A0_gap_weighted: float = float("nan")
    notes: list[str] = field(default_factory=list)
    beta_run: list = field(default_factory=list, repr=False)
    A_run: list = field(default_factory=list, repr=False)


def verify_tracking(
    beta_run: Sequence[ProfileField],
    A_run: Sequence[ProfileField],
    kappa: float,
    delta: float,
    eps: float,
    trend_start: float = 1e2,
    trend_tol: float = 1e-9,
) -> TrackingReport:
    """sup_xi <xi>^2 t^(kappa-delta) |beta - A(log t)| / eps^3 along the run.

    Passes when the weighted error does not grow on t >= ``trend_start``:
    nonpositive log-log slope and a final value no larger than the first.
    """
    if not 0 < delta < kappa:
        raise ProfileError("delta must lie in (0, kappa)")
    if len(beta_run) != len(A_run):
        raise ProfileError("beta and A runs have different lengths")
    ts, sups = [], []
    for b, A in zip(beta_run, A_run):
        if b.xi_grid.shape != A.xi_grid.shape or np.any(b.xi_grid != A.xi_grid):
            raise ProfileError("beta and A live on different xi grids")
        if abs(A.tau - b.tau) > 1e-9 * max(1.0, b.tau):
            raise ProfileError(f"time mismatch: beta at tau={b.tau}, A at tau={A.tau}")
        w = japan(b.xi_grid) ** 2 * np.exp((kappa - delta) * b.tau) * np.abs(b.values - A.values)
        ts.append(np.exp(b.tau))
        sups.append(np.max(w) / eps ** 3)
    ts, sups = np.array(ts), np.array(sups)
    sel = ts >= trend_start
    slope, passed = float("nan"), True
    if sel.sum() >= 2:
        y = np.log(np.maximum(sups[sel], 1e-300))
        slope = float(np.polyfit(np.log(ts[sel]), y, 1)[0])
        passed = slope <= trend_tol and sups[sel][-1] <= sups[sel][0] * (1 + trend_tol)
    return TrackingReport(ts, sups, float(sups.max()), slope, trend_start, bool(passed))


def default_extension_tau(kappa: float, delta: float, tau_last: float, tail_rtol: float = 1e-10) -> float:
    """tau at which the forcing tail e^{-(kappa-delta) tau}/(kappa-delta) drops below ``tail_rtol``."""
    rate = kappa - delta
    return max(tau_last + 10.0, float(np.log(1.0 / (tail_rtol * rate)) / rate))


def tracking_harness(
    theta0: ProfileField,
    mu: NuPolynomial,
    rho: RemainderSpec,
    t_eval: Sequence[float],
    delta: float,
    eps: float,
    rtol: float = DEFAULT_RTOL,
    tau_ext: float | None = None,
    trend_start: float = 1e2,
    workers: int = 1,
) -> TrackingReport:
    """End-to-end check that beta(t) tracks A(log t) at the predicted rate.

    The envelope of ``rho`` is checked before anything is integrated; the
    (P, Q) run is extended to t = e^tau_ext to approximate the limits.
    """
    t_eval = np.asarray(t_eval, dtype=float)
    ratio = rho.envelope_ratio(theta0.xi_grid, np.geomspace(1.0, max(t_eval[-1], 10.0), 64))
    if ratio > 1.0 + 1e-12:
        return TrackingReport(t_eval, np.full(t_eval.shape, np.nan), float("nan"), float("nan"),
                             trend_start, False, envelope_ok=False, envelope_ratio=ratio,
                             notes=["remainder violates its envelope; nothing integrated"])
    if tau_ext is None:
        tau_ext = default_extension_tau(rho.kappa, delta, float(np.log(t_eval[-1])))
    t_all = np.append(t_eval, np.exp(tau_ext))
    betas = integrate_beta(theta0, mu, rho, t_all, rtol=rtol, workers=workers)
    pqs = integrate_pq(theta0, mu, rho, t_all, rtol=rtol, workers=workers)
    data = asymptotic_data(pqs[-1], mu, rho, delta)
    xi = theta0.xi_grid
    A_run = A_sweep(data, xi, mu, np.log(t_eval))
    rep = verify_tracking(betas[:-1], A_run, rho.kappa, delta, eps, trend_start=trend_start)
    rep.envelope_ratio = ratio
    rep.tail_bound = data.tail_bound
    rep.pq_beta_gap = float(max(np.max(np.abs(p.beta - b.values)) for p, b in zip(pqs, betas)))
    rep.beta_run, rep.A_run = betas[:-1], A_run
    A0 = A_sweep(data, xi, mu, [0.0])[0]
    rep.A0_gap_weighted = float(np.max(japan(xi) ** 2 * np.abs(A0.values - theta0.values)) / eps ** 3)
    return rep


def with_values(pf: ProfileField, values, **changes) -> ProfileField:
    return replace(pf, values=np.asarray(values, dtype=complex), func=None, **changes)
