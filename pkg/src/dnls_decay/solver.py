"""Integrating-factor RK4 pseudospectral solver for
i u_t + (1/2) u_xx = N(u, u_x) on a periodic box [-L/2, L/2).

The linear flow is applied exactly in Fourier space; only -i N is
integrated numerically, in the interaction picture.  Products are
dealiased with the 2/3 rule after every nonlinear evaluation.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .decay import DecayCurve
from .nonlinearity import CubicNonlinearity, evaluate_N
from .profile import ProfileField

log = logging.getLogger(__name__)

SPECTRUM_FLOOR = 1e-10


class SolverError(RuntimeError):
    """Numerical failure; ``state`` holds the last finite state."""

    def __init__(self, msg, state=None):
        super().__init__(msg)
        self.state = state


class ConfigError(ValueError):
    pass


class Grid:
    """Periodic grid, wavenumbers (numpy FFT order) and the 2/3 mask."""

    def __init__(self, L: float, n: int):
        if n < 8 or n & (n - 1):
            raise ConfigError("n must be a power of two >= 8")
        if not L > 0:
            raise ConfigError("L must be positive")
        self.L, self.n = float(L), int(n)
        self.dx = self.L / n
        self.x = -self.L / 2 + self.dx * np.arange(n)
        self.k = 2 * np.pi * np.fft.fftfreq(n, d=self.dx)
        self.dk = 2 * np.pi / self.L
        idx = np.abs(np.fft.fftfreq(n, d=1.0 / n))
        self.mask = idx < n / 3
        self.k_cut = float(np.max(np.abs(self.k[self.mask])))
        # continuum transform: F u(k) ~ dx / sqrt(2 pi) e^{i L k / 2} fft(u)
        self.ft_factor = self.dx / np.sqrt(2 * np.pi) * np.exp(0.5j * self.L * self.k)

    def fft(self, u):
        return np.fft.fft(u)

    def ifft(self, u_hat):
        return np.fft.ifft(u_hat)


@dataclass
class SpectralState:
    t: float
    grid: Grid
    u_hat: np.ndarray
    u: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.u is None:
            self.u = self.grid.ifft(self.u_hat)

    @classmethod
    def from_physical(cls, u, grid: Grid, t: float = 0.0) -> "SpectralState":
        u_hat = grid.fft(np.asarray(u, dtype=complex)) * grid.mask
        return cls(t, grid, u_hat)

    @property
    def x_grid(self):
        return self.grid.x

    @property
    def L(self):
        return self.grid.L

    @property
    def n(self):
        return self.grid.n

    def ux(self):
        return self.grid.ifft(1j * self.grid.k * self.u_hat)

    def l2_norm(self) -> float:
        return float(np.sqrt(self.grid.dx * np.sum(np.abs(self.u) ** 2)))

    def roundtrip_error(self) -> float:
        scale = max(np.max(np.abs(self.u)), 1e-300)
        return float(np.max(np.abs(self.grid.ifft(self.u_hat) - self.u)) / scale)


@dataclass
class AlphaField:
    """alpha(t, xi) = F[U(-t) u(t)](xi) sampled at the grid wavenumbers (sorted)."""

    t: float
    xi_grid: np.ndarray
    alpha: np.ndarray
    dxi: float

    def l2_norm(self) -> float:
        return float(np.sqrt(self.dxi * np.sum(np.abs(self.alpha) ** 2)))

    def envelope(self) -> float:
        return float(np.max((1 + self.xi_grid ** 2) * np.abs(self.alpha)))

    def as_profile(self, tau: float | None = None) -> ProfileField:
        tau = (math.log(self.t) if self.t > 0 else 0.0) if tau is None else tau
        return ProfileField(self.xi_grid, self.alpha, time=tau, time_kind="tau",
                            meta={"source": "pde_alpha", "t": self.t})


@dataclass
class DiagnosticsRecord:
    t: float
    l2_norm: float
    h3_norm: float
    j_h2_norm: float
    mass_flux: float
    alpha_envelope: float

    FIELDS = ("t", "l2", "h3", "j_h2", "mass_flux", "alpha_env")

    def row(self):
        return (self.t, self.l2_norm, self.h3_norm, self.j_h2_norm, self.mass_flux, self.alpha_envelope)


class IFRK4:
    """One integrating-factor RK4 stepper bound to a nonlinearity and a grid."""

    def __init__(self, nl: CubicNonlinearity, grid: Grid):
        self.nl, self.grid = nl, grid
        self._half_k2 = 0.5 * grid.k ** 2
        self._cache: dict[float, tuple[np.ndarray, np.ndarray]] = {}

    def _factors(self, dt):
        f = self._cache.get(dt)
        if f is None:
            f = (np.exp(-1j * 0.5 * dt * self._half_k2), np.exp(-1j * dt * self._half_k2))
            if len(self._cache) < 8:
                self._cache[dt] = f
        return f

    def nonlinear_hat(self, u_hat):
        """-i P F[N(u, u_x)] for the state with Fourier coefficients ``u_hat``."""
        g = self.grid
        u = g.ifft(u_hat)
        ux = g.ifft(1j * g.k * u_hat)
        out = g.fft(evaluate_N(self.nl, u, ux))
        out *= -1j
        out *= g.mask
        return out

    def step_hat(self, u_hat, dt):
        Eh, E = self._factors(dt)
        k1 = self.nonlinear_hat(u_hat)
        k2 = self.nonlinear_hat(Eh * (u_hat + 0.5 * dt * k1))
        k3 = self.nonlinear_hat(Eh * u_hat + 0.5 * dt * k2)
        k4 = self.nonlinear_hat(E * u_hat + dt * Eh * k3)
        return E * u_hat + dt / 6 * (E * k1 + 2 * Eh * (k2 + k3) + k4)


def step(state: SpectralState, dt: float, nl: CubicNonlinearity, stepper: IFRK4 | None = None) -> SpectralState:
    """Advance ``state`` by ``dt``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    stepper = stepper or IFRK4(nl, state.grid)
    with np.errstate(over="ignore", invalid="ignore"):
        u_hat = stepper.step_hat(state.u_hat, dt)
    if not np.all(np.isfinite(u_hat)):
        raise SolverError(f"non-finite state at t={state.t + dt:.6g}", state)
    return SpectralState(state.t + dt, state.grid, u_hat)


def mass_flux(state: SpectralState, nl: CubicNonlinearity) -> float:
    """2 Im int conj(u) N(u, u_x) dx, the exact rate of change of ||u||^2."""
    N = evaluate_N(nl, state.u, state.ux())
    return float(2 * state.grid.dx * np.sum(np.conj(state.u) * N).imag)


def compute_alpha(state: SpectralState) -> AlphaField:
    """Undo the free flow in Fourier space and normalise to the continuum transform."""
    g = state.grid
    if state.t < 0:
        raise ValueError("alpha is defined for t >= 0")
    a = np.exp(0.5j * state.t * g.k ** 2) * g.ft_factor * state.u_hat
    order = np.argsort(g.k)
    return AlphaField(state.t, g.k[order], a[order], g.dk)


def sobolev_norm(state: SpectralState, s: float) -> float:
    g = state.grid
    w = (1 + g.k ** 2) ** (s / 2)
    return float(np.sqrt(g.dx / g.n * np.sum(np.abs(w * state.u_hat) ** 2)))


def j_h2_norm(state: SpectralState) -> float:
    """||J u||_{H^2} with J = U(t) x U(-t)."""
    g = state.grid
    back = g.ifft(np.exp(0.5j * state.t * g.k ** 2) * state.u_hat)
    xw_hat = g.fft(g.x * back)
    return float(np.sqrt(g.dx / g.n * np.sum(np.abs((1 + g.k ** 2) * xw_hat) ** 2)))


def diagnostics(state: SpectralState, nl: CubicNonlinearity) -> DiagnosticsRecord:
    return DiagnosticsRecord(state.t, state.l2_norm(), sobolev_norm(state, 3), j_h2_norm(state),
                             mass_flux(state, nl), compute_alpha(state).envelope())


# ---------------------------------------------------------------- initial data

@dataclass(frozen=True)
class InitialData:
    """psi(x) together with its transform and the extents used for safety checks."""

    name: str
    psi: Callable[[np.ndarray], np.ndarray]
    psi_hat: Callable[[np.ndarray], np.ndarray] | None
    xi_max: float
    width: float
    params: dict = field(default_factory=dict)


def gaussian_data(width: float = 1.0, k0: float = 0.0) -> InitialData:
    """psi = exp(-x^2 / (2 width^2) + i k0 x), psi_hat = width exp(-width^2 (xi - k0)^2 / 2)."""
    s = float(width)
    return InitialData(
        "gaussian",
        lambda x: np.exp(-x ** 2 / (2 * s * s) + 1j * k0 * x),
        lambda xi: s * np.exp(-s * s * (xi - k0) ** 2 / 2) + 0j,
        abs(k0) + math.sqrt(2 * math.log(1 / SPECTRUM_FLOOR)) / s,
        s,
        {"width": s, "k0": k0},
    )


def sech_data(width: float = 1.0) -> InitialData:
    """psi = sech(x / width), psi_hat = width sqrt(pi/2) sech(pi width xi / 2)."""
    s = float(width)
    return InitialData(
        "sech",
        lambda x: 1 / np.cosh(x / s) + 0j,
        lambda xi: s * math.sqrt(math.pi / 2) / np.cosh(0.5 * math.pi * s * xi) + 0j,
        2 / (math.pi * s) * math.log(2 / SPECTRUM_FLOOR),
        s,
        {"width": s},
    )


def tabulated_data(x, values, name="file") -> InitialData:
    """Interpolated psi; the spectral extent is measured on the table."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(values, dtype=complex)
    f = lambda xs: np.interp(xs, x, v.real, 0, 0) + 1j * np.interp(xs, x, v.imag, 0, 0)  # noqa: E731
    spec = np.abs(np.fft.fft(v))
    k = np.abs(2 * np.pi * np.fft.fftfreq(x.size, d=x[1] - x[0]))
    above = k[spec >= SPECTRUM_FLOOR * spec.max()]
    mass = np.abs(v) ** 2
    centre = np.sum(x * mass) / np.sum(mass)
    width = float(np.sqrt(np.sum((x - centre) ** 2 * mass) / np.sum(mass)))
    return InitialData(name, f, None, float(above.max()), max(width, x[1] - x[0]), {"n_table": int(x.size)})


# --------------------------------------------------------------- experiments

@dataclass
class SimulationConfig:
    nl: CubicNonlinearity
    data: InitialData
    eps: float = 0.3
    L: float = 128.0
    n: int = 1024
    dt: float | None = 0.01
    t_max: float = 10.0
    record_times: Sequence[float] | None = None
    snapshot_times: Sequence[float] = ()
    check_boundary: bool = True

    def boundary_report(self) -> dict:
        need = 2 * self.data.xi_max * self.t_max + 10 * self.data.width
        grid = Grid(self.L, self.n)
        return {
            "L": self.L,
            "L_required": need,
            "xi_max": self.data.xi_max,
            "k_cut": grid.k_cut,
            "boundary_safe": bool(self.L >= need),
            "resolved": bool(grid.k_cut >= self.data.xi_max),
        }

    def validate(self):
        if not self.t_max > 0:
            raise ConfigError("t_max must be positive")
        if self.dt is not None and not self.dt > 0:
            raise ConfigError("dt must be positive")
        if not self.check_boundary:
            return
        rep = self.boundary_report()
        if not rep["boundary_safe"]:
            raise ConfigError(
                f"packet reaches the boundary: L={self.L:g} < 2 xi_max t_max + 10 width = {rep['L_required']:.6g}")
        if not rep["resolved"]:
            raise ConfigError(f"grid cannot carry the data: dealiased k_cut={rep['k_cut']:.4g} < xi_max={self.data.xi_max:.4g}")


@dataclass
class SimulationResult:
    records: list[DiagnosticsRecord]
    snapshots: dict[float, AlphaField]
    final: SpectralState
    dt: float
    boundary: dict

    def l2_curve(self, t_min: float = 0.0) -> DecayCurve:
        pts = [(r.t, r.l2_norm) for r in self.records if r.t > max(t_min, 0.0)]
        return DecayCurve([p[0] for p in pts], [p[1] for p in pts], "pde_l2", "t")


def initial_state(cfg: SimulationConfig) -> SpectralState:
    grid = Grid(cfg.L, cfg.n)
    return SpectralState.from_physical(cfg.eps * cfg.data.psi(grid.x), grid)


def log_schedule(spec: str | None, t_max: float) -> list[float]:
    """Parse 'log:a:b:n' (or 'lin:a:b:n'); 'tmax' stands for ``t_max``."""
    if not spec:
        return []
    kind, a, b, n = spec.split(":")
    a_v = t_max if a == "tmax" else float(a)
    b_v = t_max if b == "tmax" else float(b)
    n_v = int(n)
    if kind == "log":
        vals = np.geomspace(a_v, b_v, n_v)
    elif kind == "lin":
        vals = np.linspace(a_v, b_v, n_v)
    else:
        raise ConfigError(f"unknown schedule kind {kind!r}")
    return [float(v) for v in vals]


def evolve(state: SpectralState, nl: CubicNonlinearity, dt: float, stops: Sequence[float],
           callback: Callable[[SpectralState], None] | None = None,
           stepper: IFRK4 | None = None) -> SpectralState:
    """March with fixed ``dt``, shortening the step that would overshoot each stop."""
    stepper = stepper or IFRK4(nl, state.grid)
    for stop in sorted(set(float(s) for s in stops)):
        if stop < state.t - 1e-12:
            continue
        n_full = int(math.floor((stop - state.t) / dt * (1 + 1e-12)))
        for _ in range(n_full):
            state = step(state, dt, nl, stepper)
        rest = stop - state.t
        if rest > 1e-12 * max(1.0, stop):
            state = step(state, rest, nl, stepper)
        state = SpectralState(stop, state.grid, state.u_hat, state.u)
        if callback is not None:
            callback(state)
    return state


def probe_dt(cfg: SimulationConfig, dt0: float = 0.1, tol: float = 1e-8, t_probe: float = 1.0,
             min_dt: float = 1e-5) -> float:
    """Halve dt until two successive runs over [0, t_probe] agree to ``tol``."""
    s0 = initial_state(cfg)
    stepper = IFRK4(cfg.nl, s0.grid)
    prev = evolve(s0, cfg.nl, dt0, [t_probe], stepper=stepper)
    dt = dt0
    while dt > min_dt:
        dt /= 2
        cur = evolve(s0, cfg.nl, dt, [t_probe], stepper=stepper)
        scale = max(np.max(np.abs(cur.u)), 1e-300)
        if np.max(np.abs(cur.u - prev.u)) / scale <= tol:
            return dt
        prev = cur
    raise SolverError(f"no dt >= {min_dt} passed the stability probe")


def run_experiment(cfg: SimulationConfig, progress: Callable[[DiagnosticsRecord], None] | None = None
                   ) -> SimulationResult:
    """Evolve eps * psi to t_max, recording diagnostics and alpha snapshots."""
    cfg.validate()
    dt = cfg.dt if cfg.dt is not None else probe_dt(cfg)
    state = initial_state(cfg)
    stepper = IFRK4(cfg.nl, state.grid)
    record_times = list(cfg.record_times) if cfg.record_times is not None else log_schedule(
        "log:1:tmax:40", cfg.t_max)
    record_times = sorted({0.0, *[t for t in record_times if 0 <= t <= cfg.t_max], cfg.t_max})
    snap_set = {float(t) for t in cfg.snapshot_times if 0 <= t <= cfg.t_max}
    stops = sorted(set(record_times) | snap_set)
    records: list[DiagnosticsRecord] = []
    snapshots: dict[float, AlphaField] = {}

    def on_stop(s: SpectralState):
        if s.t in snap_set:
            snapshots[s.t] = compute_alpha(s)
        rec = diagnostics(s, cfg.nl)
        records.append(rec)
        if progress:
            progress(rec)

    on_stop(state)
    final = evolve(state, cfg.nl, dt, [t for t in stops if t > 0], on_stop, stepper)
    return SimulationResult(records, snapshots, final, dt, cfg.boundary_report())
