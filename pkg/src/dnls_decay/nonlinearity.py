"""Cubic nonlinear terms N(u, u_x), the resonance polynomial nu(xi), and
the dissipativity taxonomy built on Im nu.

The nonlinearity is stored in the 17-term basis that satisfies
N(e^{i theta}, 0) = e^{i theta} N(1, 0); the monomials u^3, conj(u)^3 and
u conj(u)^2 cannot be represented.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, fields
from typing import Callable, Mapping

import numpy as np

A_KEYS = ("a1", "a2", "a3")
B_KEYS = ("b1", "b2", "b3")
C_KEYS = ("c1", "c2", "c3", "c4", "c5")
L_KEYS = ("l1", "l2", "l3", "l4", "l5", "l6")
COEFF_KEYS = A_KEYS + B_KEYS + C_KEYS + L_KEYS

DEFAULT_TOL = 1e-12


def _canonical_key(key: str) -> str:
    key = key.strip().lower()
    if key.startswith("lambda"):
        key = "l" + key[len("lambda"):]
    if key not in COEFF_KEYS:
        raise KeyError(f"unknown coefficient {key!r}")
    return key


@dataclass(frozen=True)
class CubicNonlinearity:
    """Coefficients of a gauge-admissible cubic term N(u, u_x).

    ``l1..l6`` multiply the gauge-invariant monomials
    |u|^2 u, |u|^2 u_x, u^2 conj(u_x), |u_x|^2 u, conj(u) u_x^2, |u_x|^2 u_x.
    """

    a1: complex = 0j
    a2: complex = 0j
    a3: complex = 0j
    b1: complex = 0j
    b2: complex = 0j
    b3: complex = 0j
    c1: complex = 0j
    c2: complex = 0j
    c3: complex = 0j
    c4: complex = 0j
    c5: complex = 0j
    l1: complex = 0j
    l2: complex = 0j
    l3: complex = 0j
    l4: complex = 0j
    l5: complex = 0j
    l6: complex = 0j

    def __post_init__(self):
        for f in fields(self):
            object.__setattr__(self, f.name, complex(getattr(self, f.name)))

    @classmethod
    def from_dict(cls, coeffs: Mapping[str, complex]) -> "CubicNonlinearity":
        """Build from a mapping; ``lambdaK`` and ``lK`` keys are both accepted."""
        return cls(**{_canonical_key(k): complex(v) for k, v in coeffs.items()})

    def to_dict(self, nonzero_only: bool = False) -> dict[str, complex]:
        out = {k: getattr(self, k) for k in COEFF_KEYS}
        if nonzero_only:
            out = {k: v for k, v in out.items() if v != 0}
        return out

    def scaled(self, s: complex) -> "CubicNonlinearity":
        return CubicNonlinearity(**{k: s * v for k, v in self.to_dict().items()})

    def gauge_part(self) -> "CubicNonlinearity":
        return CubicNonlinearity(**{k: getattr(self, k) for k in L_KEYS})

    def __call__(self, u, ux):
        return evaluate_N(self, u, ux)


@dataclass(frozen=True)
class NuPolynomial:
    """nu(xi) = re_part(xi) + i im_part(xi); coefficients in increasing degree."""

    re_part: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    im_part: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "re_part", _four(self.re_part))
        object.__setattr__(self, "im_part", _four(self.im_part))

    @classmethod
    def from_imag(cls, *im_coeffs: float) -> "NuPolynomial":
        return cls(im_part=tuple(im_coeffs))

    def __call__(self, xi):
        return self.real(xi) + 1j * self.imag(xi)

    def real(self, xi):
        return np.polynomial.polynomial.polyval(xi, self.re_part)

    def imag(self, xi):
        return np.polynomial.polynomial.polyval(xi, self.im_part)

    def scaled(self, s: float) -> "NuPolynomial":
        return NuPolynomial(tuple(s * c for c in self.re_part), tuple(s * c for c in self.im_part))

    def __str__(self) -> str:
        coeffs = [complex(r, p) for r, p in zip(self.re_part, self.im_part)]
        terms = []
        for k, c in enumerate(coeffs):
            if c == 0:
                continue
            mono = "" if k == 0 else ("*xi" if k == 1 else f"*xi^{k}")
            terms.append(f"({c.real:.17g}{c.imag:+.17g}i){mono}")
        return " + ".join(terms) if terms else "0"


def _four(coeffs) -> tuple[float, float, float, float]:
    c = [float(x) for x in coeffs]
    if len(c) > 4:
        if any(x != 0.0 for x in c[4:]):
            raise ValueError("nu is at most cubic in xi")
        c = c[:4]
    return tuple(c + [0.0] * (4 - len(c)))


_MONOMIALS = {
    "a1": lambda u, ux, ub, uxb: u * u * ux,
    "a2": lambda u, ux, ub, uxb: u * ux * ux,
    "a3": lambda u, ux, ub, uxb: ux * ux * ux,
    "b1": lambda u, ux, ub, uxb: ub * ub * uxb,
    "b2": lambda u, ux, ub, uxb: ub * uxb * uxb,
    "b3": lambda u, ux, ub, uxb: uxb * uxb * uxb,
    "c1": lambda u, ux, ub, uxb: ub * ub * ux,
    "c2": lambda u, ux, ub, uxb: (u * ub).real * uxb,
    "c3": lambda u, ux, ub, uxb: u * uxb * uxb,
    "c4": lambda u, ux, ub, uxb: (ux * uxb).real * ub,
    "c5": lambda u, ux, ub, uxb: (ux * uxb).real * uxb,
    "l1": lambda u, ux, ub, uxb: (u * ub).real * u,
    "l2": lambda u, ux, ub, uxb: (u * ub).real * ux,
    "l3": lambda u, ux, ub, uxb: u * u * uxb,
    "l4": lambda u, ux, ub, uxb: (ux * uxb).real * u,
    "l5": lambda u, ux, ub, uxb: ub * ux * ux,
    "l6": lambda u, ux, ub, uxb: (ux * uxb).real * ux,
}


def evaluate_N(nl: CubicNonlinearity, u, ux):
    """Evaluate N(u, u_x); works elementwise on arrays.  Zero terms are skipped."""
    u = np.asarray(u, dtype=complex)
    ux = np.asarray(ux, dtype=complex)
    ub, uxb = np.conj(u), np.conj(ux)
    out = np.zeros(np.broadcast(u, ux).shape, dtype=complex)
    for key, coef in nl.to_dict(nonzero_only=True).items():
        out += coef * _MONOMIALS[key](u, ux, ub, uxb)
    return out[()] if out.ndim == 0 else out


def check_gauge_condition(
    nl: CubicNonlinearity | None = None,
    samples: int = 16,
    tol: float = DEFAULT_TOL,
    evaluator: Callable[[complex, complex], complex] | None = None,
) -> bool:
    """Test N(e^{i theta}, 0) == e^{i theta} N(1, 0) at equispaced angles.

    ``evaluator`` replaces ``evaluate_N(nl, .)``; it exists so that terms
    outside the admissible basis (u^3, ...) can be shown to fail.
    """
    if samples < 3:
        raise ValueError("samples must be >= 3")
    if evaluator is None:
        if nl is None:
            raise ValueError("need a nonlinearity or an evaluator")
        evaluator = lambda u, ux: evaluate_N(nl, u, ux)  # noqa: E731
    theta = 2 * np.pi * np.arange(samples) / samples
    z = np.exp(1j * theta)
    n1 = complex(evaluator(1.0 + 0j, 0j))
    lhs = np.array([complex(evaluator(zk, 0j)) for zk in z])
    scale = max(1.0, abs(n1))
    return bool(np.max(np.abs(lhs - z * n1)) <= tol * scale)


def nu_closed_form(nl: CubicNonlinearity) -> NuPolynomial:
    """nu(xi) = l1 + i(l2 - l3) xi + (l4 - l5) xi^2 + i l6 xi^3."""
    c = (nl.l1, 1j * (nl.l2 - nl.l3), nl.l4 - nl.l5, 1j * nl.l6)
    return NuPolynomial(tuple(x.real for x in c), tuple(x.imag for x in c))


def nu_contour(nl: CubicNonlinearity, xi, quad_points: int = 16):
    """Trapezoidal rule for (1/2pi) int_0^{2pi} N(e^{it}, i xi e^{it}) e^{-it} dt.

    The integrand only carries harmonics e^{-4it}..e^{2it}, so any
    ``quad_points >= 8`` integrates it exactly up to rounding.
    """
    if quad_points < 8:
        raise ValueError("quad_points must be >= 8")
    xi_arr = np.atleast_1d(np.asarray(xi, dtype=float))
    theta = 2 * np.pi * np.arange(quad_points) / quad_points
    z = np.exp(1j * theta)[None, :]
    vals = evaluate_N(nl, z, 1j * xi_arr[:, None] * z) / z
    out = vals.mean(axis=1)
    return complex(out[0]) if np.ndim(xi) == 0 else out


class DissipativityClass(str, enum.Enum):
    NULL_IMAGINARY = "NullImaginary"
    WEAKLY_DISSIPATIVE = "WeaklyDissipative"
    STRICTLY_DISSIPATIVE = "StrictlyDissipative"
    STRONGLY_DISSIPATIVE = "StronglyDissipative"
    DISSIPATIVE_NON_STRICT = "DissipativeNonStrict"
    INDEFINITE = "Indefinite"

    def __str__(self) -> str:
        return self.value


DISSIPATIVE_CLASSES = frozenset({
    DissipativityClass.WEAKLY_DISSIPATIVE,
    DissipativityClass.STRICTLY_DISSIPATIVE,
    DissipativityClass.STRONGLY_DISSIPATIVE,
})


@dataclass
class DissipativityReport:
    cls: DissipativityClass
    c0: float | None = None
    xi0: float | None = None
    sup_im_nu: float | None = None
    best_c_star: float | None = None
    tolerance_used: float = DEFAULT_TOL
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "class": self.cls.value,
            "c0": self.c0,
            "xi0": self.xi0,
            "sup_im_nu": self.sup_im_nu,
            "best_c_star": self.best_c_star,
            "tolerance_used": self.tolerance_used,
            "notes": list(self.notes),
        }


def best_c_star(p0: float, p1: float, p2: float) -> float:
    """-max_xi (p0 + p1 xi + p2 xi^2) / (1 + xi^2).

    The ratio is the Rayleigh quotient of [[p0, p1/2], [p1/2, p2]] at
    (1, xi), and the point at infinity gives p2, so the supremum is the
    larger eigenvalue.
    """
    half_gap = 0.5 * (p0 - p2)
    lam_max = 0.5 * (p0 + p2) + np.hypot(half_gap, 0.5 * p1)
    return float(-lam_max)


def classify(nu: NuPolynomial, tol: float = DEFAULT_TOL) -> DissipativityReport:
    """Place nu in the taxonomy: null, weakly, strictly or strongly dissipative, or indefinite.

    Zero tests act on coefficients divided by max(1, max|p_k|) and use the
    band ``tol``; the label reported is the strongest one that applies.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    p = np.array(nu.im_part, dtype=float)
    scale = max(1.0, float(np.max(np.abs(p))))
    q = p / scale
    zero = np.abs(q) <= tol
    C = DissipativityClass
    rep = lambda cls, **kw: DissipativityReport(cls, tolerance_used=tol, **kw)  # noqa: E731

    if zero.all():
        return rep(C.NULL_IMAGINARY, sup_im_nu=0.0)
    if not zero[3]:
        return rep(C.INDEFINITE, notes=["cubic term changes sign"])
    p0, p1, p2 = p[:3]
    if not zero[2]:
        if q[2] > 0:
            return rep(C.INDEFINITE, notes=["Im nu -> +inf"])
        disc = q[1] ** 2 - 4 * q[2] * q[0]
        if disc < -tol:
            return rep(
                C.STRONGLY_DISSIPATIVE,
                sup_im_nu=float(p0 - p1 ** 2 / (4 * p2)),
                best_c_star=best_c_star(p0, p1, p2),
            )
        if disc <= tol:
            return rep(C.WEAKLY_DISSIPATIVE, c0=float(-p2), xi0=float(-p1 / (2 * p2)), sup_im_nu=0.0)
        return rep(C.INDEFINITE, notes=["two real roots; Im nu > 0 between them"])
    if not zero[1]:
        return rep(C.INDEFINITE, notes=["linear Im nu changes sign"])
    if q[0] < -tol:
        return rep(C.STRICTLY_DISSIPATIVE, sup_im_nu=float(p0))
    if q[0] > tol:
        return rep(C.INDEFINITE, notes=["Im nu is a positive constant"])

    # Unreachable for exact polynomials; kept for inputs sitting on the
    # tolerance bands.
    grid = np.linspace(-1e3, 1e3, 20001)
    vals = nu.imag(grid) / scale
    if np.all(vals <= tol * (1 + grid ** 2)):
        return rep(C.DISSIPATIVE_NON_STRICT, sup_im_nu=float(vals.max() * scale),
                   notes=["Im nu <= 0 holds but no sharper label applies"])
    return rep(C.INDEFINITE)
