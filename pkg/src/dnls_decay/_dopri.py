"""Dormand-Prince 5(4) with an independent step size for every row.

Row ``i`` of the state is one frequency xi_i.  Rows never exchange data,
so each keeps its own step size and accept/reject history; they are just
advanced together to amortise numpy overhead.
"""
from __future__ import annotations

import numpy as np

_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 5.0


class StepLimitError(RuntimeError):
    pass


def integrate_rows(fun, y0, s_out, rtol=1e-10, atol=1e-14, max_steps=200_000, h0=None):
    """Integrate ``y' = fun(s, y, rows)`` for each row, sampling at ``s_out``.

    ``fun`` receives the current abscissae ``s`` (shape (k,)), states
    ``y`` (shape (k, m)) and the row indices they belong to.  ``atol`` may
    be a scalar, one value per row, or one value per (row, component).  ``s_out`` is
    increasing and starts at the initial abscissa.  Returns an array of
    shape (len(s_out), n_rows, m) and the per-row count of accepted steps.
    """
    y0 = np.asarray(y0, dtype=float)
    if y0.ndim == 1:
        y0 = y0[:, None]
    s_out = np.asarray(s_out, dtype=float)
    if np.any(np.diff(s_out) <= 0):
        raise ValueError("output abscissae must be strictly increasing")
    n, m = y0.shape
    atol = np.broadcast_to(np.asarray(atol, dtype=float), (n,) if np.ndim(atol) <= 1 else (n, m))
    if atol.ndim == 1:
        atol = np.repeat(atol[:, None], m, axis=1)
    atol = np.maximum(atol, 1e-300)
    out = np.empty((len(s_out), n, m))
    out[0] = y0
    steps = np.zeros(n, dtype=int)
    if len(s_out) == 1:
        return out, steps

    s = np.full(n, s_out[0])
    y = y0.copy()
    nxt = np.ones(n, dtype=int)
    span = s_out[-1] - s_out[0]
    h = np.full(n, h0 if h0 is not None else min(1e-3 * span, 1e-2))
    active = np.arange(n)
    total = 0

    while active.size:
        total += 1
        if total > max_steps:
            raise StepLimitError(f"{active.size} rows unfinished after {max_steps} steps")
        sa, ya, ha = s[active], y[active], h[active]
        target = s_out[nxt[active]]
        hit = ha >= target - sa
        ha = np.where(hit, target - sa, ha)

        k = np.empty((7,) + ya.shape)
        k[0] = fun(sa, ya, active)
        for i in range(1, 7):
            dy = np.tensordot(_A[i], k[:i], axes=(0, 0))
            k[i] = fun(sa + _C[i] * ha, ya + ha[:, None] * dy, active)
        ynew = ya + ha[:, None] * np.tensordot(_B, k, axes=(0, 0))
        err = ha[:, None] * np.tensordot(_E, k, axes=(0, 0))
        scale = atol[active] + rtol * np.maximum(np.abs(ya), np.abs(ynew))
        enorm = np.max(np.abs(err) / scale, axis=1)

        ok = enorm <= 1.0
        with np.errstate(divide="ignore"):
            fac = np.where(enorm == 0, MAX_FACTOR, SAFETY * enorm ** -0.2)
        fac = np.clip(fac, MIN_FACTOR, np.where(ok, MAX_FACTOR, 1.0))
        if not np.all(np.isfinite(ynew[ok])):
            raise FloatingPointError("non-finite state in ODE integration")

        acc = active[ok]
        s[acc] = np.where(hit[ok], target[ok], sa[ok] + ha[ok])
        y[acc] = ynew[ok]
        steps[acc] += 1
        # keep the un-clipped step proposal when a step was shortened to land on an output
        h[active] = np.where(hit & ok, np.maximum(h[active], ha * fac), ha * fac)

        landed = acc[hit[ok]]
        out[nxt[landed], landed] = y[landed]
        nxt[landed] += 1
        active = active[nxt[active] < len(s_out)]

    return out, steps
