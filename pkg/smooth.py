"""C-infinity step, window and bump functions with their derivatives.

All functions are vectorized over numpy arrays and evaluate elementwise.
"""

import numpy as np

# exp(-c/tau) flatness constant for the interval windows
WINDOW_C = 1.0
# softer constant for radial cutoffs; lowers the peak slope from 2/width to ~1.54/width
CUTOFF_C = 0.5
# 1 - (r/rho)^2 below this the bump underflows to exactly 0.0
_BUMP_FLOOR = 1e-3


def _psi(tau: np.ndarray, c: float) -> tuple[np.ndarray, np.ndarray]:
    tau = np.asarray(tau, dtype=float)
    val = np.zeros_like(tau)
    der = np.zeros_like(tau)
    pos = tau > 0
    tp = tau[pos]
    e = np.exp(-c / tp)
    val[pos] = e
    der[pos] = c * e / (tp * tp)
    return val, der


def step(tau: np.ndarray, c: float = WINDOW_C) -> tuple[np.ndarray, np.ndarray]:
    """Smooth step: 0 for tau <= 0, 1 for tau >= 1. Returns (value, derivative)."""
    a, da = _psi(tau, c)
    b, db = _psi(1.0 - np.asarray(tau, dtype=float), c)
    s = a + b
    return a / s, (da * b + a * db) / (s * s)


def ramp(x: np.ndarray, lo: float, hi: float, c: float = WINDOW_C) -> tuple[np.ndarray, np.ndarray]:
    """0 below lo, 1 above hi."""
    width = hi - lo
    v, dv = step((np.asarray(x, dtype=float) - lo) / width, c)
    return v, dv / width


def peak_step_slope(c: float, samples: int = 200001) -> float:
    """max |step'| on [0, 1], measured by dense sampling."""
    _, d = step(np.linspace(0.0, 1.0, samples), c)
    return float(np.abs(d).max())


def radial_cutoff(r: np.ndarray, inner: float, outer: float) -> tuple[np.ndarray, np.ndarray]:
    """1 on [0, inner], 0 on [outer, inf). Returns (value, d/dr)."""
    v, dv = ramp(r, inner, outer, CUTOFF_C)
    return 1.0 - v, -dv


def max_cutoff_slope(inner: float, outer: float) -> float:
    return peak_step_slope(CUTOFF_C) / (outer - inner)


def bump(d: np.ndarray, rho: float) -> tuple[np.ndarray, np.ndarray]:
    """Radial bump exp(1 - 1/(1 - (r/rho)^2)) of displacement vectors d (..., n).

    Returns (value, gradient) with gradient shaped like d.
    """
    d = np.asarray(d, dtype=float)
    q = np.sum(d * d, axis=-1) / (rho * rho)
    g = 1.0 - q
    inside = g > _BUMP_FLOOR
    val = np.zeros_like(q)
    fac = np.zeros_like(q)
    gi = g[inside]
    bi = np.exp(1.0 - 1.0 / gi)
    val[inside] = bi
    fac[inside] = -2.0 * bi / (rho * rho * gi * gi)
    return val, fac[..., None] * d


# --- interval windows on tau in [0, 1] ---------------------------------------


def window_left(tau: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """mu_L: 1 on [0, 0.25], 0 from 0.4."""
    v, dv = ramp(tau, 0.25, 0.4)
    return 1.0 - v, -dv


def window_right(tau: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """mu_R: 0 up to 0.6, 1 on [0.75, 1]."""
    return ramp(tau, 0.6, 0.75)


def window_middle(tau: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """mu_M: rises over [0.2, 0.35], 1 on [0.35, 0.65], falls over [0.65, 0.8]."""
    up, dup = ramp(tau, 0.2, 0.35)
    dn, ddn = ramp(tau, 0.65, 0.8)
    return up * (1.0 - dn), dup * (1.0 - dn) - up * ddn
