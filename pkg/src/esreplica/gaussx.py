"""Gaussian integral family used throughout the saddle-point equations.

The three repeated integrals of the standard normal density are

    Phi(x) = int_{-inf}^x phi(t) dt
    Psi(x) = int_{-inf}^x Phi(t) dt = x Phi(x) + phi(x)
    W(x)   = int_{-inf}^x Psi(t) dt = ((x^2 + 1) Phi(x) + x phi(x)) / 2

Lower tails are evaluated through the scaled complementary error function so
that no intermediate overflows and the values decay smoothly to zero; the
upper half-line is obtained by reflection,

    Phi(x) = 1 - Phi(-x),  Psi(x) = x + Psi(-x),  W(x) = (x^2 + 1)/2 - W(-x).
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy.special import erfcx, ndtri

SQRT_2PI = math.sqrt(2.0 * math.pi)
SQRT_HALF_PI = math.sqrt(0.5 * math.pi)

# Below this argument Phi, Psi and W are returned as exact zeros.
DEEP_TAIL = -38.0

# Panel count above which interval integrals switch to closed forms.
_MAX_PANELS = 8


def phi(x):
    """Standard normal density."""
    x = np.asarray(x, dtype=float)
    out = np.exp(-0.5 * x * x) / SQRT_2PI
    return float(out) if out.ndim == 0 else out


def _lower_tail(t: np.ndarray):
    """(phi, Phi, Psi, W) for t <= 0, with exact zeros below DEEP_TAIL."""
    deep = t <= DEEP_TAIL
    t = np.maximum(t, DEEP_TAIL - 1.0)
    dens = np.where(deep, 0.0, np.exp(-0.5 * t * t) / SQRT_2PI)
    mills = SQRT_HALF_PI * erfcx(-t / math.sqrt(2.0))  # Phi(t) / phi(t)
    big_phi = dens * mills
    big_psi = dens * (1.0 + t * mills)
    big_w = 0.5 * dens * ((t * t + 1.0) * mills + t)
    # Guard against sign noise from cancellation just above the cut-off.
    return dens, big_phi, np.maximum(big_psi, 0.0), np.maximum(big_w, 0.0)


def gauss_family(x):
    """Return ``(phi, Phi, Psi, W)`` at ``x`` (scalar or array)."""
    arr = np.asarray(x, dtype=float)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    t = -np.abs(arr)
    dens, lo_phi, lo_psi, lo_w = _lower_tail(t)
    pos = arr > 0
    x_pos = np.where(pos, arr, 0.0)
    big_phi = np.where(pos, 1.0 - lo_phi, lo_phi)
    big_psi = np.where(pos, x_pos + lo_psi, lo_psi)
    big_w = np.where(pos, 0.5 * (x_pos * x_pos + 1.0) - lo_w, lo_w)
    if scalar:
        return float(dens[0]), float(big_phi[0]), float(big_psi[0]), float(big_w[0])
    return dens, big_phi, big_psi, big_w


def Phi(x):
    return gauss_family(x)[1]


def Psi(x):
    return gauss_family(x)[2]


def W(x):
    return gauss_family(x)[3]


def phi_inverse(p: float) -> float:
    """Quantile of the standard normal.

    scipy's ``ndtri`` seeds a Newton polish on this module's own Phi; the
    iteration works in whichever tail is smaller so that the residual is
    small relative to both ``p`` and ``1 - p``.
    """
    p = float(p)
    if not 0.0 < p < 1.0:
        raise ValueError(f"phi_inverse requires 0 < p < 1, got {p!r}")
    if p == 0.5:
        return 0.0
    # Solve Phi(t) = q with t <= 0 and q = min(p, 1 - p).
    upper = p > 0.5
    q = 1.0 - p if upper else p
    t = float(ndtri(q))
    for _ in range(6):
        dens, big_phi, _, _ = gauss_family(t)
        if dens == 0.0:
            break
        step = (big_phi - q) / dens
        t -= step
        if abs(step) <= 1e-16 * max(1.0, abs(t)):
            break
    return -t if upper else t


def g_piecewise(x):
    """Piecewise quadratic/linear hinge ``g`` entering the ES free energy."""
    arr = np.asarray(x, dtype=float)
    out = np.where(arr >= 0.0, 0.0, np.where(arr >= -1.0, arr * arr, -2.0 * arr - 1.0))
    return float(out) if out.ndim == 0 else out


@lru_cache(maxsize=None)
def _gauss_legendre(n: int):
    return np.polynomial.legendre.leggauss(n)


def interval_integrals(u: float, h: float):
    """Increments of the family over ``[u, u + h]`` for ``h > 0``.

    Returns ``(D0, D1, J)`` with

        D0 = Phi(u + h) - Phi(u)
        D1 = Psi(u + h) - Psi(u)
        J  = int_u^{u+h} (t - u) Phi(t) dt = h Psi(u + h) - (W(u + h) - W(u))

    Short intervals use composite Gauss-Legendre quadrature so that each
    increment keeps full relative precision as ``h -> 0``.
    """
    if h <= 0.0:
        raise ValueError(f"interval width must be positive, got {h!r}")
    panels = max(1, math.ceil(h))
    if panels <= _MAX_PANELS:
        nodes, weights = _gauss_legendre(24)
        width = h / panels
        # Offsets from u are formed directly so that t - u carries no rounding from u.
        offsets = (width * np.arange(panels)[:, None] + 0.5 * width * (nodes[None, :] + 1.0)).ravel()
        wts = np.tile(0.5 * width * weights, panels)
        dens, big_phi, _, _ = gauss_family(u + offsets)
        d0 = float(np.dot(wts, dens))
        d1 = float(np.dot(wts, big_phi))
        j = float(np.dot(wts, offsets * big_phi))
        return d0, d1, j
    v = u + h
    _, cdf_u, psi_u, w_u = gauss_family(u)
    _, cdf_v, psi_v, w_v = gauss_family(v)
    d0 = Phi(-u) - Phi(-v) if u >= 0.0 else cdf_v - cdf_u
    d1 = psi_v - psi_u
    j = h * psi_v - (w_v - w_u)
    return d0, d1, j
