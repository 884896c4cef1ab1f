"""Interpolation and smoothing kernels for the particle solver.

All kernels are expressed in normalized coordinates.  The M'4 spline is used
for remeshing (support [-2, 2], reproduces moments 0..2); the Gaussian pair
(g, zeta) defines the regularized point-vortex velocity and the mollified
vorticity it induces.
"""

from __future__ import annotations

import numpy as np

# exp(-x) underflows long before this; skipping the evaluation keeps the
# velocity kernel finite for coincident points pushed far apart.
EXP_ARG_MAX = 72.0


def mprime4(x) -> np.ndarray:
    """M'4 interpolation spline.

    Piecewise cubic with support [-2, 2]: 1 - 5s^2/2 + 3s^3/2 on s <= 1 and
    (2 - s)^2 (1 - s) / 2 on 1 <= s <= 2, s = |x|.
    """
    s = np.abs(np.asarray(x, dtype=float))
    inner = 1.0 - 2.5 * s * s + 1.5 * s * s * s
    outer = 0.5 * (2.0 - s) ** 2 * (1.0 - s)
    return np.where(s <= 1.0, inner, np.where(s <= 2.0, outer, 0.0))


def gauss_g(rho) -> np.ndarray:
    """Velocity mollification factor g(rho) = 1 - exp(-rho^2 / 2)."""
    r2 = 0.5 * np.asarray(rho, dtype=float) ** 2
    out = np.ones_like(r2)
    small = r2 < EXP_ARG_MAX
    out[small] = -np.expm1(-r2[small])
    return out


def gauss_zeta(rho) -> np.ndarray:
    """Normalized vorticity shape zeta(rho) = exp(-rho^2 / 2)."""
    r2 = 0.5 * np.asarray(rho, dtype=float) ** 2
    out = np.zeros_like(r2)
    small = r2 < EXP_ARG_MAX
    out[small] = np.exp(-r2[small])
    return out


def zeta_sigma(r, sigma: float) -> np.ndarray:
    """Dimensional mollifier zeta_sigma(r) = zeta(r/sigma) / (2 pi sigma^2).

    Integrates to one over the plane, so a particle of circulation Gamma
    carries vorticity Gamma * zeta_sigma(|x - x_p|).
    """
    return gauss_zeta(np.asarray(r, dtype=float) / sigma) / (2.0 * np.pi * sigma * sigma)


def g_over_rho2(rho) -> np.ndarray:
    """g(rho) / rho^2 with the analytic rho -> 0 limit of 1/2.

    This is the radial profile of the regularized azimuthal velocity
    u_theta = Gamma rho g(rho) / (2 pi sigma rho^2).
    """
    rho = np.asarray(rho, dtype=float)
    r2 = rho * rho
    out = np.empty_like(r2)
    tiny = r2 < 1e-12
    out[tiny] = 0.5 - r2[tiny] / 8.0
    with np.errstate(divide="ignore", invalid="ignore"):
        out[~tiny] = gauss_g(rho[~tiny]) / r2[~tiny]
    return out


def mollified_vorticity(x, y, px, py, gam, sigma: float) -> np.ndarray:
    """Vorticity of a particle set at query points: sum Gamma_p zeta_sigma."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    norm = 1.0 / (2.0 * np.pi * sigma * sigma)
    out = np.zeros(x.shape, dtype=float)
    # Chunk over queries so the pairwise distance block stays modest.
    step = max(1, int(4e6 / max(len(px), 1)))
    for k0 in range(0, len(x), step):
        sl = slice(k0, k0 + step)
        d2 = ((x[sl, None] - px[None, :]) ** 2
              + (y[sl, None] - py[None, :]) ** 2) / (2.0 * sigma * sigma)
        np.clip(d2, None, EXP_ARG_MAX, out=d2)
        out[sl] = (np.exp(-d2) * gam[None, :]).sum(axis=1) * norm
    return out
