"""Vortex particle method: regularized induction, convection, remeshing,
grid-based diffusion.

Particles carry circulation Gamma and a shared core size sigma = overlap * h.
Every step runs convect -> remesh -> diffuse (viscous splitting): convection
moves particles with a caller-supplied velocity field, remeshing pulls them
back onto the origin-anchored lattice with the M'4 spline, and diffusion
applies the forward-Euler heat stencil on that lattice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from numba import njit

from .errors import BlowupError, GeometryError
from .geometry import StructuredGrid, build_grid
from .kernels import EXP_ARG_MAX, mprime4

FloatArray = np.ndarray

CUTOFF_REL = 1e-10
OVERLAP_DEFAULT = 1.0


@dataclass(frozen=True)
class ParticleField:
    """Point vortices on (or between remeshes, near) a lattice of spacing h."""

    x: FloatArray
    y: FloatArray
    gam: FloatArray
    h: float
    sigma: float

    @property
    def n(self) -> int:
        return self.x.size

    def total_circulation(self) -> float:
        return float(math.fsum(self.gam))

    def linear_impulse(self) -> tuple[float, float]:
        """(Ix, Iy) = (sum Gamma y, -sum Gamma x); conserved by remeshing."""
        return (float(np.sum(self.gam * self.y)),
                float(-np.sum(self.gam * self.x)))

    def enstrophy(self) -> float:
        """0.5 * integral of omega^2 with omega collocated as Gamma / h^2."""
        return 0.5 * float(np.sum(self.gam**2)) / self.h**2


def empty_field(h: float, overlap: float = OVERLAP_DEFAULT) -> ParticleField:
    z = np.zeros(0, dtype=float)
    return ParticleField(z, z, z, h, overlap * h)


def seed_from_vorticity(bbox, omega_fn, h: float,
                        overlap: float = OVERLAP_DEFAULT) -> ParticleField:
    """Particles at lattice nodes with Gamma = omega(x_node) * h^2.

    Nodes whose |Gamma| falls below the relative cutoff are dropped and their
    total redistributed, exactly as in remeshing.
    """
    grid = build_grid(bbox, h)
    X, Y = np.meshgrid(grid.xs, grid.ys, indexing="xy")
    x = X.ravel()
    y = Y.ravel()
    gam = np.asarray(omega_fn(x, y), dtype=float) * h * h
    x, y, gam = _apply_cutoff(x, y, gam)
    return ParticleField(x, y, gam, h, overlap * h)


def _apply_cutoff(x, y, gam):
    """Drop |Gamma| < CUTOFF_REL * max|Gamma|, spreading the lost total
    uniformly over the survivors so the sum is preserved."""
    if gam.size == 0:
        return x, y, gam
    gmax = np.max(np.abs(gam))
    if gmax == 0.0:
        return x[:0], y[:0], gam[:0]
    keep = np.abs(gam) >= CUTOFF_REL * gmax
    dropped = float(math.fsum(gam[~keep]))
    x, y, gam = x[keep], y[keep], gam[keep].copy()
    if gam.size:
        gam += dropped / gam.size
    return x, y, gam


# ---------------------------------------------------------------------------
# Induced velocity (direct summation)

@njit(cache=True)
def _direct_kernel(px, py, gam, inv2sig2, qx, qy, u, v):
    n = px.size
    m = qx.size
    for k in range(m):
        xk = qx[k]
        yk = qy[k]
        su = 0.0
        sv = 0.0
        for p in range(n):
            dx = xk - px[p]
            dy = yk - py[p]
            r2 = dx * dx + dy * dy
            if r2 > 0.0:
                a = r2 * inv2sig2
                if a < EXP_ARG_MAX:
                    g = -math.expm1(-a)
                else:
                    g = 1.0
                f = gam[p] * g / r2
                su -= f * dy
                sv += f * dx
        u[k] = su / (2.0 * math.pi)
        v[k] = sv / (2.0 * math.pi)


def induced_velocity_direct(particles: ParticleField, qx, qy):
    """Velocity induced at query points by all particles, O(N*M) pairwise.

    Regularized Biot-Savart: u = Gamma g(r/sigma) / (2 pi r^2) * (-dy, dx),
    summed over particles.  Self-terms (r = 0) contribute nothing.
    """
    qx = np.ascontiguousarray(np.atleast_1d(qx), dtype=float)
    qy = np.ascontiguousarray(np.atleast_1d(qy), dtype=float)
    u = np.zeros(qx.shape)
    v = np.zeros(qy.shape)
    if particles.n:
        inv2sig2 = 1.0 / (2.0 * particles.sigma**2)
        _direct_kernel(np.ascontiguousarray(particles.x),
                       np.ascontiguousarray(particles.y),
                       np.ascontiguousarray(particles.gam),
                       inv2sig2, qx, qy, u, v)
    return u, v


def induced_velocity_reference(particles: ParticleField, qx, qy):
    """Pure-numpy direct sum; cross-check oracle for the compiled kernel."""
    qx = np.atleast_1d(np.asarray(qx, dtype=float))
    qy = np.atleast_1d(np.asarray(qy, dtype=float))
    u = np.zeros(qx.shape)
    v = np.zeros(qy.shape)
    s2 = 2.0 * particles.sigma**2
    for p in range(particles.n):
        dx = qx - particles.x[p]
        dy = qy - particles.y[p]
        r2 = dx * dx + dy * dy
        a = np.minimum(r2 / s2, EXP_ARG_MAX)
        g = -np.expm1(-a)
        with np.errstate(divide="ignore", invalid="ignore"):
            f = np.where(r2 > 0.0, particles.gam[p] * g / r2, 0.0)
        u -= f * dy
        v += f * dx
    return u / (2 * np.pi), v / (2 * np.pi)


# ---------------------------------------------------------------------------
# Convection

def convect(particles: ParticleField, velocity_fn, dt: float,
            scheme: str = "rk2") -> ParticleField:
    """Advance particle positions with the composite velocity field.

    velocity_fn(x, y) -> (u, v) must evaluate the full velocity (all vortex
    elements plus any free stream) and is called at every stage position.
    """
    x, y = particles.x, particles.y
    if scheme == "rk2":
        u1, v1 = velocity_fn(x, y)
        xm = x + 0.5 * dt * u1
        ym = y + 0.5 * dt * v1
        u2, v2 = velocity_fn(xm, ym)
        xn = x + dt * u2
        yn = y + dt * v2
    elif scheme == "rk4":
        u1, v1 = velocity_fn(x, y)
        u2, v2 = velocity_fn(x + 0.5 * dt * u1, y + 0.5 * dt * v1)
        u3, v3 = velocity_fn(x + 0.5 * dt * u2, y + 0.5 * dt * v2)
        u4, v4 = velocity_fn(x + dt * u3, y + dt * v3)
        xn = x + dt / 6.0 * (u1 + 2 * u2 + 2 * u3 + u4)
        yn = y + dt / 6.0 * (v1 + 2 * v2 + 2 * v3 + v4)
    else:
        raise ValueError(f"unknown convection scheme {scheme!r}")
    if not (np.all(np.isfinite(xn)) and np.all(np.isfinite(yn))):
        raise BlowupError("particle positions became non-finite during convection")
    return replace(particles, x=xn, y=yn)


# ---------------------------------------------------------------------------
# Remeshing

def _lattice_grid(particles: ParticleField, pad: int = 3) -> StructuredGrid:
    x, y, h = particles.x, particles.y, particles.h
    bbox = (float(x.min()), float(x.max()), float(y.min()), float(y.max()))
    return build_grid(bbox, h).expanded(pad)


def remesh(particles: ParticleField, pad: int = 3):
    """Redistribute circulation onto the origin-anchored lattice with M'4.

    Returns (new_particles, grid, gam2d) where gam2d is the full (ny, nx)
    circulation array on the lattice (zeros included); the particle set keeps
    only nodes surviving the relative cutoff, with the dropped total spread
    uniformly over the survivors.
    """
    if particles.n == 0:
        g = build_grid((0.0, 0.0, 0.0, 0.0), particles.h)
        return particles, g, np.zeros((g.ny, g.nx))
    grid = _lattice_grid(particles, pad)
    gam2d = _scatter_mprime4(grid, particles.x, particles.y, particles.gam)
    jj, ii = np.nonzero(gam2d)
    x = grid.xs[ii]
    y = grid.ys[jj]
    gam = gam2d[jj, ii]
    x, y, gam = _apply_cutoff(x, y, gam)
    out = replace(particles, x=x, y=y, gam=gam)
    return out, grid, gam2d


def _scatter_mprime4(grid: StructuredGrid, x, y, gam) -> FloatArray:
    """M'4 tensor-product scatter of particle circulation onto grid nodes."""
    h = grid.h
    sx = (x - grid.x0) / h
    sy = (y - grid.y0) / h
    bi = np.floor(sx).astype(np.int64)
    bj = np.floor(sy).astype(np.int64)
    if (bi.min() < 1 or bi.max() > grid.nx - 3
            or bj.min() < 1 or bj.max() > grid.ny - 3):
        raise GeometryError("remesh grid pad too small for particle support")
    offs = np.arange(-1, 3)
    wx = mprime4(sx[:, None] - (bi[:, None] + offs[None, :]))
    wy = mprime4(sy[:, None] - (bj[:, None] + offs[None, :]))
    w = wy[:, :, None] * wx[:, None, :]          # (n, 4y, 4x)
    nodes_i = bi[:, None, None] + offs[None, None, :]
    nodes_j = bj[:, None, None] + offs[None, :, None]
    flat = (nodes_j * grid.nx + nodes_i).ravel()
    contrib = (w * gam[:, None, None]).ravel()
    acc = np.bincount(flat, weights=contrib, minlength=grid.nx * grid.ny)
    return acc.reshape(grid.ny, grid.nx)


# ---------------------------------------------------------------------------
# Diffusion

def diffusion_stencil(c: float) -> FloatArray:
    """3x3 forward-Euler heat stencil, tensor square of [c, 1-2c, c].

    Requires c = nu dt / h^2 <= 1/2.  The center weight is adjusted by at
    most one ulp so the nine coefficients sum to exactly 1.0 (fsum), which
    keeps grid diffusion circulation-conserving to roundoff.
    """
    if not 0.0 <= c <= 0.5 + 1e-12:
        raise ValueError(f"stencil requires 0 <= c <= 1/2, got {c}")
    w = np.array([c, 1.0 - 2.0 * c, c])
    s = np.outer(w, w)
    others = np.delete(s.ravel(), 4)
    center = 1.0 - math.fsum(others)
    for _ in range(8):
        if math.fsum(list(others) + [center]) == 1.0:
            break
        center = math.nextafter(
            center, math.inf if math.fsum(list(others) + [center]) < 1.0
            else -math.inf)
    s[1, 1] = center
    return s


def diffuse(particles: ParticleField, nu: float, dt: float) -> ParticleField:
    """Viscous sub-step on the lattice: 9-point stencil, sub-cycled to keep
    the diffusion number at or below 1/2.

    Particles must already sit on lattice nodes (call right after remesh).
    """
    if particles.n == 0 or nu * dt == 0.0:
        return particles
    h = particles.h
    c_full = nu * dt / (h * h)
    nsub = max(1, math.ceil(c_full / 0.5))
    c = c_full / nsub
    stn = diffusion_stencil(c)

    grid = _lattice_grid(particles, pad=nsub + 1)
    sx = (particles.x - grid.x0) / h
    sy = (particles.y - grid.y0) / h
    ii = np.rint(sx).astype(np.int64)
    jj = np.rint(sy).astype(np.int64)
    if (np.max(np.abs(sx - ii)) > 1e-6 or np.max(np.abs(sy - jj)) > 1e-6):
        raise GeometryError("diffusion requires particles on lattice nodes")
    G = np.zeros((grid.ny, grid.nx))
    G[jj, ii] = particles.gam

    for _ in range(nsub):
        Gn = np.zeros_like(G)
        for dj in (-1, 0, 1):
            for di in (-1, 0, 1):
                wgt = stn[dj + 1, di + 1]
                Gn[1 + dj:grid.ny - 1 + dj, 1 + di:grid.nx - 1 + di] += (
                    wgt * G[1:-1, 1:-1])
        # Edge rows of the padded grid hold no circulation by construction.
        G = Gn

    jj, ii = np.nonzero(G)
    out = replace(particles, x=grid.xs[ii], y=grid.ys[jj], gam=G[jj, ii])
    if not np.all(np.isfinite(out.gam)):
        raise BlowupError("circulation became non-finite during diffusion")
    return out


def vpm_step(particles: ParticleField, velocity_fn, dt: float, nu: float,
             scheme: str = "rk2") -> ParticleField:
    """One Lagrangian step: convect, remesh, diffuse."""
    moved = convect(particles, velocity_fn, dt, scheme=scheme)
    if moved.n == 0:
        return moved
    meshed, _, _ = remesh(moved)
    return diffuse(meshed, nu, dt)
