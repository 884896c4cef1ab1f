"""Benchmark flow cases: configuration, meshes, diagnostics, run drivers.

Four flows exercise the solver end to end: a dipole of shielded monopoles
convecting through a wall-free patch, the same dipole colliding with the
bottom wall of a closed box, an impulsively started cylinder, and a thin
ellipse at incidence.  Each case carries built-in defaults so a config
file only needs the keys it wants to change, and every run writes the
same diagnostics CSV plus optional VTK snapshots, in one of three modes:
the coupled solver, the finite-element solver alone on a larger reference
mesh, or particles alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.fft import dstn, idstn
from scipy.sparse.linalg import cg

from .coupling import (
    HybridDomain,
    HybridState,
    hybrid_step,
    initial_state,
    lagrangian_velocity,
)
from .errors import ConfigurationError, SolverError
from .fem import (
    OUTER,
    WALL,
    FeState,
    IPCSSolver,
    TaylorHoodSpace,
    TriMesh,
    annulus_mesh,
    boundary_loops,
    ellipse_annulus_mesh,
    graded_points,
    read_mesh,
    rect_mesh,
)
from .geometry import StructuredGrid, rect_loop
from .io import (
    DiagnosticsRecord,
    parse_config,
    write_config,
    write_timeseries,
    write_vtk_grid,
    write_vtk_mesh,
    write_vtk_particles,
)
from .panels import VortexSheet
from .vpm import ParticleField, empty_field, seed_from_vorticity, vpm_step

__all__ = [
    "CASES",
    "MODES",
    "CaseConfig",
    "resolve_config",
    "load_config",
    "dipole_vorticity",
    "dipole_velocity",
    "case_particles",
    "case_mesh",
    "reference_mesh",
    "case_domain",
    "reference_setup",
    "lattice_diagnostics",
    "lattice_energy",
    "diagnostics",
    "force_coefficients",
    "shedding_perturbation",
    "SheddingPulse",
    "run_case",
]

CASES = ("dipole-unbounded", "dipole-wall", "cylinder", "ellipse")
MODES = ("hybrid", "fe-only", "vpm-only")
_BACKENDS = ("direct", "tree")

DIPOLE_RADIUS = 0.1
DIPOLE_OMEGA_E = 299.528385375226
CONVECTION_POLES = ((-1.0, 0.1), (-1.0, -0.1))
COLLISION_POLES = ((0.1, 0.0), (-0.1, 0.0))
STRIP_HEIGHT = 0.25     # height of the near-wall patch in the box case
PULSE_TIME = 2.0        # when the optional wall pulse fires

CYLINDER_RADIUS = 1.0
CYLINDER_R_EXT = 1.5
ELLIPSE_LENGTH = 1.0
ELLIPSE_WIDTH = 0.12
ELLIPSE_R_EXT = 1.5
ELLIPSE_ANGLE = math.radians(30.0)

_REF_DIAMETER = {"cylinder": 2.0 * CYLINDER_RADIUS, "ellipse": ELLIPSE_LENGTH}

_CASE_POLES = {
    "dipole-unbounded": CONVECTION_POLES,
    "dipole-wall": COLLISION_POLES,
}
_SEED_BBOX = {
    "dipole-unbounded": (-1.7, -0.3, -0.7, 0.7),
    "dipole-wall": (-0.75, 0.75, -0.75, 0.75),
}

# Per-case defaults.  Offsets given as ("h", k) follow the (scaled) blob
# spacing; ("abs", v) values are geometric and scale-independent.
_DEFAULTS = {
    "dipole-unbounded": dict(
        nu=1.6e-3, u_inf=(0.0, 0.0), h=5e-3, lam=1.0, dt_l=2.5e-4,
        dt_e=2.5e-5, t_end=0.7, d_bdry=("h", 2.0), d_surf=("h", 3.0),
        snapshots=(0.0, 0.2, 0.4, 0.7)),
    "dipole-wall": dict(
        nu=1.6e-3, u_inf=(0.0, 0.0), h=3e-3, lam=1.0, dt_l=2.5e-4,
        dt_e=2.5e-5, t_end=1.0, d_bdry=("h", 2.0), d_surf=("h", 3.0),
        snapshots=(0.0, 0.2, 0.4, 0.6, 0.8, 1.0)),
    "cylinder": dict(
        nu=3.6e-3, u_inf=(1.0, 0.0), h=8e-3, lam=1.0, dt_l=3e-3,
        dt_e=1e-3, t_end=40.0, d_bdry=("abs", 0.2), d_surf=("h", 3.0),
        snapshots=(10.0, 20.0, 30.0, 40.0)),
    "ellipse": dict(
        nu=2e-4, u_inf=(1.0, 0.0), h=1.67e-3, lam=1.0, dt_l=3e-3,
        dt_e=1e-3, t_end=4.0, d_bdry=("abs", 0.1), d_surf=("h", 3.0),
        snapshots=(1.0, 2.0, 3.0, 3.5, 4.0)),
}


# ---------------------------------------------------------------------------
# Configuration

@dataclass(frozen=True)
class CaseConfig:
    """Fully resolved run parameters.

    Build one through resolve_config()/load_config(), which fill unset
    keys from the per-case defaults; the constructor only validates.
    """

    case: str
    mode: str
    nu: float
    u_inf: tuple[float, float]
    h: float
    lam: float
    dt_l: float
    dt_e: float
    t_end: float
    d_bdry: float
    d_surf: float
    mesh: str = "auto"
    out_dir: str = "out"
    seed: int = 0
    velocity_backend: str = "direct"
    theta_tc: float = 0.3
    cadence: int = 1
    snapshots: tuple[float, ...] = ()
    perturb: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if self.case not in CASES:
            raise ConfigurationError(
                f"unknown case {self.case!r}; expected one of "
                + ", ".join(CASES))
        if self.mode not in MODES:
            raise ConfigurationError(
                f"unknown mode {self.mode!r}; expected one of "
                + ", ".join(MODES))
        if self.velocity_backend not in _BACKENDS:
            raise ConfigurationError(
                f"unknown velocity backend {self.velocity_backend!r}")
        for name in ("nu", "h", "lam", "dt_l", "dt_e", "t_end", "d_bdry",
                     "d_surf", "scale"):
            if not getattr(self, name) > 0.0:
                raise ConfigurationError(f"{name} must be positive")
        if self.theta_tc < 0.0:
            raise ConfigurationError("theta_tc must be non-negative")
        if self.cadence < 1:
            raise ConfigurationError("cadence must be at least 1")
        if self.perturb < 0.0:
            raise ConfigurationError("perturb must be non-negative")
        if self.perturb > 0.0 and self.case != "cylinder":
            raise ConfigurationError(
                "the shedding pulse is only defined for the cylinder case")
        if self.mode == "vpm-only" and self.case != "dipole-unbounded":
            raise ConfigurationError(
                "vpm-only mode cannot represent walls; only the "
                "dipole-unbounded case supports it")
        if any(t < 0.0 for t in self.snapshots):
            raise ConfigurationError("snapshot times must be non-negative")
        if self.mode != "vpm-only":
            _ = self.k_e  # validates that dt_l/dt_e is integral

    @property
    def k_e(self) -> int:
        """Eulerian sub-steps per Lagrangian step."""
        ratio = self.dt_l / self.dt_e
        k = round(ratio)
        if k < 1 or abs(ratio - k) > 1e-9 * ratio:
            raise ConfigurationError(
                f"dt_l/dt_e = {ratio:g} is not a positive integer")
        return k


_CONFIG_KEYS = frozenset({
    "case", "mode", "nu", "lambda", "h", "dt_l", "dt_e", "d_bdry", "d_surf",
    "u_inf_x", "u_inf_y", "t_end", "mesh", "out_dir", "seed",
    "velocity_backend", "theta_tc", "cadence", "snapshots", "perturb",
})


def _parse_float(key, text) -> float:
    try:
        return float(text)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(
            f"config key {key} = {text!r} is not a number") from exc


def _parse_int(key, text) -> int:
    try:
        return int(text)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(
            f"config key {key} = {text!r} is not an integer") from exc


def resolve_config(mapping, scale: float = 1.0) -> CaseConfig:
    """CaseConfig from flat key=value strings, defaults filling the gaps.

    `scale` coarsens h and both time steps uniformly (auto meshes follow
    suit); offsets left at their defaults track the scaled h, while
    explicitly given values are taken literally.
    """
    mapping = dict(mapping)
    unknown = sorted(set(mapping) - _CONFIG_KEYS)
    if unknown:
        raise ConfigurationError(
            "unknown config key(s): " + ", ".join(unknown))
    case = mapping.get("case")
    if case is None:
        raise ConfigurationError("config must set 'case'")
    if case not in _DEFAULTS:
        raise ConfigurationError(
            f"unknown case {case!r}; expected one of " + ", ".join(CASES))
    d = _DEFAULTS[case]

    def num(key, default):
        return _parse_float(key, mapping[key]) if key in mapping else default

    h = num("h", d["h"]) * scale
    dt_l = num("dt_l", d["dt_l"]) * scale
    dt_e = num("dt_e", d["dt_e"]) * scale

    def offset(key):
        if key in mapping:
            return _parse_float(key, mapping[key])
        kind, value = d[key]
        return value * h if kind == "h" else value

    snapshots = d["snapshots"]
    if "snapshots" in mapping:
        text = mapping["snapshots"].strip()
        snapshots = tuple(_parse_float("snapshots", part)
                          for part in text.split(",")) if text else ()

    return CaseConfig(
        case=case,
        mode=mapping.get("mode", "hybrid"),
        nu=num("nu", d["nu"]),
        u_inf=(num("u_inf_x", d["u_inf"][0]),
               num("u_inf_y", d["u_inf"][1])),
        h=h,
        lam=num("lambda", d["lam"]),
        dt_l=dt_l,
        dt_e=dt_e,
        t_end=num("t_end", d["t_end"]),
        d_bdry=offset("d_bdry"),
        d_surf=offset("d_surf"),
        mesh=mapping.get("mesh", "auto"),
        out_dir=mapping.get("out_dir", "out"),
        seed=_parse_int("seed", mapping["seed"]) if "seed" in mapping else 0,
        velocity_backend=mapping.get("velocity_backend", "direct"),
        theta_tc=num("theta_tc", 0.3),
        cadence=(_parse_int("cadence", mapping["cadence"])
                 if "cadence" in mapping else 1),
        snapshots=tuple(sorted(snapshots)),
        perturb=num("perturb", 0.0),
        scale=scale,
    )


def load_config(path, scale: float = 1.0, overrides=None) -> CaseConfig:
    """Parse a config file and resolve it, applying CLI-style overrides."""
    mapping = parse_config(path)
    if overrides:
        mapping.update({k: str(v) for k, v in overrides.items()})
    return resolve_config(mapping, scale=scale)


# ---------------------------------------------------------------------------
# Initial dipole

def dipole_vorticity(x, y, poles=CONVECTION_POLES):
    """Vorticity of two opposite shielded monopoles, positive pole first.

    Each pole is omega_e (1 - r^2/R^2) exp(-r^2/R^2), which carries zero
    net circulation on its own; the pair self-propels along the axis
    perpendicular to the pole separation.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    out = np.zeros(np.broadcast(x, y).shape)
    for sign, (px, py) in zip((1.0, -1.0), poles):
        s = ((x - px) ** 2 + (y - py) ** 2) / DIPOLE_RADIUS**2
        out += sign * DIPOLE_OMEGA_E * (1.0 - s) * np.exp(-s)
    return out


def dipole_velocity(x, y, poles=CONVECTION_POLES):
    """Exact velocity of the same field.

    A single pole encloses circulation omega_e pi r^2 exp(-r^2/R^2) inside
    radius r, so its swirl is u_theta = 0.5 omega_e r exp(-r^2/R^2).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    u = np.zeros(np.broadcast(x, y).shape)
    v = np.zeros_like(u)
    for sign, (px, py) in zip((1.0, -1.0), poles):
        dx = x - px
        dy = y - py
        f = 0.5 * sign * DIPOLE_OMEGA_E * np.exp(
            -(dx * dx + dy * dy) / DIPOLE_RADIUS**2)
        u -= f * dy
        v += f * dx
    return u, v


def case_particles(cfg: CaseConfig) -> ParticleField:
    """Initial particles: the dipole for the dipole cases, empty else."""
    poles = _CASE_POLES.get(cfg.case)
    if poles is None:
        return empty_field(cfg.h, cfg.lam)
    return seed_from_vorticity(
        _SEED_BBOX[cfg.case], lambda x, y: dipole_vorticity(x, y, poles),
        cfg.h, overlap=cfg.lam)


# ---------------------------------------------------------------------------
# Meshes

def _n_of(n0: int, scale: float, floor: int = 4) -> int:
    return max(floor, round(n0 / scale))


def _uniform_span(a: float, b: float, leg: float) -> np.ndarray:
    n = max(2, round((b - a) / leg))
    return np.linspace(a, b, n + 1)


def _strip_xs(scale: float) -> np.ndarray:
    return np.linspace(-1.0, 1.0, _n_of(607, scale) + 1)


def _strip_ys(scale: float) -> np.ndarray:
    return graded_points(-1.0, -1.0 + STRIP_HEIGHT,
                         _n_of(48, scale, floor=3), 2.5)


def case_mesh(cfg: CaseConfig):
    """The near-body / near-wall patch mesh for the coupled mode."""
    if cfg.mesh != "auto":
        return read_mesh(cfg.mesh)
    s = cfg.scale
    if cfg.case == "dipole-unbounded":
        leg = 5e-3 * s
        return rect_mesh(_uniform_span(-0.25, 0.25, leg),
                         _uniform_span(-0.5, 0.5, leg),
                         markers=(OUTER, OUTER, OUTER, OUTER))
    if cfg.case == "dipole-wall":
        return rect_mesh(_strip_xs(s), _strip_ys(s),
                         markers=(WALL, WALL, OUTER, WALL))
    if cfg.case == "cylinder":
        return annulus_mesh(CYLINDER_RADIUS, CYLINDER_R_EXT,
                            _n_of(768, s), _n_of(25, s), grading=5.0)
    return ellipse_annulus_mesh(0.5 * ELLIPSE_LENGTH, 0.5 * ELLIPSE_WIDTH,
                                ELLIPSE_ANGLE, ELLIPSE_R_EXT,
                                _n_of(1440, s), max(6, _n_of(40, s)),
                                grading=5.7)


def _geometric_rows(a: float, b: float, first: float,
                    growth: float) -> np.ndarray:
    """Rows from a to b starting near `first`, coarsening geometrically."""
    span = b - a
    n = max(2, math.ceil(math.log1p(span * (growth - 1.0) / first)
                         / math.log(growth)))
    return graded_points(a, b, n, growth ** (n - 1))


def reference_mesh(cfg: CaseConfig):
    """Stand-alone mesh for fe-only runs.

    Cells near the wall (or inside the coupled patch footprint) reproduce
    the patch mesh exactly, from the same generating calls, so force and
    near-wall diagnostics are directly comparable; the remainder coarsens
    away from the region of interest.
    """
    s = cfg.scale
    if cfg.case == "dipole-unbounded":
        # A box around the whole traversal.  The velocity decays like
        # exp(-r^2/R^2) away from the poles, so a homogeneous far rim a
        # few pole radii out is indistinguishable from open space.
        leg = 5e-3 * s
        return rect_mesh(_uniform_span(-1.4, 0.5, leg),
                         _uniform_span(-0.55, 0.55, leg),
                         markers=(OUTER, OUTER, OUTER, OUTER))
    if cfg.case == "dipole-wall":
        xs = _strip_xs(s)
        strip = _strip_ys(s)
        top = -1.0 + STRIP_HEIGHT
        mid = _uniform_span(top, 0.45, 1.2 * (xs[1] - xs[0]))
        lid = _geometric_rows(0.45, 1.0, mid[1] - mid[0], 1.15)
        ys = np.concatenate([strip, mid[1:], lid[1:]])
        return rect_mesh(xs, ys, markers=(WALL, WALL, WALL, WALL))
    if cfg.case == "cylinder":
        inner = graded_points(CYLINDER_RADIUS, CYLINDER_R_EXT,
                              _n_of(25, s), 5.0)
        outer = graded_points(CYLINDER_R_EXT, 6.0, _n_of(32, s), 8.0)
        radii = np.concatenate([inner, outer[1:]])
        return annulus_mesh(CYLINDER_RADIUS, 6.0, _n_of(768, s),
                            radii.size - 1, radii=radii)
    return ellipse_annulus_mesh(0.5 * ELLIPSE_LENGTH, 0.5 * ELLIPSE_WIDTH,
                                ELLIPSE_ANGLE, 6.0, _n_of(1440, s),
                                max(10, _n_of(72, s)), grading=60.0)


# ---------------------------------------------------------------------------
# Domains

def _wall_sheet(mesh) -> VortexSheet:
    loops = boundary_loops(mesh, marker=WALL)
    return VortexSheet([mesh.vertices[lp] for lp in loops])


def _box_loop(n_side: int) -> np.ndarray:
    """Closed square [-1, 1]^2 with n_side panels per side, ccw."""
    t = np.linspace(-1.0, 1.0, n_side + 1)[:-1]
    ones = np.ones(n_side)
    return np.concatenate([
        np.stack([t, -ones], axis=1),
        np.stack([ones, t], axis=1),
        np.stack([-t, ones], axis=1),
        np.stack([-ones, -t], axis=1),
    ])


def case_domain(cfg: CaseConfig):
    """(HybridDomain, IPCSSolver) for the coupled mode."""
    mesh = case_mesh(cfg)
    sheet = None
    interior = None
    removal = None
    if cfg.case == "dipole-wall":
        # The sheet wraps the whole closed box even though the mesh only
        # covers the bottom strip: the far walls still need their no-slip
        # correction.  Particle regeneration stays inside the strip, and
        # the sweep region hugs the walls so lobes pushed past them by
        # remeshing are deleted (and re-credited to the sheet).
        sheet = VortexSheet(_box_loop(_strip_xs(cfg.scale).size - 1))
        top = -1.0 + STRIP_HEIGHT
        interior = (rect_loop(-1.0 + cfg.d_surf, 1.0 - cfg.d_surf,
                              -1.0 + cfg.d_surf, top - cfg.d_bdry), None)
        m = 5.0 * cfg.h
        removal = [rect_loop(-1.0 - m, 1.0 + m, -1.0 - m, top - cfg.d_bdry)]
    elif cfg.case in ("cylinder", "ellipse"):
        sheet = _wall_sheet(mesh)
    domain = HybridDomain(mesh, cfg.h, cfg.d_bdry, cfg.d_surf, sheet=sheet,
                          u_inf=cfg.u_inf, interior=interior,
                          removal=removal)
    return domain, IPCSSolver(domain.space, cfg.nu, cfg.dt_e)


def _reference_sheet(cfg: CaseConfig, mesh):
    if cfg.case == "dipole-wall":
        return VortexSheet(_box_loop(_strip_xs(cfg.scale).size - 1))
    if cfg.case in ("cylinder", "ellipse"):
        return _wall_sheet(mesh)
    return None


def _reference_region(cfg: CaseConfig, space: TaylorHoodSpace):
    """(triangles, vertices) bounding like-for-like diagnostics, or None
    when the whole reference mesh is the region of interest."""
    mesh = space.mesh
    tol = 1e-9
    if cfg.case == "dipole-wall":
        keep = mesh.vertices[:, 1] <= -1.0 + STRIP_HEIGHT + tol
    elif cfg.case in ("cylinder", "ellipse"):
        r_ext = CYLINDER_R_EXT if cfg.case == "cylinder" else ELLIPSE_R_EXT
        keep = np.hypot(mesh.vertices[:, 0],
                        mesh.vertices[:, 1]) <= r_ext + tol
    else:
        return None
    tris = np.flatnonzero(np.all(keep[mesh.triangles], axis=1))
    return tris, np.flatnonzero(keep)


class _RegionProjector:
    """Vorticity projection restricted to the comparison submesh.

    The fe-only reference meshes extend well past the hybrid patch, and the
    L2 projection is global: far nodes bleed into the shared region through
    the mass solve, which separates the two modes' t=0 vorticity records at
    the 1e-4 level.  Assembling the projection on the extracted submesh
    (whose triangles coincide with the hybrid mesh by construction) keeps
    both modes' omega diagnostics on the same operator.
    """

    def __init__(self, space: TaylorHoodSpace, region):
        self.tris, _ = region
        mesh = space.mesh
        tri = mesh.triangles[self.tris]
        verts = np.unique(tri)
        remap = np.full(mesh.n_vertices, -1, dtype=np.int64)
        remap[verts] = np.arange(verts.size, dtype=np.int64)
        tri_sub = remap[tri]
        # the submesh boundary is whatever edges lost their second triangle;
        # markers are irrelevant here (the projection uses no boundary data)
        directed = np.concatenate(
            [tri_sub[:, [1, 2]], tri_sub[:, [2, 0]], tri_sub[:, [0, 1]]])
        lo = directed.min(axis=1).astype(np.int64)
        hi = directed.max(axis=1).astype(np.int64)
        _, inv, counts = np.unique(lo * verts.size + hi,
                                   return_inverse=True, return_counts=True)
        bedges = directed[counts[inv] == 1]
        sub = TriMesh(mesh.vertices[verts].copy(), tri_sub, bedges,
                      np.full(bedges.shape[0], OUTER, dtype=np.int64))
        self.space = TaylorHoodSpace(sub)
        # parent scalar dof behind every submesh dof: vertices map through
        # the unique() order, edges by their (lo, hi) vertex pair
        elo = verts[self.space.edge_pairs[:, 0]]
        ehi = verts[self.space.edge_pairs[:, 1]]
        parent_enc = (space.edge_pairs[:, 0] * mesh.n_vertices
                      + space.edge_pairs[:, 1])
        eidx = np.searchsorted(parent_enc, elo * mesh.n_vertices + ehi)
        self._scalar = np.concatenate([verts, mesh.n_vertices + eidx])
        self._parent_ns = space.n_scalar
        self._dx = self.space.div_p1_p2(0)
        self._dy = self.space.div_p1_p2(1)
        self._mp = self.space.mass_p1()
        self._precond = sp.diags(1.0 / self._mp.diagonal())

    def vorticity(self, u: np.ndarray) -> np.ndarray:
        ux = u[self._scalar]
        uy = u[self._parent_ns + self._scalar]
        rhs = self._dx @ uy - self._dy @ ux
        w, info = cg(self._mp, rhs, rtol=1e-12, atol=0.0, M=self._precond)
        if info != 0:
            raise SolverError("restricted vorticity projection did not converge")
        return w


def reference_setup(cfg: CaseConfig):
    """Space, solver, initial state, frozen boundary values, and the
    diagnostics restriction for an fe-only run.

    Initialization mirrors the coupled mode point for point: the same
    seeded particles and zero-circulation wall sheet induce the starting
    velocity, so t=0 diagnostics of the two modes agree wherever their
    meshes coincide.  Outer-rim Dirichlet values stay frozen at that
    initial sample; wall rows stay zero.
    """
    mesh = read_mesh(cfg.mesh) if cfg.mesh != "auto" else reference_mesh(cfg)
    space = TaylorHoodSpace(mesh)
    solver = IPCSSolver(space, cfg.nu, cfg.dt_e)
    particles = case_particles(cfg)
    sheet = _reference_sheet(cfg, mesh)
    gamma = None
    if sheet is not None:
        ua, va = lagrangian_velocity(
            particles, sheet.xc, sheet.yc, u_inf=cfg.u_inf,
            backend=cfg.velocity_backend, theta=cfg.theta_tc)
        gamma = sheet.solve(np.stack([ua, va], axis=1), circulation=0.0)

    def vel(x, y):
        return lagrangian_velocity(particles, x, y, sheet=sheet,
                                   gamma=gamma, u_inf=cfg.u_inf,
                                   backend=cfg.velocity_backend,
                                   theta=cfg.theta_tc)

    u0 = space.interpolate_velocity(vel)
    wall = space.boundary_scalar_dofs(markers={WALL})
    u0[wall] = 0.0
    u0[space.n_scalar + wall] = 0.0
    state = FeState(u=u0, p=np.zeros(space.n_pressure), t=0.0)
    return space, solver, state, u0.copy(), _reference_region(cfg, space)


# ---------------------------------------------------------------------------
# Lattice diagnostics (wall-free and particle-only runs)

def _lattice_field(particles: ParticleField):
    """Circulation binned onto the origin-anchored lattice, as vorticity."""
    h = particles.h
    gi = np.rint(particles.x / h).astype(np.int64)
    gj = np.rint(particles.y / h).astype(np.int64)
    i0 = int(gi.min())
    j0 = int(gj.min())
    grid = StructuredGrid(i0, j0, h,
                          int(gi.max()) - i0 + 1, int(gj.max()) - j0 + 1)
    omega = np.zeros((grid.ny, grid.nx))
    np.add.at(omega, (gj - j0, gi - i0), particles.gam)
    omega /= h * h
    return grid, omega


def lattice_energy(omega, h: float, pad: int = 8) -> float:
    """Kinetic energy of a compactly supported vorticity lattice.

    Solves the Poisson equation for the streamfunction with a sine
    transform on a zero-padded copy, using continuum eigenvalues so that
    smooth resolved fields converge spectrally, and returns
    0.5 h^2 sum(psi omega).
    """
    w = np.pad(np.asarray(omega, dtype=float), pad)
    ny, nx = w.shape
    ly = (np.pi * np.arange(1, ny + 1) / ((ny + 1) * h)) ** 2
    lx = (np.pi * np.arange(1, nx + 1) / ((nx + 1) * h)) ** 2
    rhs = dstn(w, type=1, norm="ortho")
    psi = idstn(rhs / (ly[:, None] + lx[None, :]), type=1, norm="ortho")
    return 0.5 * h * h * float(np.sum(psi * w))


def lattice_diagnostics(particles: ParticleField):
    """(wmax, energy, enstrophy, palinstrophy) of the particle lattice.

    The vorticity gradient uses centered differences on a zero-extended
    copy, consistent with particles representing a compact field.
    """
    if particles.n == 0:
        return 0.0, 0.0, 0.0, 0.0
    _, omega = _lattice_field(particles)
    h = particles.h
    wp = np.pad(omega, 1)
    gx = (wp[1:-1, 2:] - wp[1:-1, :-2]) / (2.0 * h)
    gy = (wp[2:, 1:-1] - wp[:-2, 1:-1]) / (2.0 * h)
    return (float(np.max(np.abs(omega))),
            lattice_energy(omega, h),
            0.5 * h * h * float(np.sum(omega * omega)),
            0.5 * h * h * float(np.sum(gx * gx + gy * gy)))


# ---------------------------------------------------------------------------
# Forces and the shedding pulse

def force_coefficients(force, u_inf, diameter: float):
    """(C_d, C_l) = force / (0.5 |U|^2 diameter).

    Drag is measured along the free stream, lift along its 90-degree
    counterclockwise rotation.
    """
    fx, fy = (float(c) for c in force)
    ux, uy = (float(c) for c in u_inf)
    q = ux * ux + uy * uy
    if q <= 0.0:
        raise ConfigurationError(
            "force coefficients are undefined without a free stream")
    if diameter <= 0.0:
        raise ConfigurationError("reference length must be positive")
    norm = 1.0 / (0.5 * q * diameter)
    inv = 1.0 / math.sqrt(q)
    ex, ey = ux * inv, uy * inv
    return (fx * ex + fy * ey) * norm, (fy * ex - fx * ey) * norm


@dataclass(frozen=True)
class SheddingPulse:
    """One-step tangential wall motion that breaks wake symmetry."""

    step: int
    speed: float


def shedding_perturbation(cfg: CaseConfig):
    """Plan the optional wall pulse; None when disabled.

    The wall spins at perturb * |U| for the single coupled step whose
    window contains PULSE_TIME, with the spin direction drawn from the
    run's seed.  This is an ad hoc symmetry trip, not a published recipe,
    and runs flag it in their metadata.
    """
    if cfg.perturb == 0.0:
        return None
    if cfg.case != "cylinder":
        raise ConfigurationError(
            "the shedding pulse is only defined for the cylinder case")
    speed = cfg.perturb * math.hypot(*cfg.u_inf)
    step = max(1, math.ceil(PULSE_TIME / cfg.dt_l - 1e-9))
    sign = 1.0 if np.random.default_rng(cfg.seed).integers(2) == 0 else -1.0
    return SheddingPulse(step=step, speed=sign * speed)


def _pulse_records(domain: HybridDomain, speed: float):
    """Wall-velocity records (mesh DOFs and panels) for the pulse step."""
    xy = domain.space.scalar_coords()[domain.wall_dofs]
    r = np.hypot(xy[:, 0], xy[:, 1])
    wall_bc = speed * np.concatenate([-xy[:, 1] / r, xy[:, 0] / r])
    return wall_bc, speed * domain.sheet.t_hat


# ---------------------------------------------------------------------------
# Diagnostics records

def _force_fields(cfg: CaseConfig, solver: IPCSSolver, fe: FeState) -> dict:
    diameter = _REF_DIAMETER.get(cfg.case)
    if diameter is None or math.hypot(*cfg.u_inf) == 0.0:
        return {}
    f_pres, f_visc = solver.wall_forces(fe)
    cd_p, cl_p = force_coefficients(f_pres, cfg.u_inf, diameter)
    cd_f, cl_f = force_coefficients(f_visc, cfg.u_inf, diameter)
    return {"cd": cd_p + cd_f, "cd_pres": cd_p, "cd_fric": cd_f,
            "cl": cl_p + cl_f}


def diagnostics(cfg: CaseConfig, domain: HybridDomain, solver: IPCSSolver,
                state: HybridState) -> DiagnosticsRecord:
    """Record of the coupled state at its current time.

    Wall cases integrate energy, enstrophy, and palinstrophy over the
    patch mesh; the wall-free case measures them on the particle lattice,
    which carries the whole field.
    """
    omega = solver.vorticity(state.fe)
    parts = state.particles
    wmax_l = float(np.max(np.abs(parts.gam))) / parts.h**2 if parts.n else 0.0
    if domain.sheet is not None:
        energy = solver.kinetic_energy(state.fe)
        ens = solver.enstrophy(omega)
        pal = solver.palinstrophy(omega)
        g_sheet = float(domain.sheet.physical_circulation(state.gamma))
    else:
        _, energy, ens, pal = lattice_diagnostics(parts)
        g_sheet = 0.0
    return DiagnosticsRecord(
        t=state.t,
        wmax_e=float(np.max(np.abs(omega))),
        wmax_l=wmax_l,
        energy=energy,
        enstrophy=ens,
        palinstrophy=pal,
        gamma_l=parts.total_circulation(),
        gamma_sheet=g_sheet,
        n_particles=parts.n,
        **_force_fields(cfg, solver, state.fe),
    )


def _fe_record(cfg: CaseConfig, space: TaylorHoodSpace, solver: IPCSSolver,
               fe: FeState, proj: _RegionProjector | None) -> DiagnosticsRecord:
    if proj is None:
        omega = solver.vorticity(fe)
        tris = None
        ens = space.integrate_enstrophy(omega)
        pal = space.integrate_palinstrophy(omega)
    else:
        omega = proj.vorticity(fe.u)
        tris = proj.tris
        ens = proj.space.integrate_enstrophy(omega)
        pal = proj.space.integrate_palinstrophy(omega)
    return DiagnosticsRecord(
        t=fe.t,
        wmax_e=float(np.max(np.abs(omega))),
        energy=space.integrate_energy(fe.u, tris),
        enstrophy=ens,
        palinstrophy=pal,
        **_force_fields(cfg, solver, fe),
    )


def _vpm_record(particles: ParticleField, t: float) -> DiagnosticsRecord:
    wmax, energy, ens, pal = lattice_diagnostics(particles)
    return DiagnosticsRecord(
        t=t, wmax_l=wmax, energy=energy, enstrophy=ens, palinstrophy=pal,
        gamma_l=particles.total_circulation(), n_particles=particles.n)


# ---------------------------------------------------------------------------
# Run drivers

def _time_tag(t: float) -> str:
    return format(t, ".6g")


class _SnapshotPlan:
    """Tracks which configured snapshot times are still owed."""

    def __init__(self, times):
        self.pending = sorted(set(times))

    def due(self, t: float, dt: float) -> list:
        hit = []
        while self.pending and self.pending[0] <= t + 0.5 * dt:
            hit.append(self.pending.pop(0))
        return hit


def _write_mesh_fields(path, space: TaylorHoodSpace, fe: FeState,
                       omega) -> None:
    nv = space.mesh.n_vertices
    ux, uy = space.velocity_components(fe.u)
    write_vtk_mesh(space.mesh, path, point_data={
        "u": np.stack([ux[:nv], uy[:nv]], axis=1),
        "p": fe.p,
        "omega": omega,
    })


def _write_hybrid_snapshot(out: Path, tag: str, domain: HybridDomain,
                           solver: IPCSSolver, state: HybridState) -> None:
    write_vtk_particles(state.particles, out / f"particles-t{tag}.vtk")
    omega = solver.vorticity(state.fe)
    _write_mesh_fields(out / f"fields-t{tag}.vtk", domain.space, state.fe,
                       omega)
    write_vtk_grid(domain.grid, domain.grid_vorticity(omega),
                   out / f"grid-t{tag}.vtk")


def _write_vpm_snapshot(out: Path, tag: str,
                        particles: ParticleField) -> None:
    write_vtk_particles(particles, out / f"particles-t{tag}.vtk")
    if particles.n:
        grid, omega = _lattice_field(particles)
        write_vtk_grid(grid, omega, out / f"grid-t{tag}.vtk")


def _write_meta(cfg: CaseConfig, out: Path, pulse) -> None:
    meta = {
        "case": cfg.case,
        "mode": cfg.mode,
        "nu": repr(cfg.nu),
        "u_inf_x": repr(cfg.u_inf[0]),
        "u_inf_y": repr(cfg.u_inf[1]),
        "h": repr(cfg.h),
        "lambda": repr(cfg.lam),
        "dt_l": repr(cfg.dt_l),
        "dt_e": repr(cfg.dt_e),
        "t_end": repr(cfg.t_end),
        "d_bdry": repr(cfg.d_bdry),
        "d_surf": repr(cfg.d_surf),
        "mesh": cfg.mesh,
        "out_dir": cfg.out_dir,
        "seed": str(cfg.seed),
        "velocity_backend": cfg.velocity_backend,
        "theta_tc": repr(cfg.theta_tc),
        "cadence": str(cfg.cadence),
        "snapshots": ",".join(_time_tag(t) for t in cfg.snapshots),
        "perturb": repr(cfg.perturb),
        "scale": repr(cfg.scale),
    }
    if cfg.mode != "vpm-only":
        meta["k_e"] = str(cfg.k_e)
    if pulse is not None:
        meta["pulse_step"] = str(pulse.step)
        meta["pulse_speed"] = repr(pulse.speed)
        meta["pulse_model"] = ("single-step tangential wall velocity; "
                               "an ad hoc symmetry trip, not a published "
                               "recipe")
    write_config(meta, out / "run.meta")


def _n_steps(cfg: CaseConfig) -> int:
    """Steps to reach t_end; the last one may overshoot by under dt_l."""
    return max(1, math.ceil(cfg.t_end / cfg.dt_l - 1e-9))


def _progress(log, cfg: CaseConfig, i: int, n: int, extra: str = "") -> None:
    if log is not None and (i % max(1, n // 20) == 0 or i == n):
        log(f"{cfg.case}/{cfg.mode}: step {i}/{n}{extra}")


def _run_hybrid(cfg: CaseConfig, out: Path, log) -> list:
    domain, solver = case_domain(cfg)
    state = initial_state(domain, solver, case_particles(cfg),
                          backend=cfg.velocity_backend, theta=cfg.theta_tc)
    pulse = shedding_perturbation(cfg)
    _write_meta(cfg, out, pulse)
    plan = _SnapshotPlan(cfg.snapshots)
    records = [diagnostics(cfg, domain, solver, state)]
    for ts in plan.due(0.0, cfg.dt_l):
        _write_hybrid_snapshot(out, _time_tag(ts), domain, solver, state)
    n = _n_steps(cfg)
    for i in range(1, n + 1):
        wall_bc = panel_wall = None
        if pulse is not None and i == pulse.step:
            wall_bc, panel_wall = _pulse_records(domain, pulse.speed)
        state = hybrid_step(domain, solver, state, cfg.dt_l, cfg.k_e,
                            cfg.nu, backend=cfg.velocity_backend,
                            theta=cfg.theta_tc, wall_bc=wall_bc,
                            panel_wall=panel_wall)
        if i % cfg.cadence == 0 or i == n:
            records.append(diagnostics(cfg, domain, solver, state))
        for ts in plan.due(state.t, cfg.dt_l):
            _write_hybrid_snapshot(out, _time_tag(ts), domain, solver,
                                   state)
        _progress(log, cfg, i, n, f" N={state.particles.n}")
    return records


def _run_fe(cfg: CaseConfig, out: Path, log) -> list:
    space, solver, fe, bc, region = reference_setup(cfg)
    proj = None if region is None else _RegionProjector(space, region)
    _write_meta(cfg, out, None)
    plan = _SnapshotPlan(cfg.snapshots)
    records = [_fe_record(cfg, space, solver, fe, proj)]
    for ts in plan.due(0.0, cfg.dt_e):
        _write_mesh_fields(out / f"fields-t{_time_tag(ts)}.vtk", space, fe,
                           solver.vorticity(fe))
    k_rec = cfg.k_e * cfg.cadence
    n = _n_steps(cfg) * cfg.k_e
    for m in range(1, n + 1):
        fe = solver.step(fe, bc)
        if m % k_rec == 0 or m == n:
            records.append(_fe_record(cfg, space, solver, fe, proj))
        for ts in plan.due(fe.t, cfg.dt_e):
            _write_mesh_fields(out / f"fields-t{_time_tag(ts)}.vtk", space,
                               fe, solver.vorticity(fe))
        _progress(log, cfg, m, n)
    return records


def _run_vpm(cfg: CaseConfig, out: Path, log) -> list:
    particles = case_particles(cfg)
    _write_meta(cfg, out, None)
    plan = _SnapshotPlan(cfg.snapshots)
    records = [_vpm_record(particles, 0.0)]
    for ts in plan.due(0.0, cfg.dt_l):
        _write_vpm_snapshot(out, _time_tag(ts), particles)
    n = _n_steps(cfg)
    t = 0.0
    for i in range(1, n + 1):
        cur = particles

        def field(qx, qy, cur=cur):
            moving = replace(cur, x=qx, y=qy)
            return lagrangian_velocity(moving, qx, qy, u_inf=cfg.u_inf,
                                       backend=cfg.velocity_backend,
                                       theta=cfg.theta_tc)

        particles = vpm_step(cur, field, cfg.dt_l, cfg.nu)
        t += cfg.dt_l
        if i % cfg.cadence == 0 or i == n:
            records.append(_vpm_record(particles, t))
        for ts in plan.due(t, cfg.dt_l):
            _write_vpm_snapshot(out, _time_tag(ts), particles)
        _progress(log, cfg, i, n, f" N={particles.n}")
    return records


_RUNNERS = {"hybrid": _run_hybrid, "fe-only": _run_fe, "vpm-only": _run_vpm}


def run_case(cfg: CaseConfig, log=None) -> list:
    """Run one configured case end to end.

    Writes run.meta, diagnostics.csv, and any snapshot VTK files into the
    output directory, then returns the records.  The final step may land
    just past t_end when t_end is not a multiple of dt_l.
    """
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = _RUNNERS[cfg.mode](cfg, out, log)
    write_timeseries(records, out / "diagnostics.csv")
    return records
