"""Glue between the particle field and the near-wall finite element patch.

The particles cover the whole domain; the FE patch owns a strip next to the
walls.  Each Lagrangian step the particles supply Dirichlet data for the
patch's outer boundary, the patch is sub-stepped, and the particles inside the
patch are rebuilt from the FE vorticity.  A vortex sheet on the walls closes
the velocity representation and carries whatever circulation the particles do
not, so the combined circulation is conserved to round-off.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from .errors import (
    BlowupError,
    ConfigurationError,
    CouplingError,
    PhaseError,
    SolverError,
)
from .fem import OUTER, WALL, FeState, TaylorHoodSpace, boundary_loops
from .geometry import NodalField, PolyRegion, build_grid, clip_polygon, offset_boundary
from .treecode import induced_velocity_tree
from .vpm import ParticleField, induced_velocity_direct, vpm_step

__all__ = [
    "HybridDomain",
    "HybridState",
    "lagrangian_velocity",
    "interp_bc",
    "evolve_eulerian",
    "regenerate_particles",
    "transfer_vorticity",
    "conserve_circulation",
    "sheet_circulation_target",
    "hybrid_step",
    "initial_state",
    "kelvin_total",
    "region_p1_weights",
]

GRID_MARGIN = 6  # transfer-grid cells kept beyond the mesh hull


# ---------------------------------------------------------------------------
# Composite Lagrangian velocity

def lagrangian_velocity(particles, x, y, *, sheet=None, gamma=None,
                        u_inf=(0.0, 0.0), backend="direct", theta=0.3):
    """Velocity of particles + sheet + free stream at the query points."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if particles is not None and particles.n:
        if backend == "direct":
            u, v = induced_velocity_direct(particles, x, y)
        elif backend == "tree":
            u, v = induced_velocity_tree(particles, x, y, theta)
        else:
            raise ConfigurationError(f"unknown velocity backend {backend!r}")
    else:
        u = np.zeros_like(x)
        v = np.zeros_like(y)
    if sheet is not None and gamma is not None:
        us, vs = sheet.velocity(gamma, x, y)
        u = u + us
        v = v + vs
    return u + u_inf[0], v + u_inf[1]


# ---------------------------------------------------------------------------
# Exact P1 integration over a clipped region

def _near_loop_triangles(mesh, loop):
    """Conservative mask of triangles that might touch the loop polyline."""
    cell = 2.0 * float(mesh.cell_diameters().max())
    a = np.asarray(loop, dtype=float)
    b = np.roll(a, -1, axis=0)
    marked = set()
    for (x1, y1), (x2, y2) in zip(a, b):
        seg = math.hypot(x2 - x1, y2 - y1)
        n = max(2, int(math.ceil(seg / (0.5 * cell))) + 1)
        ts = np.linspace(0.0, 1.0, n)
        for px, py in zip(x1 + ts * (x2 - x1), y1 + ts * (y2 - y1)):
            ci = int(math.floor(px / cell))
            cj = int(math.floor(py / cell))
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    marked.add((ci + di, cj + dj))
    cen = mesh.vertices[mesh.triangles].mean(axis=1)
    ci = np.floor(cen[:, 0] / cell).astype(np.int64)
    cj = np.floor(cen[:, 1] / cell).astype(np.int64)
    return np.fromiter(((i, j) in marked for i, j in zip(ci, cj)),
                       dtype=bool, count=len(ci))


def _loop_weights(space: TaylorHoodSpace, loop):
    """w such that w . omega = integral of the P1 field inside the loop."""
    mesh = space.mesh
    verts = mesh.vertices
    tris = mesh.triangles
    region = PolyRegion([loop])
    ins = region.contains(verts[:, 0], verts[:, 1])
    tri_ins = ins[tris]
    near = _near_loop_triangles(mesh, loop)

    w = np.zeros(mesh.n_vertices)
    # Triangles with all vertices inside a convex loop lie fully inside it;
    # the integral of the P1 hat functions there is area / 3 per vertex.
    full = tri_ins.all(axis=1) & ~near
    np.add.at(w, tris[full].ravel(), np.repeat(space.detJ[full] / 6.0, 3))

    inv = space.locator().inv
    for t in np.flatnonzero((tri_ins.any(axis=1) | near) & ~full):
        poly = clip_polygon(verts[tris[t]], loop)
        if len(poly) < 3:
            continue
        d = poly - verts[tris[t, 0]]
        xi = inv[t, 0, 0] * d[:, 0] + inv[t, 0, 1] * d[:, 1]
        eta = inv[t, 1, 0] * d[:, 0] + inv[t, 1, 1] * d[:, 1]
        lam = np.stack([1.0 - xi - eta, xi, eta], axis=1)
        # Fan triangulation; the integrand is linear, so each piece
        # contributes its area times the vertex-mean of the hat functions.
        e1 = poly[1:-1] - poly[0]
        e2 = poly[2:] - poly[0]
        areas = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
        mean_lam = (lam[0] + lam[1:-1] + lam[2:]) / 3.0
        w[tris[t]] += areas @ mean_lam
    return w


def region_p1_weights(space: TaylorHoodSpace, outer, inner=None):
    """Nodal weights for the exact integral of a P1 field over the region
    inside `outer` and (when given) outside `inner`."""
    w = _loop_weights(space, outer)
    if inner is not None:
        w = w - _loop_weights(space, inner)
    return w


def _mesh_p1_weights(space: TaylorHoodSpace):
    """Nodal weights for the exact integral of a P1 field over the mesh."""
    w = np.zeros(space.mesh.n_vertices)
    np.add.at(w, space.mesh.triangles.ravel(),
              np.repeat(space.detJ / 6.0, 3))
    return w


# ---------------------------------------------------------------------------
# Domain

def _path_closed(mesh, marker, path) -> bool:
    """True when the boundary path's last vertex links back to its first."""
    edges = mesh.edges_with_marker(marker)
    return any(int(a) == int(path[-1]) and int(b) == int(path[0])
               for a, b in edges)


def _derive_interior(mesh, d_bdry, d_surf, has_wall):
    """Interpolation region rims offset from closed boundary loops."""
    outer = boundary_loops(mesh, marker=OUTER)
    if len(outer) != 1 or not _path_closed(mesh, OUTER, outer[0]):
        raise ConfigurationError(
            "cannot derive the interpolation region: the outer boundary is "
            "not a single closed loop; pass interior= explicitly")
    sigma_o = offset_boundary(mesh.vertices[outer[0]], d_bdry, side="inward")
    if not has_wall:
        return sigma_o, None
    walls = boundary_loops(mesh, marker=WALL)
    if len(walls) != 1 or not _path_closed(mesh, WALL, walls[0]):
        raise ConfigurationError(
            "cannot derive the interpolation region: the wall is not a "
            "single closed loop; pass interior= explicitly")
    sigma_i = offset_boundary(mesh.vertices[walls[0]], d_surf, side="outward")
    return sigma_o, sigma_i


def _transfer_matrix(space: TaylorHoodSpace, grid):
    """Sparse map from P1 vertex values to transfer-grid nodes.

    Each row holds the barycentric weights of the node's enclosing triangle;
    nodes outside the mesh get empty rows.  Weights below 1e-12 are dropped so
    a node sitting on a mesh vertex keeps a single unit entry.
    """
    gx, gy = grid.node_coords()
    tri_idx, bary = space.locator().locate(gx, gy, on_miss="ignore")
    hit = tri_idx >= 0
    rows = np.repeat(np.flatnonzero(hit), 3)
    cols = space.mesh.triangles[tri_idx[hit]].ravel()
    vals = bary[hit].ravel()
    keep = np.abs(vals) > 1e-12
    mat = sp.coo_matrix((vals[keep], (rows[keep], cols[keep])),
                        shape=(grid.n_nodes, space.mesh.n_vertices))
    return mat.tocsr()


class HybridDomain:
    """Static geometry and operators shared by every hybrid step.

    mesh        near-wall FE mesh (markers: 1 wall, 2 outer boundary)
    h           particle lattice spacing
    d_bdry      interpolation region stand-off from the outer boundary
    d_surf      interpolation region stand-off from the wall
    sheet       VortexSheet on the walls (None only for wall-free cases)
    u_inf       free-stream velocity
    interior    optional (outer_loop, inner_loop_or_None) overriding the
                derived interpolation region, for meshes whose boundary
                pieces are open chains
    removal     optional list of loops replacing the derived particle
                removal region
    """

    def __init__(self, mesh, h, d_bdry, d_surf, *, sheet=None,
                 u_inf=(0.0, 0.0), interior=None, removal=None,
                 margin=GRID_MARGIN):
        mesh.validate()
        self.mesh = mesh
        self.space = TaylorHoodSpace(mesh)
        self.h = float(h)
        self.d_bdry = float(d_bdry)
        self.d_surf = float(d_surf)
        self.sheet = sheet
        self.u_inf = (float(u_inf[0]), float(u_inf[1]))

        has_wall = mesh.edges_with_marker(WALL).shape[0] > 0
        if has_wall and sheet is None:
            raise ConfigurationError(
                "mesh has wall edges but no vortex sheet was given")
        if sheet is None and math.hypot(*self.u_inf) > 0.0:
            raise ConfigurationError(
                "a free stream needs a wall; wall-free domains are only "
                "valid for self-contained vortex systems")

        if interior is None:
            interior = _derive_interior(mesh, self.d_bdry, self.d_surf,
                                        has_wall)
        self.interp_outer, self.interp_inner = interior
        loops = [self.interp_outer]
        if self.interp_inner is not None:
            loops.append(self.interp_inner)
        self.interp_region = PolyRegion(loops)
        if removal is None:
            removal = [self.interp_outer]
        self.removal_region = PolyRegion(removal)

        verts = mesh.vertices
        bbox = (float(verts[:, 0].min()), float(verts[:, 0].max()),
                float(verts[:, 1].min()), float(verts[:, 1].max()))
        self.grid = build_grid(bbox, self.h).expanded(margin)
        self.W = _transfer_matrix(self.space, self.grid)
        self.support = (np.diff(self.W.indptr) > 0).reshape(
            self.grid.ny, self.grid.nx)

        interp_mask = self.interp_region.raster(self.grid)
        if not np.all(self.support[interp_mask]):
            raise ConfigurationError(
                "interpolation region extends outside the mesh; shrink it or "
                "grow the mesh")
        self.removal_mask = self.removal_region.raster(self.grid)
        if not np.all(self.removal_mask[interp_mask]):
            raise ConfigurationError(
                "interpolation region must lie inside the removal region")
        jj, ii = np.nonzero(interp_mask)
        self.cohort_x = self.grid.xs[ii]
        self.cohort_y = self.grid.ys[jj]

        self.q_interp = region_p1_weights(self.space, self.interp_outer,
                                          self.interp_inner)
        self.q_mesh = _mesh_p1_weights(self.space)

        self.bc_dofs = self.space.boundary_scalar_dofs(markers={OUTER})
        if self.bc_dofs.size == 0:
            raise ConfigurationError("mesh has no outer boundary edges")
        sc = self.space.scalar_coords()
        self.bc_x = sc[self.bc_dofs, 0].copy()
        self.bc_y = sc[self.bc_dofs, 1].copy()
        self.wall_dofs = self.space.boundary_scalar_dofs(markers={WALL})

    # -- lattice membership helpers ------------------------------------

    def _node_indices(self, x, y):
        gi = np.rint(x / self.h).astype(np.int64) - self.grid.ix0
        gj = np.rint(y / self.h).astype(np.int64) - self.grid.iy0
        on = (np.abs(x - (gi + self.grid.ix0) * self.h) <= 1e-9 * self.h) \
            & (np.abs(y - (gj + self.grid.iy0) * self.h) <= 1e-9 * self.h)
        return gi, gj, on

    def _mask_membership(self, x, y, mask, region):
        """Membership in a rasterised region; lattice points use the mask,
        stragglers fall back to the polygon test."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        gi, gj, on = self._node_indices(x, y)
        out = np.zeros(x.shape, dtype=bool)
        inside = on & (gi >= 0) & (gi < self.grid.nx) \
            & (gj >= 0) & (gj < self.grid.ny)
        out[inside] = mask[gj[inside], gi[inside]]
        off = ~on
        if np.any(off):
            out[off] = region.contains(x[off], y[off])
        return out

    def in_removal(self, x, y):
        return self._mask_membership(x, y, self.removal_mask,
                                     self.removal_region)

    def in_mesh(self, x, y):
        """Membership in the FE subdomain (lattice fast path)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        gi, gj, on = self._node_indices(x, y)
        out = np.zeros(x.shape, dtype=bool)
        inside = on & (gi >= 0) & (gi < self.grid.nx) \
            & (gj >= 0) & (gj < self.grid.ny)
        out[inside] = self.support[gj[inside], gi[inside]]
        off = ~on
        if np.any(off):
            tri, _ = self.space.locator().locate(x[off], y[off],
                                                 on_miss="ignore")
            out[off] = tri >= 0
        return out

    def expand_bc(self, record, wall_velocity=None):
        """Full-length Dirichlet vector from a flat outer-boundary record."""
        ns = self.space.n_scalar
        nb = self.bc_dofs.size
        bc = np.zeros(self.space.n_velocity)
        bc[self.bc_dofs] = record[:nb]
        bc[ns + self.bc_dofs] = record[nb:]
        if wall_velocity is not None:
            nw = self.wall_dofs.size
            bc[self.wall_dofs] = wall_velocity[:nw]
            bc[ns + self.wall_dofs] = wall_velocity[nw:]
        return bc

    def grid_vorticity(self, omega_h):
        """P1 vorticity pushed onto the transfer grid, shape (ny, nx)."""
        return (self.W @ omega_h).reshape(self.grid.ny, self.grid.nx)


# ---------------------------------------------------------------------------
# State

@dataclass(frozen=True)
class HybridState:
    """Joint solver state at time t.

    bc_lo/bc_hi are the outer-boundary velocity records at t - dt_L and t,
    flat [u at outer dofs; v at outer dofs]; the Eulerian sub-steps of the
    next hybrid step interpolate between them.  kelvin is the conserved
    total circulation (sheet + particles) fixed at initialisation; leaked
    accumulates the circulation of particles deleted outside the mesh,
    which each sheet solve re-absorbs.
    """

    particles: ParticleField
    gamma: np.ndarray | None
    fe: FeState
    bc_lo: np.ndarray
    bc_hi: np.ndarray
    t: float
    kelvin: float
    leaked: float = 0.0


def kelvin_total(domain: HybridDomain, particles, gamma) -> float:
    """Total circulation carried by the sheet and the particles."""
    total = particles.total_circulation()
    if domain.sheet is not None and gamma is not None:
        total += domain.sheet.physical_circulation(gamma)
    return total


# ---------------------------------------------------------------------------
# Boundary-condition records

def interp_bc(bc_lo, bc_hi, t_lo, t_hi, t):
    """Linear interpolation of the boundary record inside [t_lo, t_hi]."""
    eps = 8.0 * np.spacing(max(abs(t_lo), abs(t_hi), 1.0))
    if t < t_lo - eps or t > t_hi + eps:
        raise ValueError(
            f"t={t!r} outside the record interval [{t_lo!r}, {t_hi!r}]")
    if t_hi == t_lo:
        return np.array(bc_hi, dtype=float, copy=True)
    s = min(1.0, max(0.0, (t - t_lo) / (t_hi - t_lo)))
    return (1.0 - s) * np.asarray(bc_lo) + s * np.asarray(bc_hi)


def evolve_eulerian(domain: HybridDomain, solver, fe: FeState, bc_lo, bc_hi,
                    t_lo, t_hi, n_sub, wall_velocity=None) -> FeState:
    """March the FE patch through n_sub IPCS steps with interpolated BCs."""
    if n_sub < 1:
        raise ConfigurationError(f"n_sub must be >= 1, got {n_sub}")
    span = t_hi - t_lo
    if abs(solver.dt * n_sub - span) > 1e-9 * max(span, solver.dt):
        raise ConfigurationError(
            f"Eulerian step {solver.dt:g} x {n_sub} does not tile the "
            f"Lagrangian step {span:g}")
    for k in range(1, n_sub + 1):
        tk = t_lo + span * (k / n_sub)
        bc = domain.expand_bc(interp_bc(bc_lo, bc_hi, t_lo, t_hi, tk),
                              wall_velocity)
        try:
            fe = solver.step(fe, bc)
        except SolverError as exc:
            raise type(exc)(
                f"eulerian sub-step {k}/{n_sub} at t={tk:.9g}: {exc}"
            ) from exc
    return fe


# ---------------------------------------------------------------------------
# Particle regeneration and vorticity transfer

def regenerate_particles(domain: HybridDomain, particles: ParticleField):
    """Rebuild the particle population inside the FE patch.

    Every particle inside the removal region (everything enclosed by the
    interpolation region's outer rim, wall gap included) is dropped; a
    zero-strength particle is inserted on each interpolation node.  Returns
    (field, n_kept, leaked) with the inserted cohort in the trailing slots.

    `leaked` is the total circulation of dropped particles that sat outside
    the FE subdomain (remesh lobes reaching through the wall, and similar).
    Dropping inside the mesh is self-compensating through the sheet target,
    dropping outside is not, so the caller must fold `leaked` back into the
    sheet constraint to keep the total circulation exact.
    """
    drop = domain.in_removal(particles.x, particles.y)
    keep = ~drop
    n_kept = int(np.count_nonzero(keep))
    leaked = 0.0
    if n_kept < particles.n:
        outside = drop & ~domain.in_mesh(particles.x, particles.y)
        if np.any(outside):
            leaked = float(math.fsum(particles.gam[outside]))
    x = np.concatenate([particles.x[keep], domain.cohort_x])
    y = np.concatenate([particles.y[keep], domain.cohort_y])
    gam = np.concatenate([particles.gam[keep],
                          np.zeros(domain.cohort_x.size)])
    return replace(particles, x=x, y=y, gam=gam), n_kept, leaked


def transfer_vorticity(domain: HybridDomain, omega_h, x, y):
    """Sample the FE vorticity at particle positions via the transfer grid.

    omega_h is the P1 vorticity coefficient vector.  Points outside the mesh
    support read as zero (with a warning); in the hybrid step the sample
    points are the interpolation nodes, which always have full support.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w2d = domain.grid_vorticity(omega_h)
    field = NodalField(domain.grid, w2d)
    vals = np.zeros(x.shape)
    x0, x1, y0, y1 = domain.grid.hull
    in_hull = (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)
    if np.any(in_hull):
        vals[in_hull] = field.sample(x[in_hull], y[in_hull])
    sup = domain.support
    gi = np.clip(((x - x0) / domain.grid.h).astype(np.int64), 0,
                 domain.grid.nx - 2)
    gj = np.clip(((y - y0) / domain.grid.h).astype(np.int64), 0,
                 domain.grid.ny - 2)
    covered = in_hull & (sup[gj, gi] | sup[gj, gi + 1]
                         | sup[gj + 1, gi] | sup[gj + 1, gi + 1])
    n_out = int(np.count_nonzero(~covered))
    if n_out:
        warnings.warn(
            f"{n_out} sample point(s) outside the mesh support read "
            "vorticity 0", RuntimeWarning, stacklevel=2)
    return vals


def conserve_circulation(domain: HybridDomain, gam_cohort, omega_h):
    """Shift the cohort uniformly so its total matches the FE circulation
    inside the interpolation region (exact P1 quadrature)."""
    target = float(domain.q_interp @ omega_h)
    n = gam_cohort.size
    if n == 0:
        if target != 0.0:
            raise CouplingError(
                f"no interpolation nodes to carry circulation {target:g}")
        return np.asarray(gam_cohort, dtype=float)
    shift = (target - math.fsum(gam_cohort)) / n
    return gam_cohort + shift


def sheet_circulation_target(domain: HybridDomain, omega_h,
                             particles: ParticleField) -> float:
    """Circulation the wall sheet must carry: FE total minus what the
    particles inside the patch already hold."""
    total_fe = float(domain.q_mesh @ omega_h)
    inside = domain.in_mesh(particles.x, particles.y)
    carried = float(math.fsum(particles.gam[inside]))
    return total_fe - carried


# ---------------------------------------------------------------------------
# The hybrid step

def hybrid_step(domain: HybridDomain, solver, state: HybridState, dt_l, k_e,
                nu, *, scheme="rk2", backend="direct", theta=0.3,
                wall_bc=None, panel_wall=None) -> HybridState:
    """One Lagrangian step of the coupled system.

    Phases: (1) particles convect/remesh/diffuse under the composite
    velocity; (2) the evolved Lagrangian field is sampled on the patch's
    outer boundary; (3) the FE patch takes k_e sub-steps against the
    interpolated records; (4) particles inside the patch are rebuilt from
    the FE vorticity and the wall sheet is re-solved.  Any failure aborts
    the step with the phase attached; `state` is never mutated.

    wall_bc: optional flat wall-velocity record (moving-wall episodes);
    panel_wall: matching (n_panels, 2) wall velocity for the sheet solve.
    """
    t0 = state.t
    t1 = t0 + dt_l

    try:
        def field(xs, ys):
            moving = replace(state.particles, x=xs, y=ys)
            return lagrangian_velocity(
                moving, xs, ys, sheet=domain.sheet, gamma=state.gamma,
                u_inf=domain.u_inf, backend=backend, theta=theta)

        parts = vpm_step(state.particles, field, dt_l, nu, scheme=scheme)
    except Exception as exc:
        raise PhaseError("lagrangian", exc) from exc

    try:
        ub, vb = lagrangian_velocity(
            parts, domain.bc_x, domain.bc_y, sheet=domain.sheet,
            gamma=state.gamma, u_inf=domain.u_inf, backend=backend,
            theta=theta)
        rec1 = np.concatenate([ub, vb])
        if not np.all(np.isfinite(rec1)):
            raise BlowupError("boundary record is not finite")
    except Exception as exc:
        raise PhaseError("boundary-sampling", exc) from exc

    try:
        fe = evolve_eulerian(domain, solver, state.fe, state.bc_hi, rec1,
                             t0, t1, k_e, wall_velocity=wall_bc)
    except Exception as exc:
        raise PhaseError("eulerian", exc) from exc

    try:
        omega = solver.vorticity(fe)
        parts, n_kept, leak = regenerate_particles(domain, parts)
        leaked = state.leaked + leak
        w_vals = transfer_vorticity(domain, omega, domain.cohort_x,
                                    domain.cohort_y)
        gam_cohort = conserve_circulation(domain, w_vals * domain.h ** 2,
                                          omega)
        gam = parts.gam.copy()
        gam[n_kept:] = gam_cohort
        parts = replace(parts, gam=gam)
        if domain.sheet is not None:
            # The leaked term re-credits circulation deleted outside the
            # mesh to the sheet, which is where wall-adjacent vorticity
            # belongs; without it the total drifts by every swept lobe.
            target = sheet_circulation_target(domain, omega, parts) + leaked
            ua, va = lagrangian_velocity(
                parts, domain.sheet.xc, domain.sheet.yc, u_inf=domain.u_inf,
                backend=backend, theta=theta)
            gamma = domain.sheet.solve(np.stack([ua, va], axis=1),
                                       circulation=target,
                                       u_wall=panel_wall)
        elif leaked != 0.0:
            raise CouplingError(
                f"circulation {leaked:g} was deleted outside the mesh of a "
                "wall-free domain and has nowhere to go")
        else:
            gamma = None
    except Exception as exc:
        raise PhaseError("correction", exc) from exc

    return HybridState(particles=parts, gamma=gamma, fe=fe,
                       bc_lo=state.bc_hi, bc_hi=rec1, t=t1,
                       kelvin=state.kelvin, leaked=leaked)


def initial_state(domain: HybridDomain, solver, particles: ParticleField, *,
                  t0=0.0, backend="direct", theta=0.3) -> HybridState:
    """Consistent joint state from an initial particle field.

    The sheet starts with zero net circulation (the particles already carry
    all initial vorticity); the FE velocity is the composite Lagrangian
    velocity sampled at every velocity DOF, and the pressure starts at zero.
    """
    gamma = None
    if domain.sheet is not None:
        ua, va = lagrangian_velocity(
            particles, domain.sheet.xc, domain.sheet.yc, u_inf=domain.u_inf,
            backend=backend, theta=theta)
        gamma = domain.sheet.solve(np.stack([ua, va], axis=1),
                                   circulation=0.0)

    def vel(x, y):
        return lagrangian_velocity(particles, x, y, sheet=domain.sheet,
                                   gamma=gamma, u_inf=domain.u_inf,
                                   backend=backend, theta=theta)

    u0 = domain.space.interpolate_velocity(vel)
    ns = domain.space.n_scalar
    # Wall DOFs sit exactly on the sheet panels, where the induced velocity
    # is a jump; the composite's no-slip-side limit is the wall velocity.
    u0[domain.wall_dofs] = 0.0
    u0[ns + domain.wall_dofs] = 0.0
    fe = FeState(u=u0, p=np.zeros(domain.space.n_pressure), t=t0)
    rec = np.concatenate([u0[domain.bc_dofs], u0[ns + domain.bc_dofs]])
    kelvin = kelvin_total(domain, particles, gamma)
    return HybridState(particles=particles, gamma=gamma, fe=fe, bc_lo=rec,
                       bc_hi=rec, t=t0, kelvin=kelvin)
