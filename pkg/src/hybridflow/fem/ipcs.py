"""Incremental pressure-correction Navier-Stokes stepper on Taylor-Hood
elements.

Each step solves three linear systems: a tentative velocity with implicit
midpoint viscous stress and fully explicit convection, a pressure Poisson
update, and a mass-matrix velocity correction.  The tentative system keeps
the natural boundary terms (pressure and transposed-gradient tractions) so
the weak form matches the strong equations; with full Dirichlet velocity
data those rows are eliminated anyway.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..errors import BlowupError, ConfigurationError, SolverError
from .mesh import WALL
from .space import QP_W, TaylorHoodSpace

# The tentative-velocity ILU is factored once per solver, so a generous
# cutoff pays for itself over any run longer than a handful of steps; the
# limit guards peak memory (roughly 25 MB per thousand triangles).
_ILU_MAX_TRIANGLES = 45000

# A diverging run can hold finite velocities whose squares overflow the
# downstream diagnostics; cap well below sqrt(float max) so blowup is
# reported here, where the time level is known.
_VELOCITY_CAP = 1e100


@dataclass(frozen=True)
class FeState:
    """Velocity/pressure coefficients at one time level."""

    u: np.ndarray  # (2 * n_scalar,)
    p: np.ndarray  # (n_pressure,)
    t: float


class IPCSSolver:
    """Assembles once for a fixed mesh, time step, and viscosity."""

    def __init__(self, space: TaylorHoodSpace, nu: float, dt: float,
                 maxiter: int = 5000):
        if dt <= 0.0 or nu < 0.0:
            raise ConfigurationError("need dt > 0 and nu >= 0")
        self.space = space
        self.nu = nu
        self.dt = dt
        self.maxiter = maxiter
        ns = space.n_scalar

        Ms = space.mass_p2()
        self.Ms = Ms
        self.Mv = sp.block_diag([Ms, Ms], format="csr")
        Kxx = space.stiffness_p2(0, 0)
        Kxy = space.stiffness_p2(0, 1)
        Kyx = space.stiffness_p2(1, 0)
        Kyy = space.stiffness_p2(1, 1)
        self.Keps = sp.bmat(
            [[2.0 * Kxx + Kyy, Kyx], [Kxy, Kxx + 2.0 * Kyy]], format="csr"
        )
        self.Dx = space.div_p1_p2(0)
        self.Dy = space.div_p1_p2(1)
        self.DxT = self.Dx.T.tocsr()
        self.DyT = self.Dy.T.tocsr()
        self.GPx = space.grad_p2_p1(0)
        self.GPy = space.grad_p2_p1(1)
        self.Kp = space.stiffness_p1()
        self.Mp = space.mass_p1()

        bt = space.boundary()
        Bpx, Bpy = bt.pressure_boundary_blocks()
        self.Bp = sp.vstack([Bpx, Bpy], format="csr")
        T = bt.transpose_grad_boundary_blocks()
        self.Bb = sp.bmat([[T[0][0], T[0][1]], [T[1][0], T[1][1]]],
                          format="csr")

        A1 = (self.Mv / dt + 0.5 * nu * self.Keps - 0.5 * nu * self.Bb).tocsr()
        bd = space.boundary_scalar_dofs()
        self.dirichlet = np.concatenate([bd, ns + bd])
        mask = np.ones(space.n_velocity, dtype=bool)
        mask[self.dirichlet] = False
        self.interior = np.flatnonzero(mask)
        self.A_ii = A1[self.interior][:, self.interior].tocsr()
        self.A_ib = A1[self.interior][:, self.dirichlet].tocsr()

        if space.mesh.n_triangles <= _ILU_MAX_TRIANGLES:
            ilu = spla.spilu(self.A_ii.tocsc(), drop_tol=1e-5, fill_factor=15.0)
            self._M1 = spla.LinearOperator(self.A_ii.shape, ilu.solve)
        else:
            d = self.A_ii.diagonal()
            self._M1 = spla.LinearOperator(
                self.A_ii.shape, lambda x, d=d: x / d
            )
        self._idiag_Kp = 1.0 / self.Kp.diagonal()
        self._idiag_Ms = 1.0 / Ms.diagonal()
        self._idiag_Mp = 1.0 / self.Mp.diagonal()

        self._warm_ustar = None
        self._warm_w = None

        # pressure DOFs away from the boundary, used by divergence checks
        bverts = np.unique(space.mesh.boundary_edges.ravel())
        pmask = np.ones(space.n_pressure, dtype=bool)
        pmask[bverts] = False
        self.interior_pressure = np.flatnonzero(pmask)

    # ---- linear solves -------------------------------------------------

    def _cg(self, A, b, x0, idiag, rtol, label):
        M = spla.LinearOperator(A.shape, lambda x: x * idiag)
        x, info = spla.cg(A, b, x0=x0, M=M, rtol=rtol, atol=0.0,
                          maxiter=self.maxiter)
        if info != 0:
            raise SolverError(
                f"{label} solve did not converge (info={info}, "
                f"n={b.size}, rtol={rtol})"
            )
        return x

    def _solve_tentative(self, b, bc):
        ub = bc[self.dirichlet]
        rhs = b[self.interior] - self.A_ib @ ub
        x0 = self._warm_ustar
        x, info = spla.bicgstab(self.A_ii, rhs, x0=x0, M=self._M1,
                                rtol=1e-12, atol=0.0, maxiter=self.maxiter)
        if info != 0:
            raise SolverError(
                f"tentative velocity solve did not converge "
                f"(info={info}, n={rhs.size})"
            )
        nb = np.linalg.norm(rhs)
        if nb > 0.0:
            res = np.linalg.norm(self.A_ii @ x - rhs) / nb
            if res > 1e-9:
                raise SolverError(
                    f"tentative velocity residual {res:.3e} above 1e-9"
                )
        self._warm_ustar = x.copy()
        u = np.empty(self.space.n_velocity)
        u[self.interior] = x
        u[self.dirichlet] = ub
        return u

    # ---- weak forms ----------------------------------------------------

    def convection_vector(self, u: np.ndarray) -> np.ndarray:
        """Assembled vector of <u . grad u, v> for the current velocity."""
        spc = self.space
        dofs = spc.cell_dofs
        ux, uy = spc.velocity_components(u)
        ue = np.stack([ux[dofs], uy[dofs]], axis=-1)          # (nt, 6, c)
        uq = np.einsum("qi,eic->eqc", spc.p2_at_qp, ue)       # values
        guq = np.einsum("eqia,eic->eqca", spc.gphi, ue)       # d_a u_c
        conv = np.einsum("eqb,eqcb->eqc", uq, guq)
        fel = 0.5 * np.einsum("q,e,qi,eqc->eic", QP_W, spc.detJ,
                              spc.p2_at_qp, conv)
        out = np.zeros(spc.n_velocity)
        np.add.at(out, dofs, fel[:, :, 0])
        np.add.at(out, spc.n_scalar + dofs, fel[:, :, 1])
        return out

    def divergence_dual(self, u: np.ndarray) -> np.ndarray:
        """<div u, q> against every pressure basis function."""
        ux, uy = self.space.velocity_components(u)
        return self.Dx @ ux + self.Dy @ uy

    # ---- the scheme ------------------------------------------------------

    def tentative_velocity(self, state: FeState, bc: np.ndarray) -> np.ndarray:
        u0, p0 = state.u, state.p
        b = self.Mv @ (u0 / self.dt)
        b -= self.convection_vector(u0)
        b -= 0.5 * self.nu * (self.Keps @ u0)
        b += 0.5 * self.nu * (self.Bb @ u0)
        px = self.DxT @ p0
        py = self.DyT @ p0
        b[: self.space.n_scalar] += px
        b[self.space.n_scalar:] += py
        b -= self.Bp @ p0
        return self._solve_tentative(b, bc)

    def pressure_correction(self, u_star: np.ndarray, p0: np.ndarray
                            ) -> np.ndarray:
        rhs = self.Kp @ p0 - self.divergence_dual(u_star) / self.dt
        rhs = rhs - rhs.mean()  # project onto range of the singular operator
        x0 = p0 - p0.mean()
        p1 = self._cg(self.Kp, rhs, x0, self._idiag_Kp, 1e-12, "pressure")
        return p1 - p1.mean()

    def velocity_correction(self, u_star: np.ndarray, p1: np.ndarray,
                            p0: np.ndarray, bc: np.ndarray) -> np.ndarray:
        ns = self.space.n_scalar
        dp = p1 - p0
        ux, uy = self.space.velocity_components(u_star)
        rx = self.Ms @ ux - self.dt * (self.GPx @ dp)
        ry = self.Ms @ uy - self.dt * (self.GPy @ dp)
        u1 = np.empty(self.space.n_velocity)
        u1[:ns] = self._cg(self.Ms, rx, ux, self._idiag_Ms, 1e-12, "mass")
        u1[ns:] = self._cg(self.Ms, ry, uy, self._idiag_Ms, 1e-12, "mass")
        u1[self.dirichlet] = bc[self.dirichlet]
        return u1

    def step(self, state: FeState, bc: np.ndarray) -> FeState:
        """Advance one time step with the given full-length Dirichlet data."""
        u_star = self.tentative_velocity(state, bc)
        p1 = self.pressure_correction(u_star, state.p)
        u1 = self.velocity_correction(u_star, p1, state.p, bc)
        if not (np.isfinite(u1).all() and np.isfinite(p1).all()):
            raise BlowupError(
                f"non-finite velocity or pressure at t={state.t + self.dt:.6g}"
            )
        if np.max(np.abs(u1)) > _VELOCITY_CAP:
            raise BlowupError(
                f"velocity diverged at t={state.t + self.dt:.6g}"
            )
        return FeState(u1, p1, state.t + self.dt)

    # ---- derived fields --------------------------------------------------

    def vorticity(self, state: FeState) -> np.ndarray:
        """L2 projection of curl(u) onto the linear pressure space."""
        ux, uy = self.space.velocity_components(state.u)
        rhs = self.Dx @ uy - self.Dy @ ux
        x0 = self._warm_w if self._warm_w is not None else np.zeros_like(rhs)
        w = self._cg(self.Mp, rhs, x0, self._idiag_Mp, 1e-12, "vorticity")
        self._warm_w = w.copy()
        return w

    def wall_forces(self, state: FeState):
        """Traction integral over the wall, split into (pressure, viscous).

        The normal points from the body into the fluid, so a uniform
        free stream yields positive drag.
        """
        spc = self.space
        bt = spc.boundary()
        sel = bt.select(WALL)
        if sel.size == 0:
            raise ConfigurationError("mesh has no wall boundary edges")
        tri = spc.mesh.triangles[bt.owner[sel]]
        dofs = spc.cell_dofs[bt.owner[sel]]
        n_wall = -bt.normal_out[sel]
        wl = bt.w[None, :] * bt.length[sel][:, None]  # (nbw, nq)

        p_at = np.einsum("bqj,bj->bq", bt.bary[sel], state.p[tri])
        f_pres = -np.einsum("bq,bq,ba->a", wl, p_at, n_wall)

        ux, uy = spc.velocity_components(state.u)
        grads = bt.p2_grads[sel]
        gu = np.stack(
            [
                np.einsum("bqic,bi->bqc", grads, ux[dofs]),
                np.einsum("bqic,bi->bqc", grads, uy[dofs]),
            ],
            axis=2,
        )  # (nbw, nq, a, c) = d u_a / d x_c
        sig = gu + np.swapaxes(gu, 2, 3)
        trac = self.nu * np.einsum("bqac,bc->bqa", sig, n_wall)
        f_visc = np.einsum("bq,bqa->a", wl, trac)
        return f_pres, f_visc

    # ---- integral diagnostics --------------------------------------------

    def kinetic_energy(self, state: FeState) -> float:
        return 0.5 * float(state.u @ (self.Mv @ state.u))

    def enstrophy(self, omega: np.ndarray) -> float:
        return 0.5 * float(omega @ (self.Mp @ omega))

    def palinstrophy(self, omega: np.ndarray) -> float:
        return 0.5 * float(omega @ (self.Kp @ omega))
