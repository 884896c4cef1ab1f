"""Constant-strength vortex panels on closed loops.

Loops are stored counterclockwise and positive panel strength corresponds to
clockwise swirl, so the no-slip solution for a cylinder in a unit stream is
gamma(theta) = +2 sin(theta).  The no-penetration/no-slip condition is
collocated at panel midpoints on the loop-interior side: for external flow
that is the body side, for an internal (box) flow it is the fluid side.

The sheet's physical circulation, measured counterclockwise by a contour
around the loop, is -sum(gamma_k ds_k); solve() accepts that physical value
as its constraint and handles the sign internally.
"""

from __future__ import annotations

import numpy as np

from .errors import GeometryError, SolverError
from .geometry import ensure_ccw

_CHUNK = 4096
_EDGE_TOL = 1e-12


class VortexSheet:
    """Panelized closed loops with a cached least-squares solve operator.

    The influence matrix depends only on the geometry, so repeated solves
    against new ambient fields cost one matrix-vector product.
    """

    def __init__(self, loops):
        if isinstance(loops, np.ndarray) and loops.ndim == 2:
            loops = [loops]
        self.loops = [ensure_ccw(lp) for lp in loops]
        a = np.vstack([lp for lp in self.loops])
        b = np.vstack([np.roll(lp, -1, axis=0) for lp in self.loops])
        t = b - a
        self.ds = np.hypot(t[:, 0], t[:, 1])
        if np.any(self.ds <= 0):
            raise GeometryError("zero-length panel")
        self.n_panels = len(self.ds)
        counts = np.array([len(lp) for lp in self.loops])
        self._loop_slices = [slice(s - c, s) for s, c in
                             zip(np.cumsum(counts), counts)]
        self.za = a[:, 0] + 1j * a[:, 1]
        self.zb = b[:, 0] + 1j * b[:, 1]
        self.zc = 0.5 * (self.za + self.zb)
        self.ea = (self.zb - self.za) / self.ds      # e^{i alpha}
        self.xc = self.zc.real
        self.yc = self.zc.imag
        self.t_hat = np.stack([self.ea.real, self.ea.imag], axis=1)
        # Interior (left-of-direction) normal of the ccw loop.
        self.n_hat = np.stack([-self.ea.imag, self.ea.real], axis=1)
        self.A = self._influence_matrix()
        self._solve_op = self._build_solver()

    # -- induction -----------------------------------------------------

    def _panel_logs(self, z):
        """log((z - zb) / (z - za)) per (target, panel), interior-side limit
        for targets on a panel."""
        w = (z[:, None] - self.za[None, :]) * np.conj(self.ea)[None, :]
        eta = w.imag
        on_line = np.abs(eta) <= _EDGE_TOL * self.ds[None, :]
        if np.any(on_line):
            w = w + 1j * np.where(on_line, _EDGE_TOL * self.ds[None, :] - eta,
                                  0.0)
        return np.log((w - self.ds[None, :]) / w)

    def velocity_complex(self, gamma, z):
        """Sheet velocity u + i v at complex targets z."""
        z = np.atleast_1d(z)
        out = np.empty(z.shape, dtype=complex)
        for k0 in range(0, z.size, _CHUNK):
            sl = slice(k0, min(k0 + _CHUNK, z.size))
            logs = self._panel_logs(z[sl])
            out[sl] = (1j / (2 * np.pi)) * (
                (gamma * self.ea)[None, :] * np.conj(logs)).sum(axis=1)
        return out

    def velocity(self, gamma, qx, qy):
        qx = np.atleast_1d(np.asarray(qx, dtype=float))
        qy = np.atleast_1d(np.asarray(qy, dtype=float))
        w = self.velocity_complex(gamma, (qx + 1j * qy).ravel())
        return w.real.reshape(qx.shape), w.imag.reshape(qx.shape)

    # -- linear system ---------------------------------------------------

    def _influence_matrix(self):
        """A[j, k]: tangential velocity at midpoint j from unit panel k.

        The interior-side limit puts +1/2 on the diagonal.  A straight
        panel's own principal value vanishes, but the arc the panel stands in
        for has one: -kappa ds / 4 pi, with kappa estimated from the turn
        angles to the neighbors.  Without it the discrete sine mode on a
        circle is off by O(1/N), which is what the no-slip solve amplifies.
        Straight walls have zero turn and are unaffected.
        """
        rows = np.empty((self.n_panels, self.n_panels))
        tc = np.conj(self.ea)
        for k0 in range(0, self.n_panels, _CHUNK):
            sl = slice(k0, min(k0 + _CHUNK, self.n_panels))
            logs = self._panel_logs(self.zc[sl])
            w = (1j / (2 * np.pi)) * self.ea[None, :] * np.conj(logs)
            rows[sl] = (tc[sl, None] * w).real
        kappa = np.empty(self.n_panels)
        for sl in self._loop_slices:
            ea = self.ea[sl]
            turn = np.angle(ea / np.roll(ea, 1))
            kappa[sl] = (turn + np.roll(turn, -1)) / (2.0 * self.ds[sl])
        idx = np.arange(self.n_panels)
        rows[idx, idx] -= kappa * self.ds / (4.0 * np.pi)
        return rows

    def _build_solver(self):
        # One extra row pins the total strength.  Weighting it well above the
        # O(1) influence coefficients makes the least-squares solution honor
        # the circulation almost exactly, spilling any incompatibility into
        # the slip rows instead.
        wc = 100.0 / np.mean(self.ds)
        stacked = np.vstack([self.A, wc * self.ds[None, :]])
        self._constraint_weight = wc
        U, s, Vt = np.linalg.svd(stacked, full_matrices=False)
        # A closed loop gives A one near-null direction (constant strength),
        # which the constraint row absorbs; anything further is degenerate.
        if s[-1] < 1e-10 * s[0]:
            raise SolverError(
                "panel system rank-deficient beyond the constant mode")
        return (Vt.T / s) @ U.T

    def solve(self, u_amb, circulation: float = 0.0, u_wall=None):
        """Panel strengths cancelling the ambient tangential velocity.

        u_amb: (n_panels, 2) ambient velocity at the midpoints (everything
        except the sheet itself).  circulation: physical (counterclockwise)
        circulation the sheet must carry.  u_wall: optional wall velocity.
        """
        u_amb = np.asarray(u_amb, dtype=float)
        if u_amb.shape != (self.n_panels, 2):
            raise ValueError(f"u_amb must be ({self.n_panels}, 2)")
        rel = u_amb if u_wall is None else u_amb - np.asarray(u_wall, dtype=float)
        b = -np.einsum("ij,ij->i", rel, self.t_hat)
        rhs = np.concatenate([b, [-self._constraint_weight * circulation]])
        gamma = self._solve_op @ rhs
        # The least-squares solve honors the circulation row only up to the
        # residual of an incompatible slip system.  A constant added to gamma
        # is (nearly) invisible to the collocation side, so slide along that
        # mode until the physical circulation is exact.
        return gamma + (self.physical_circulation(gamma) - circulation) / np.sum(self.ds)

    def physical_circulation(self, gamma) -> float:
        """Counterclockwise circulation of the sheet's far field."""
        return float(-np.sum(gamma * self.ds))

    def slip(self, gamma, u_amb, u_wall=None):
        """Residual tangential velocity on the collocation side."""
        rel = np.asarray(u_amb, dtype=float)
        if u_wall is not None:
            rel = rel - np.asarray(u_wall, dtype=float)
        return self.A @ gamma + np.einsum("ij,ij->i", rel, self.t_hat)
