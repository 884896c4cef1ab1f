"""Taylor-Hood (P2 velocity / P1 pressure) space on a triangle mesh.

Scalar P2 DOFs are numbered vertices first, then edge midpoints, with edges
sorted lexicographically by their (low, high) vertex pair.  Vector fields
store all x components, then all y components.  Pressure DOFs coincide with
vertices.  All volume integrals use a degree-4 six-point triangle rule,
boundary integrals a three-point Gauss rule per edge.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ..errors import GeometryError, OutOfDomainError
from .mesh import TriMesh

# Six-point degree-4 rule in barycentric coordinates.  Weights sum to one;
# integrals over a physical triangle are detJ/2 times the weighted sum.
_B1 = 0.445948490915965
_B2 = 0.091576213509771
_W1 = 0.223381589678011
_W2 = 0.109951743655322
_QP_BARY = np.array(
    [
        [1.0 - 2.0 * _B1, _B1, _B1],
        [_B1, 1.0 - 2.0 * _B1, _B1],
        [_B1, _B1, 1.0 - 2.0 * _B1],
        [1.0 - 2.0 * _B2, _B2, _B2],
        [_B2, 1.0 - 2.0 * _B2, _B2],
        [_B2, _B2, 1.0 - 2.0 * _B2],
    ]
)
_QP_W = np.array([_W1, _W1, _W1, _W2, _W2, _W2])

# Three-point Gauss rule on [0, 1].
_EDGE_S = np.array(
    [0.5 * (1.0 - np.sqrt(0.6)), 0.5, 0.5 * (1.0 + np.sqrt(0.6))]
)
_EDGE_W = np.array([5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0])

# Barycentric gradients on the reference triangle.
_DLAMBDA = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])

# public aliases used by the time stepper
QP_W = _QP_W
QP_BARY = _QP_BARY


def p2_values(bary: np.ndarray) -> np.ndarray:
    """Quadratic basis values at barycentric points, shape (..., 6).

    Basis order: the three vertices, then the midpoints of edges
    (v1,v2), (v2,v0), (v0,v1).
    """
    l0, l1, l2 = bary[..., 0], bary[..., 1], bary[..., 2]
    return np.stack(
        [
            l0 * (2.0 * l0 - 1.0),
            l1 * (2.0 * l1 - 1.0),
            l2 * (2.0 * l2 - 1.0),
            4.0 * l1 * l2,
            4.0 * l2 * l0,
            4.0 * l0 * l1,
        ],
        axis=-1,
    )


def p2_ref_grads(bary: np.ndarray) -> np.ndarray:
    """Quadratic basis gradients w.r.t. reference coords, shape (..., 6, 2)."""
    l = [bary[..., i] for i in range(3)]
    g = np.empty(bary.shape[:-1] + (6, 2))
    for i in range(3):
        for a in range(2):
            g[..., i, a] = (4.0 * l[i] - 1.0) * _DLAMBDA[i, a]
    pairs = [(1, 2), (2, 0), (0, 1)]
    for k, (i, j) in enumerate(pairs):
        for a in range(2):
            g[..., 3 + k, a] = 4.0 * (
                l[i] * _DLAMBDA[j, a] + l[j] * _DLAMBDA[i, a]
            )
    return g


def _build_edges(triangles: np.ndarray, nv: int):
    """Unique mesh edges in lexicographic (low, high) order.

    Returns (edge_pairs (ne,2), cell_edges (nt,3)) where cell_edges[t, k]
    is the edge opposite local vertex k.
    """
    pairs = np.concatenate(
        [triangles[:, [1, 2]], triangles[:, [2, 0]], triangles[:, [0, 1]]]
    )
    lo = pairs.min(axis=1).astype(np.int64)
    hi = pairs.max(axis=1).astype(np.int64)
    enc = lo * nv + hi
    uniq, inverse = np.unique(enc, return_inverse=True)
    nt = triangles.shape[0]
    cell_edges = inverse.reshape(3, nt).T.astype(np.int64)
    edge_pairs = np.column_stack([uniq // nv, uniq % nv]).astype(np.int64)
    return edge_pairs, cell_edges


def _scatter(rows, cols, vals, shape):
    m = sp.coo_matrix(
        (vals.ravel(), (rows.ravel(), cols.ravel())), shape=shape
    )
    return m.tocsr()


class TaylorHoodSpace:
    """DOF maps, element geometry, and matrix assembly for one mesh."""

    def __init__(self, mesh: TriMesh):
        mesh.validate()
        self.mesh = mesh
        nv = mesh.n_vertices
        tri = mesh.triangles
        self.edge_pairs, self.cell_edges = _build_edges(tri, nv)
        self.n_edges = self.edge_pairs.shape[0]
        self.n_scalar = nv + self.n_edges
        self.n_velocity = 2 * self.n_scalar
        self.n_pressure = nv
        self.cell_dofs = np.hstack([tri, nv + self.cell_edges])

        verts = mesh.vertices
        p0 = verts[tri[:, 0]]
        d1 = verts[tri[:, 1]] - p0
        d2 = verts[tri[:, 2]] - p0
        self.detJ = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        inv = np.empty((tri.shape[0], 2, 2))
        inv[:, 0, 0] = d2[:, 1]
        inv[:, 0, 1] = -d2[:, 0]
        inv[:, 1, 0] = -d1[:, 1]
        inv[:, 1, 1] = d1[:, 0]
        inv /= self.detJ[:, None, None]
        self.Jinv = inv  # reference gradient @ Jinv = physical gradient

        # P2 gradients at the volume quadrature points, (nt, nq, 6, 2);
        # P1 gradients are constant per element, (nt, 3, 2).
        gref = p2_ref_grads(_QP_BARY)
        self.gphi = np.einsum("qim,ema->eqia", gref, inv)
        self.grad_p1 = np.einsum("im,ema->eia", _DLAMBDA, inv)
        self.p2_at_qp = p2_values(_QP_BARY)

        self._boundary = None
        self._locator = None

    # ---- coordinates and interpolation -------------------------------

    def scalar_coords(self) -> np.ndarray:
        """Coordinates of the P2 scalar DOFs (vertices, then midpoints)."""
        verts = self.mesh.vertices
        mids = 0.5 * (verts[self.edge_pairs[:, 0]] + verts[self.edge_pairs[:, 1]])
        return np.vstack([verts, mids])

    def interpolate_scalar(self, fn) -> np.ndarray:
        xy = self.scalar_coords()
        return np.asarray(fn(xy[:, 0], xy[:, 1]), dtype=float)

    def interpolate_velocity(self, fn) -> np.ndarray:
        """fn(x, y) -> (u, v); returns the blocked coefficient vector."""
        xy = self.scalar_coords()
        u, v = fn(xy[:, 0], xy[:, 1])
        out = np.empty(self.n_velocity)
        out[: self.n_scalar] = u
        out[self.n_scalar:] = v
        return out

    def velocity_components(self, u: np.ndarray):
        return u[: self.n_scalar], u[self.n_scalar:]

    # ---- element-restricted diagnostics -------------------------------

    def integrate_energy(self, u: np.ndarray, tris=None) -> float:
        """0.5 * integral of |u_h|^2 over the given triangles (default all)."""
        sel = slice(None) if tris is None else tris
        dofs = self.cell_dofs[sel]
        ux, uy = self.velocity_components(u)
        ue = np.stack([ux[dofs], uy[dofs]], axis=-1)
        uq = np.einsum("qi,eic->eqc", self.p2_at_qp, ue)
        return 0.25 * float(
            np.einsum("q,e,eqc,eqc->", _QP_W, self.detJ[sel], uq, uq))

    def integrate_enstrophy(self, omega: np.ndarray, tris=None) -> float:
        """0.5 * integral of omega_h^2 for a P1 field over the triangles."""
        sel = slice(None) if tris is None else tris
        we = omega[self.mesh.triangles[sel]]
        wq = np.einsum("qi,ei->eq", _QP_BARY, we)
        return 0.25 * float(
            np.einsum("q,e,eq,eq->", _QP_W, self.detJ[sel], wq, wq))

    def integrate_palinstrophy(self, omega: np.ndarray, tris=None) -> float:
        """0.5 * integral of |grad omega_h|^2 (P1 gradient, elementwise)."""
        sel = slice(None) if tris is None else tris
        g = np.einsum("eia,ei->ea", self.grad_p1[sel],
                      omega[self.mesh.triangles[sel]])
        return 0.25 * float(np.einsum("e,ea,ea->", self.detJ[sel], g, g))

    # ---- assembly -----------------------------------------------------

    def _elem_scatter_p2(self, elem):
        rows = np.broadcast_to(self.cell_dofs[:, :, None], elem.shape)
        cols = np.broadcast_to(self.cell_dofs[:, None, :], elem.shape)
        return _scatter(rows, cols, elem, (self.n_scalar, self.n_scalar))

    def mass_p2(self):
        ref = 0.5 * np.einsum("q,qi,qj->ij", _QP_W, self.p2_at_qp, self.p2_at_qp)
        elem = self.detJ[:, None, None] * ref[None, :, :]
        return self._elem_scatter_p2(elem)

    def stiffness_p2(self, a: int, b: int):
        """K[i, j] = integral of d_a phi_i d_b phi_j over the mesh."""
        elem = 0.5 * np.einsum(
            "q,e,eqi,eqj->eij",
            _QP_W,
            self.detJ,
            self.gphi[:, :, :, a],
            self.gphi[:, :, :, b],
        )
        return self._elem_scatter_p2(elem)

    def mass_p1(self):
        lam = _QP_BARY
        ref = 0.5 * np.einsum("q,qi,qj->ij", _QP_W, lam, lam)
        elem = self.detJ[:, None, None] * ref[None, :, :]
        tri = self.mesh.triangles
        rows = np.broadcast_to(tri[:, :, None], elem.shape)
        cols = np.broadcast_to(tri[:, None, :], elem.shape)
        return _scatter(rows, cols, elem, (self.n_pressure, self.n_pressure))

    def stiffness_p1(self):
        g = self.grad_p1
        elem = 0.5 * self.detJ[:, None, None] * np.einsum("eia,eja->eij", g, g)
        tri = self.mesh.triangles
        rows = np.broadcast_to(tri[:, :, None], elem.shape)
        cols = np.broadcast_to(tri[:, None, :], elem.shape)
        return _scatter(rows, cols, elem, (self.n_pressure, self.n_pressure))

    def div_p1_p2(self, a: int):
        """D[i, j] = integral of phi_i^P1 d_a psi_j^P2 (pressure x velocity)."""
        elem = 0.5 * np.einsum(
            "q,e,qi,eqj->eij", _QP_W, self.detJ, _QP_BARY, self.gphi[:, :, :, a]
        )
        tri = self.mesh.triangles
        rows = np.broadcast_to(tri[:, :, None], elem.shape)
        cols = np.broadcast_to(self.cell_dofs[:, None, :], elem.shape)
        return _scatter(rows, cols, elem, (self.n_pressure, self.n_scalar))

    def grad_p2_p1(self, a: int):
        """G[i, j] = integral of psi_i^P2 d_a phi_j^P1 (velocity x pressure)."""
        # grad_p1 is constant per element, so the quadrature factorizes
        base = 0.5 * np.einsum("q,qi->i", _QP_W, self.p2_at_qp)
        elem = np.einsum("e,i,ej->eij", self.detJ, base, self.grad_p1[:, :, a])
        tri = self.mesh.triangles
        rows = np.broadcast_to(self.cell_dofs[:, :, None], elem.shape)
        cols = np.broadcast_to(tri[:, None, :], elem.shape)
        return _scatter(rows, cols, elem, (self.n_scalar, self.n_pressure))

    # ---- boundary -----------------------------------------------------

    def boundary(self):
        """Precomputed traces at the boundary-edge quadrature points."""
        if self._boundary is None:
            self._boundary = _BoundaryTrace(self)
        return self._boundary

    def boundary_scalar_dofs(self, markers=None) -> np.ndarray:
        """Sorted scalar DOF ids lying on boundary edges (optionally filtered
        by marker set)."""
        mesh = self.mesh
        sel = np.ones(mesh.boundary_edges.shape[0], dtype=bool)
        if markers is not None:
            sel = np.isin(mesh.boundary_markers, list(markers))
        edges = mesh.boundary_edges[sel]
        if edges.size == 0:
            return np.empty(0, dtype=np.int64)
        nv = mesh.n_vertices
        lo = edges.min(axis=1).astype(np.int64)
        hi = edges.max(axis=1).astype(np.int64)
        enc = lo * nv + hi
        enc_all = self.edge_pairs[:, 0] * nv + self.edge_pairs[:, 1]
        eid = np.searchsorted(enc_all, enc)
        dofs = np.concatenate([edges.ravel(), nv + eid])
        return np.unique(dofs)

    # ---- point evaluation ----------------------------------------------

    def locator(self):
        if self._locator is None:
            self._locator = _PointLocator(self.mesh)
        return self._locator

    def evaluate_scalar_p2(self, coeffs, x, y):
        tri_idx, bary = self.locator().locate(x, y)
        vals = p2_values(bary)
        return np.einsum("pi,pi->p", vals, coeffs[self.cell_dofs[tri_idx]])

    def evaluate_velocity(self, u, x, y):
        tri_idx, bary = self.locator().locate(x, y)
        vals = p2_values(bary)
        ux, uy = self.velocity_components(u)
        dofs = self.cell_dofs[tri_idx]
        return (
            np.einsum("pi,pi->p", vals, ux[dofs]),
            np.einsum("pi,pi->p", vals, uy[dofs]),
        )

    def evaluate_scalar_p1(self, coeffs, x, y):
        tri_idx, bary = self.locator().locate(x, y)
        return np.einsum("pi,pi->p", bary, coeffs[self.mesh.triangles[tri_idx]])


class _BoundaryTrace:
    """Owner triangles, normals, and basis traces on boundary edges."""

    def __init__(self, space: TaylorHoodSpace):
        mesh = space.mesh
        self.space = space
        nv = mesh.n_vertices
        tri = mesh.triangles
        be = mesh.boundary_edges
        nbe = be.shape[0]

        directed = np.concatenate(
            [tri[:, [1, 2]], tri[:, [2, 0]], tri[:, [0, 1]]]
        )
        enc_dir = directed[:, 0] * nv + directed[:, 1]
        order = np.argsort(enc_dir, kind="stable")
        enc_be = be[:, 0] * nv + be[:, 1]
        pos = np.searchsorted(enc_dir, enc_be, sorter=order)
        flat = order[pos]
        if not np.array_equal(enc_dir[flat], enc_be):
            raise GeometryError("boundary edge without an owner triangle")
        self.owner = (flat % tri.shape[0]).astype(np.int64)

        # local vertex indices of the edge endpoints inside the owner
        own_tri = tri[self.owner]
        self.loc_a = np.argmax(own_tri == be[:, 0:1], axis=1)
        self.loc_b = np.argmax(own_tri == be[:, 1:2], axis=1)

        pa = mesh.vertices[be[:, 0]]
        pb = mesh.vertices[be[:, 1]]
        d = pb - pa
        self.length = np.hypot(d[:, 0], d[:, 1])
        t_hat = d / self.length[:, None]
        # fluid lies left of the edge: outward (from the fluid) is the right
        # normal, the wall normal pointing into the fluid is the left one
        self.normal_out = np.column_stack([t_hat[:, 1], -t_hat[:, 0]])

        s = _EDGE_S
        bary = np.zeros((nbe, s.size, 3))
        rows = np.arange(nbe)
        for q, sq in enumerate(s):
            bary[rows, q, self.loc_a] = 1.0 - sq
            bary[rows, q, self.loc_b] = sq
        self.bary = bary
        self.p2_vals = p2_values(bary)              # (nbe, nq, 6)
        gref = p2_ref_grads(bary)                   # (nbe, nq, 6, 2)
        self.p2_grads = np.einsum(
            "bqim,bma->bqia", gref, space.Jinv[self.owner]
        )
        self.w = _EDGE_W

    def select(self, marker):
        return np.flatnonzero(self.space.mesh.boundary_markers == marker)

    def pressure_boundary_blocks(self):
        """Matrices B_a with B_a[i, j] = surface integral psi_i phi_j n_a
        over the whole boundary; used by the tentative-velocity step."""
        sp_ = self.space
        elem = np.einsum(
            "q,b,bqi,bqj->bij", self.w, self.length, self.p2_vals, self.bary
        )
        tri = sp_.mesh.triangles[self.owner]
        dofs = sp_.cell_dofs[self.owner]
        rows = np.broadcast_to(dofs[:, :, None], elem.shape)
        cols = np.broadcast_to(tri[:, None, :], elem.shape)
        out = []
        for a in range(2):
            vals = elem * self.normal_out[:, None, None, a]
            out.append(
                _scatter(rows, cols, vals, (sp_.n_scalar, sp_.n_pressure))
            )
        return out

    def transpose_grad_boundary_blocks(self):
        """Blocks T[a][b] with T[i, j] = surface integral psi_i n_b
        (d psi_j / d x_a); the traction term n . (grad u)^T."""
        sp_ = self.space
        dofs = sp_.cell_dofs[self.owner]
        blocks = [[None, None], [None, None]]
        for a in range(2):
            for b in range(2):
                elem = np.einsum(
                    "q,b,bqi,bqj->bij",
                    self.w,
                    self.length * self.normal_out[:, b],
                    self.p2_vals,
                    self.p2_grads[:, :, :, a],
                )
                rows = np.broadcast_to(dofs[:, :, None], elem.shape)
                cols = np.broadcast_to(dofs[:, None, :], elem.shape)
                blocks[a][b] = _scatter(
                    rows, cols, elem, (sp_.n_scalar, sp_.n_scalar)
                )
        return blocks


class _PointLocator:
    """Uniform-bin point location with barycentric output."""

    def __init__(self, mesh: TriMesh, bins_per_axis=None):
        self.mesh = mesh
        v = mesh.vertices
        self.lo = v.min(axis=0)
        hi = v.max(axis=0)
        span = np.maximum(hi - self.lo, 1e-300)
        nt = mesh.n_triangles
        if bins_per_axis is None:
            bins_per_axis = max(1, int(np.sqrt(nt / 2.0)))
        self.nb = bins_per_axis
        self.cell = span / self.nb

        p = v[mesh.triangles]
        tlo = ((p.min(axis=1) - self.lo) / self.cell).astype(int)
        thi = ((p.max(axis=1) - self.lo) / self.cell).astype(int)
        tlo = np.clip(tlo, 0, self.nb - 1)
        thi = np.clip(thi, 0, self.nb - 1)
        buckets = {}
        for t in range(nt):
            for i in range(tlo[t, 0], thi[t, 0] + 1):
                for j in range(tlo[t, 1], thi[t, 1] + 1):
                    buckets.setdefault((i, j), []).append(t)
        self.buckets = {k: np.array(ts, dtype=np.int64) for k, ts in buckets.items()}

        tri = mesh.triangles
        p0 = v[tri[:, 0]]
        d1 = v[tri[:, 1]] - p0
        d2 = v[tri[:, 2]] - p0
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        self.p0 = p0
        self.inv = np.empty((nt, 2, 2))
        self.inv[:, 0, 0] = d2[:, 1] / det
        self.inv[:, 0, 1] = -d2[:, 0] / det
        self.inv[:, 1, 0] = -d1[:, 1] / det
        self.inv[:, 1, 1] = d1[:, 0] / det

    def locate(self, x, y, tol=1e-10, on_miss="raise"):
        """Triangle index and barycentric coords for each query point.

        on_miss: 'raise' (default) or 'ignore', which leaves tri_idx = -1
        and zero barycentrics for points outside the mesh.
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        n = x.size
        tri_idx = np.full(n, -1, dtype=np.int64)
        bary = np.zeros((n, 3))
        bi = np.clip(((x - self.lo[0]) / self.cell[0]).astype(int), 0, self.nb - 1)
        bj = np.clip(((y - self.lo[1]) / self.cell[1]).astype(int), 0, self.nb - 1)
        for p in range(n):
            cand = self.buckets.get((int(bi[p]), int(bj[p])))
            if cand is None:
                cand = np.empty(0, dtype=np.int64)
            hit = self._first_hit(cand, x[p], y[p], tol)
            if hit < 0:
                # fall back to neighbouring bins before giving up
                neigh = []
                for di in (-1, 0, 1):
                    for dj in (-1, 0, 1):
                        key = (int(bi[p]) + di, int(bj[p]) + dj)
                        if key in self.buckets:
                            neigh.append(self.buckets[key])
                if neigh:
                    hit = self._first_hit(np.concatenate(neigh), x[p], y[p], tol)
            if hit < 0:
                if on_miss == "ignore":
                    continue
                raise OutOfDomainError(
                    f"point ({x[p]:.6g}, {y[p]:.6g}) is outside the mesh"
                )
            tri_idx[p] = hit
            dx = x[p] - self.p0[hit, 0]
            dy = y[p] - self.p0[hit, 1]
            xi = self.inv[hit, 0, 0] * dx + self.inv[hit, 0, 1] * dy
            eta = self.inv[hit, 1, 0] * dx + self.inv[hit, 1, 1] * dy
            bary[p] = (1.0 - xi - eta, xi, eta)
        return tri_idx, bary

    def _first_hit(self, cand, xp, yp, tol):
        if cand.size == 0:
            return -1
        dx = xp - self.p0[cand, 0]
        dy = yp - self.p0[cand, 1]
        xi = self.inv[cand, 0, 0] * dx + self.inv[cand, 0, 1] * dy
        eta = self.inv[cand, 1, 0] * dx + self.inv[cand, 1, 1] * dy
        ok = (xi >= -tol) & (eta >= -tol) & (xi + eta <= 1.0 + tol)
        hits = np.flatnonzero(ok)
        if hits.size == 0:
            return -1
        # deterministic choice: smallest triangle index
        return int(cand[hits].min())
