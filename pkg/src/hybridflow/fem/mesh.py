"""Triangle meshes for the near-wall Eulerian solver.

A mesh is a flat container: vertex coordinates, counter-clockwise triangles,
and marked boundary edges.  Boundary edges are directed so that the fluid
lies on their left; the outer boundary therefore runs counter-clockwise and
wall boundaries of holes run clockwise.  Marker 1 is a solid wall, marker 2
the outer coupling boundary.

The on-disk format is plain text: vertex count followed by coordinates,
triangle count followed by 0-based index triples, boundary edge count
followed by (v0, v1, marker) rows.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ConfigurationError, GeometryError

WALL = 1
OUTER = 2


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Conforming triangle mesh with a marked, directed boundary."""

    vertices: np.ndarray          # (nv, 2) float64
    triangles: np.ndarray         # (nt, 3) int64, counter-clockwise
    boundary_edges: np.ndarray    # (nbe, 2) int64, fluid on the left
    boundary_markers: np.ndarray  # (nbe,) int64

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    def triangle_areas(self) -> np.ndarray:
        """Signed areas; positive for counter-clockwise triangles."""
        p0 = self.vertices[self.triangles[:, 0]]
        p1 = self.vertices[self.triangles[:, 1]]
        p2 = self.vertices[self.triangles[:, 2]]
        d1 = p1 - p0
        d2 = p2 - p0
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def cell_diameters(self) -> np.ndarray:
        """Longest edge of each triangle."""
        p = self.vertices[self.triangles]
        d = np.stack(
            [
                np.hypot(*(p[:, 1] - p[:, 2]).T),
                np.hypot(*(p[:, 2] - p[:, 0]).T),
                np.hypot(*(p[:, 0] - p[:, 1]).T),
            ]
        )
        return d.max(axis=0)

    def edges_with_marker(self, marker: int) -> np.ndarray:
        return self.boundary_edges[self.boundary_markers == marker]

    def validate(self) -> None:
        """Raise GeometryError on any structural defect."""
        nv = self.n_vertices
        tri = self.triangles
        if tri.size and (tri.min() < 0 or tri.max() >= nv):
            raise GeometryError("triangle vertex index out of range")
        areas = self.triangle_areas()
        bad = int(np.count_nonzero(areas <= 0.0))
        if bad:
            raise GeometryError(
                f"{bad} triangles are degenerate or clockwise-oriented"
            )

        directed = np.concatenate(
            [tri[:, [1, 2]], tri[:, [2, 0]], tri[:, [0, 1]]]
        )
        enc_dir = directed[:, 0] * nv + directed[:, 1]
        lo = directed.min(axis=1).astype(np.int64)
        hi = directed.max(axis=1).astype(np.int64)
        enc_und = lo * nv + hi
        uniq, counts = np.unique(enc_und, return_counts=True)
        if counts.max(initial=1) > 2:
            raise GeometryError("an edge is shared by more than two triangles")

        be = self.boundary_edges
        if be.shape[0] != self.boundary_markers.shape[0]:
            raise GeometryError("boundary edge / marker count mismatch")
        if be.size and (be.min() < 0 or be.max() >= nv):
            raise GeometryError("boundary edge vertex index out of range")
        if not np.isin(self.boundary_markers, (WALL, OUTER)).all():
            raise GeometryError("boundary markers must be 1 (wall) or 2 (outer)")

        # The mesh-derived boundary (edges owned by one triangle) must match
        # the declared boundary exactly, once each.
        derived = np.sort(uniq[counts == 1])
        blo = be.min(axis=1).astype(np.int64)
        bhi = be.max(axis=1).astype(np.int64)
        declared = np.sort(blo * nv + bhi)
        if declared.shape != derived.shape or not np.array_equal(declared, derived):
            raise GeometryError(
                "declared boundary edges do not match the mesh boundary"
            )
        if np.unique(declared).shape != declared.shape:
            raise GeometryError("a boundary edge is declared more than once")

        # Fluid on the left: every declared edge must appear as a directed
        # edge of its (counter-clockwise) owner triangle.
        enc_be = be[:, 0] * nv + be[:, 1]
        if not np.isin(enc_be, enc_dir).all():
            raise GeometryError(
                "boundary edge directed against its owner triangle"
            )


def read_mesh(path) -> TriMesh:
    """Read the plain-text triangle format; validates before returning."""
    path = Path(path)
    try:
        raw = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read mesh file {path}: {exc}") from exc
    tokens = []
    for line in raw.splitlines():
        body = line.split("#", 1)[0]
        tokens.extend(body.split())
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(tokens):
            raise ConfigurationError(f"mesh file {path} is truncated")
        out = tokens[pos:pos + n]
        pos += n
        return out

    try:
        nv = int(take(1)[0])
        verts = np.array(take(2 * nv), dtype=float).reshape(nv, 2)
        nt = int(take(1)[0])
        tris = np.array(take(3 * nt), dtype=np.int64).reshape(nt, 3)
        nbe = int(take(1)[0])
        rows = np.array(take(3 * nbe), dtype=np.int64).reshape(nbe, 3)
    except ValueError as exc:
        raise ConfigurationError(f"malformed mesh file {path}: {exc}") from exc
    if pos != len(tokens):
        raise ConfigurationError(f"trailing data in mesh file {path}")
    mesh = TriMesh(verts, tris, rows[:, :2].copy(), rows[:, 2].copy())
    mesh.validate()
    return mesh


def write_mesh(mesh: TriMesh, path) -> None:
    """Write the plain-text triangle format with full double precision."""
    path = Path(path)
    lines = [str(mesh.n_vertices)]
    lines.extend("%.17g %.17g" % (x, y) for x, y in mesh.vertices)
    lines.append(str(mesh.n_triangles))
    lines.extend("%d %d %d" % tuple(t) for t in mesh.triangles)
    lines.append(str(mesh.boundary_edges.shape[0]))
    lines.extend(
        "%d %d %d" % (a, b, m)
        for (a, b), m in zip(mesh.boundary_edges, mesh.boundary_markers)
    )
    path.write_text("\n".join(lines) + "\n")


def graded_points(a: float, b: float, n: int, ratio: float = 1.0) -> np.ndarray:
    """n+1 points from a to b whose last interval is `ratio` times the first.

    ratio 1 reduces to linspace; ratio > 1 clusters points near `a`.
    """
    if n < 1:
        raise ValueError("need at least one interval")
    if ratio <= 0.0:
        raise ValueError("ratio must be positive")
    if abs(ratio - 1.0) < 1e-12:
        return np.linspace(a, b, n + 1)
    q = ratio ** (1.0 / (n - 1)) if n > 1 else 1.0
    steps = q ** np.arange(n)
    s = np.concatenate([[0.0], np.cumsum(steps)])
    s /= s[-1]
    pts = a + (b - a) * s
    pts[0] = a
    pts[-1] = b
    return pts


def _alternating_quads(nx: int, ny: int, vidx) -> np.ndarray:
    """Split an nx-by-ny logical quad grid into triangles.

    vidx(i, j) maps logical coordinates to vertex ids (arrays accepted).
    The diagonal alternates with (i+j) parity so no direction is favoured.
    """
    i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    i = i.ravel()
    j = j.ravel()
    a = vidx(i, j)
    b = vidx(i + 1, j)
    c = vidx(i + 1, j + 1)
    d = vidx(i, j + 1)
    even = (i + j) % 2 == 0
    t1 = np.where(even[:, None], np.stack([a, b, c], 1), np.stack([a, b, d], 1))
    t2 = np.where(even[:, None], np.stack([a, c, d], 1), np.stack([b, c, d], 1))
    return np.concatenate([t1, t2]).astype(np.int64)


def rect_mesh(xs, ys, markers=(WALL, WALL, WALL, WALL)) -> TriMesh:
    """Structured rectangle mesh on the grid lines xs x ys.

    markers are per side in the order (bottom, right, top, left).  Boundary
    edges run counter-clockwise around the rectangle (fluid inside).
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    nx = xs.size - 1
    ny = ys.size - 1
    if nx < 1 or ny < 1:
        raise GeometryError("rectangle mesh needs at least one cell per side")
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    verts = np.column_stack([X.ravel(), Y.ravel()])

    def vidx(i, j):
        return j * (nx + 1) + i

    tris = _alternating_quads(nx, ny, vidx)

    i = np.arange(nx)
    j = np.arange(ny)
    bottom = np.stack([vidx(i, 0), vidx(i + 1, 0)], 1)
    right = np.stack([vidx(nx, j), vidx(nx, j + 1)], 1)
    top = np.stack([vidx(i + 1, ny), vidx(i, ny)], 1)[::-1]
    left = np.stack([vidx(0, j + 1), vidx(0, j)], 1)[::-1]
    edges = np.concatenate([bottom, right, top, left]).astype(np.int64)
    marks = np.concatenate(
        [
            np.full(nx, markers[0]),
            np.full(ny, markers[1]),
            np.full(nx, markers[2]),
            np.full(ny, markers[3]),
        ]
    ).astype(np.int64)
    mesh = TriMesh(verts, tris, edges, marks)
    mesh.validate()
    return mesh


def _ring_mesh(verts: np.ndarray, n_theta: int, n_r: int) -> TriMesh:
    """Assemble a closed ring of quads (theta wraps) into a TriMesh.

    verts holds n_r+1 rings of n_theta vertices, inner ring first.  The inner
    ring is marked wall (clockwise edges), the outer ring outer coupling
    boundary (counter-clockwise edges).
    """

    def vidx(i, j):
        # logical i = radial index, j = angular index (wraps); this order
        # keeps the quads counter-clockwise
        return i * n_theta + (np.asarray(j) % n_theta)

    tris = _alternating_quads(n_r, n_theta, vidx)

    k = np.arange(n_theta)
    inner = np.stack([vidx(0, k + 1), vidx(0, k)], 1)
    outer = np.stack([vidx(n_r, k), vidx(n_r, k + 1)], 1)
    edges = np.concatenate([inner, outer]).astype(np.int64)
    marks = np.concatenate(
        [np.full(n_theta, WALL), np.full(n_theta, OUTER)]
    ).astype(np.int64)
    mesh = TriMesh(verts, tris, edges, marks)
    mesh.validate()
    return mesh


def annulus_mesh(
    r_in: float,
    r_out: float,
    n_theta: int,
    n_r: int,
    grading: float = 1.0,
    center=(0.0, 0.0),
    radii=None,
) -> TriMesh:
    """Annular mesh between two circles; `grading` is the outer/inner radial
    cell-size ratio (geometric spacing, > 1 clusters cells at the wall).
    An explicit increasing `radii` array overrides the graded spacing."""
    if not (0.0 < r_in < r_out):
        raise GeometryError("annulus radii must satisfy 0 < r_in < r_out")
    if n_theta < 3 or n_r < 1:
        raise GeometryError("annulus needs n_theta >= 3 and n_r >= 1")
    if radii is None:
        radii = graded_points(r_in, r_out, n_r, grading)
    else:
        radii = np.asarray(radii, dtype=float)
        if radii.size != n_r + 1 or np.any(np.diff(radii) <= 0):
            raise GeometryError("radii must be increasing with n_r + 1 entries")
    theta = 2.0 * np.pi * np.arange(n_theta) / n_theta
    xs = np.cos(theta)
    ys = np.sin(theta)
    verts = np.column_stack(
        [
            (radii[:, None] * xs[None, :]).ravel() + center[0],
            (radii[:, None] * ys[None, :]).ravel() + center[1],
        ]
    )
    return _ring_mesh(verts, n_theta, n_r)


def ellipse_annulus_mesh(
    a: float,
    b: float,
    angle: float,
    r_out: float,
    n_theta: int,
    n_r: int,
    grading: float = 1.0,
    center=(0.0, 0.0),
) -> TriMesh:
    """Mesh between a rotated ellipse (semi-axes a, b, rotation `angle`) and
    a circle of radius r_out, blended along rays from the common center."""
    if not (0.0 < b <= a):
        raise GeometryError("ellipse needs 0 < b <= a")
    theta = 2.0 * np.pi * np.arange(n_theta) / n_theta
    ca, sa = np.cos(angle), np.sin(angle)
    ex = a * np.cos(theta)
    ey = b * np.sin(theta)
    px = ca * ex - sa * ey
    py = sa * ex + ca * ey
    rho0 = np.hypot(px, py)
    if rho0.max() >= r_out:
        raise GeometryError("outer circle must enclose the ellipse")
    # unit rays through the ellipse points; radial positions interpolate
    # between the surface and the circle with the requested grading
    ux = px / rho0
    uy = py / rho0
    s = graded_points(0.0, 1.0, n_r, grading)
    rho = rho0[None, :] + s[:, None] * (r_out - rho0[None, :])
    verts = np.column_stack(
        [
            (rho * ux[None, :]).ravel() + center[0],
            (rho * uy[None, :]).ravel() + center[1],
        ]
    )
    return _ring_mesh(verts, n_theta, n_r)


def boundary_loops(mesh: TriMesh, marker=None) -> list[np.ndarray]:
    """Chain boundary edges into ordered vertex paths.

    Closed loops are returned without repeating the first vertex; open
    chains (possible when filtering by marker) include both endpoints.
    Traversal follows the stored edge direction, so loops inherit the
    fluid-on-the-left orientation.
    """
    edges = mesh.boundary_edges
    if marker is not None:
        edges = mesh.edges_with_marker(marker)
    succ = {int(a): int(b) for a, b in edges}
    if len(succ) != edges.shape[0]:
        raise GeometryError("boundary is not a simple curve")
    heads = set(succ) - set(succ.values())
    loops = []
    visited = set()

    def walk(start, closed):
        path = [start]
        v = succ[start]
        while v in succ and v != start:
            path.append(v)
            v = succ[v]
        if not closed:
            path.append(v)
        visited.update(path[:-1] if not closed else path)
        return np.array(path, dtype=np.int64)

    for start in sorted(heads):
        loops.append(walk(start, closed=False))
    remaining = sorted(set(succ) - visited)
    while remaining:
        loops.append(walk(remaining[0], closed=True))
        remaining = sorted(set(succ) - visited)
    return loops


def mesh_info(mesh: TriMesh) -> dict:
    """Summary statistics used by the command-line `mesh-info` view."""
    areas = mesh.triangle_areas()
    diam = mesh.cell_diameters()
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    return {
        "n_vertices": mesh.n_vertices,
        "n_triangles": mesh.n_triangles,
        "n_boundary_edges": int(mesh.boundary_edges.shape[0]),
        "n_wall_edges": int(np.count_nonzero(mesh.boundary_markers == WALL)),
        "n_outer_edges": int(np.count_nonzero(mesh.boundary_markers == OUTER)),
        "area": float(areas.sum()),
        "h_min": float(diam.min()),
        "h_max": float(diam.max()),
        "bbox": (float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1])),
    }
