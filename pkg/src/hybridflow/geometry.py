"""Structured node lattices and polygonal regions.

The remeshing lattice is anchored at the global origin: node coordinates are
integer multiples of the spacing h, so lattices built over different bounding
boxes coincide wherever they overlap.  Polygonal regions (possibly with holes)
classify points by even-odd ray casting; points on a loop count as inside it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import GeometryError, OutOfDomainError

FloatArray = np.ndarray


def _snap_index(x: float, h: float, up: bool) -> int:
    """Integer lattice index bounding x/h from below (up=False) or above."""
    s = x / h
    k = math.ceil(s - 1e-9) if up else math.floor(s + 1e-9)
    # Guard against a stray ulp pushing the hull off the box.
    if up and k * h < x - 1e-9 * h:
        k += 1
    if not up and k * h > x + 1e-9 * h:
        k -= 1
    return k


@dataclass(frozen=True)
class StructuredGrid:
    """Uniform node lattice anchored at the global origin.

    Nodes sit at ((ix0 + i) * h, (iy0 + j) * h) for 0-based (i, j), so any two
    grids with the same spacing produce bit-identical coordinates where they
    overlap.
    """

    ix0: int
    iy0: int
    h: float
    nx: int
    ny: int

    @property
    def x0(self) -> float:
        return self.ix0 * self.h

    @property
    def y0(self) -> float:
        return self.iy0 * self.h

    @property
    def xs(self) -> FloatArray:
        return (self.ix0 + np.arange(self.nx)) * self.h

    @property
    def ys(self) -> FloatArray:
        return (self.iy0 + np.arange(self.ny)) * self.h

    @property
    def hull(self) -> tuple[float, float, float, float]:
        return (self.x0, self.x0 + self.h * (self.nx - 1),
                self.y0, self.y0 + self.h * (self.ny - 1))

    @property
    def n_nodes(self) -> int:
        return self.nx * self.ny

    def node_coords(self) -> tuple[FloatArray, FloatArray]:
        """Flattened node coordinates, x fastest (index = j*nx + i)."""
        X, Y = np.meshgrid(self.xs, self.ys, indexing="xy")
        return X.ravel(), Y.ravel()

    def expanded(self, pad_cells: int) -> "StructuredGrid":
        return StructuredGrid(self.ix0 - pad_cells, self.iy0 - pad_cells,
                              self.h,
                              self.nx + 2 * pad_cells, self.ny + 2 * pad_cells)


def build_grid(bbox: tuple[float, float, float, float], h: float) -> StructuredGrid:
    """Smallest origin-anchored lattice whose hull contains the box.

    bbox is (xmin, xmax, ymin, ymax).  Node coordinates are integer multiples
    of h, so the hull may overhang the box by up to one spacing per side.
    """
    xmin, xmax, ymin, ymax = bbox
    if not (xmax >= xmin and ymax >= ymin) or h <= 0:
        raise GeometryError(f"bad bbox/spacing: {bbox}, h={h}")
    i0 = _snap_index(xmin, h, up=False)
    i1 = _snap_index(xmax, h, up=True)
    j0 = _snap_index(ymin, h, up=False)
    j1 = _snap_index(ymax, h, up=True)
    return StructuredGrid(i0, j0, h, i1 - i0 + 1, j1 - j0 + 1)


@dataclass(frozen=True)
class CellLocation:
    """Cell indices and local offsets for points inside a grid hull.

    dx, dy are measured from the cell's lower-left node and lie in [0, h].
    """

    i: np.ndarray
    j: np.ndarray
    dx: FloatArray
    dy: FloatArray


def locate(grid: StructuredGrid, x, y) -> CellLocation:
    """Map points to containing cells.  Raises OutOfDomainError off the hull."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    tol = 1e-9 * grid.h
    x0, x1, y0, y1 = grid.hull
    bad = (x < x0 - tol) | (x > x1 + tol) | (y < y0 - tol) | (y > y1 + tol)
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0])
        raise OutOfDomainError(
            f"point ({x.flat[k]:g}, {y.flat[k]:g}) outside grid hull "
            f"[{x0:g}, {x1:g}] x [{y0:g}, {y1:g}]")
    i = np.clip(np.floor((x - grid.x0) / grid.h).astype(np.int64), 0, grid.nx - 2)
    j = np.clip(np.floor((y - grid.y0) / grid.h).astype(np.int64), 0, grid.ny - 2)
    dx = np.clip(x - (grid.x0 + i * grid.h), 0.0, grid.h)
    dy = np.clip(y - (grid.y0 + j * grid.h), 0.0, grid.h)
    return CellLocation(i, j, dx, dy)


def bilinear_weights(dx, dy, h: float) -> FloatArray:
    """Area weights of a cell's four nodes, ordered ll, lr, ur, ul.

    Offsets are from the lower-left node.  Weights are >= 0 on [0, h]^2 and
    sum to 1 identically.
    """
    dx = np.asarray(dx, dtype=float)
    dy = np.asarray(dy, dtype=float)
    h2 = h * h
    w_ll = (dx - h) * (dy - h) / h2
    w_lr = -dx * (dy - h) / h2
    w_ur = dx * dy / h2
    w_ul = -dy * (dx - h) / h2
    return np.stack([w_ll, w_lr, w_ur, w_ul], axis=-1)


@dataclass
class NodalField:
    """Scalar values on the nodes of a structured grid, shape (ny, nx)."""

    grid: StructuredGrid
    values: FloatArray

    def __post_init__(self):
        expect = (self.grid.ny, self.grid.nx)
        if self.values.shape != expect:
            raise GeometryError(
                f"field shape {self.values.shape} != grid {expect}")

    def sample(self, x, y) -> FloatArray:
        """Bilinear interpolation at points inside the hull."""
        loc = locate(self.grid, x, y)
        w = bilinear_weights(loc.dx, loc.dy, self.grid.h)
        v = self.values
        return (w[..., 0] * v[loc.j, loc.i] + w[..., 1] * v[loc.j, loc.i + 1]
                + w[..., 2] * v[loc.j + 1, loc.i + 1]
                + w[..., 3] * v[loc.j + 1, loc.i])


def _loop_edges(loop: FloatArray) -> tuple[FloatArray, FloatArray]:
    return loop, np.roll(loop, -1, axis=0)


def _inside_single_loop(loop: FloatArray, x: FloatArray, y: FloatArray,
                        tol: float) -> np.ndarray:
    """Even-odd test against one closed loop; on-edge (within tol) is inside."""
    a, b = _loop_edges(loop)
    ax, ay = a[:, 0], a[:, 1]
    bx, by = b[:, 0], b[:, 1]
    inside = np.zeros(x.shape, dtype=bool)
    near = np.zeros(x.shape, dtype=bool)
    for k in range(len(loop)):
        x1, y1, x2, y2 = ax[k], ay[k], bx[k], by[k]
        crosses = (y1 > y) != (y2 > y)
        if np.any(crosses):
            xc = x1 + (y[crosses] - y1) * (x2 - x1) / (y2 - y1)
            hit = np.zeros(x.shape, dtype=bool)
            hit[crosses] = x[crosses] <= xc
            inside ^= hit
        # Distance to the segment, for the on-edge tolerance.
        ex, ey = x2 - x1, y2 - y1
        L2 = ex * ex + ey * ey
        if L2 == 0.0:
            continue
        t = np.clip(((x - x1) * ex + (y - y1) * ey) / L2, 0.0, 1.0)
        d2 = (x - (x1 + t * ex)) ** 2 + (y - (y1 + t * ey)) ** 2
        near |= d2 <= tol * tol
    return inside | near


class PolyRegion:
    """Region bounded by one or more closed polygonal loops (even-odd rule).

    One loop is a simply connected region; a second loop inside the first
    carves a hole, and so on.  Loops are (N, 2) vertex arrays without a
    repeated closing vertex.
    """

    def __init__(self, loops):
        self.loops = [np.atleast_2d(np.asarray(lp, dtype=float)) for lp in loops]
        for lp in self.loops:
            if lp.shape[0] < 3 or lp.shape[1] != 2:
                raise GeometryError(f"loop must be (N>=3, 2), got {lp.shape}")
        pts = np.vstack(self.loops)
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        self.bbox = (lo[0], hi[0], lo[1], hi[1])
        self.diameter = float(np.hypot(*(hi - lo)))

    def contains(self, x, y) -> np.ndarray:
        """Even-odd membership; points within 1e-12*diameter of a loop edge
        count as inside that loop."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        scalar = x.ndim == 0
        x, y = np.atleast_1d(x), np.atleast_1d(y)
        tol = 1e-12 * self.diameter
        out = np.zeros(x.shape, dtype=bool)
        # Cheap bbox rejection before the per-edge sweep.
        x0, x1, y0, y1 = self.bbox
        cand = (x >= x0 - tol) & (x <= x1 + tol) & (y >= y0 - tol) & (y <= y1 + tol)
        if np.any(cand):
            xs, ys = x[cand], y[cand]
            res = np.zeros(xs.shape, dtype=bool)
            for lp in self.loops:
                res ^= _inside_single_loop(lp, xs, ys, tol)
            out[cand] = res
        return bool(out[0]) if scalar else out

    def area(self) -> float:
        """Even-odd area: outer loops add, holes subtract."""
        total = 0.0
        for lp in self.loops:
            a, b = _loop_edges(lp)
            total += abs(0.5 * np.sum(a[:, 0] * b[:, 1] - b[:, 0] * a[:, 1]))
        outer = max(abs(_signed_area(lp)) for lp in self.loops)
        # Subtract every loop smaller than the largest one (holes).
        return 2 * outer - total if len(self.loops) > 1 else total

    def raster(self, grid: StructuredGrid) -> np.ndarray:
        """Membership of every grid node, shape (ny, nx).

        Scanline version of contains(): exact same even-odd convention, but
        O(edges) per node row instead of per node.
        """
        mask = np.zeros((grid.ny, grid.nx), dtype=bool)
        xs = grid.xs
        tol = 1e-12 * self.diameter
        for jrow, yv in enumerate(grid.ys):
            row = np.zeros(grid.nx, dtype=bool)
            for lp in self.loops:
                a, b = _loop_edges(lp)
                sub = np.zeros(grid.nx, dtype=bool)
                for (x1, y1), (x2, y2) in zip(a, b):
                    if (y1 > yv) != (y2 > yv):
                        xc = x1 + (yv - y1) * (x2 - x1) / (y2 - y1)
                        sub ^= xs <= xc
                row ^= sub
            mask[jrow] = row
        if tol > 0.0:
            # Nodes can sit exactly on loop edges (rectangular regions on the
            # lattice); resolve those the same way contains() does.
            edge = self._near_edge_nodes(grid, tol)
            if edge is not None:
                jj, ii = edge
                mask[jj, ii] = self.contains(grid.xs[ii], grid.ys[jj])
        return mask

    def _near_edge_nodes(self, grid, tol):
        """Indices of grid nodes within tol of any loop edge, or None."""
        hits_i, hits_j = [], []
        for lp in self.loops:
            a, b = _loop_edges(lp)
            for (x1, y1), (x2, y2) in zip(a, b):
                lo_x, hi_x = min(x1, x2) - tol, max(x1, x2) + tol
                lo_y, hi_y = min(y1, y2) - tol, max(y1, y2) + tol
                i0 = max(0, math.ceil((lo_x - grid.x0) / grid.h))
                i1 = min(grid.nx - 1, math.floor((hi_x - grid.x0) / grid.h))
                j0 = max(0, math.ceil((lo_y - grid.y0) / grid.h))
                j1 = min(grid.ny - 1, math.floor((hi_y - grid.y0) / grid.h))
                if i1 < i0 or j1 < j0:
                    continue
                ii, jj = np.meshgrid(np.arange(i0, i1 + 1),
                                     np.arange(j0, j1 + 1), indexing="xy")
                ii, jj = ii.ravel(), jj.ravel()
                px, py = grid.xs[ii], grid.ys[jj]
                ex, ey = x2 - x1, y2 - y1
                L2 = ex * ex + ey * ey
                if L2 == 0.0:
                    continue
                t = np.clip(((px - x1) * ex + (py - y1) * ey) / L2, 0.0, 1.0)
                d2 = (px - (x1 + t * ex)) ** 2 + (py - (y1 + t * ey)) ** 2
                sel = d2 <= tol * tol
                hits_i.append(ii[sel])
                hits_j.append(jj[sel])
        if not hits_i:
            return None
        ii = np.concatenate(hits_i)
        jj = np.concatenate(hits_j)
        if ii.size == 0:
            return None
        return jj, ii


def _signed_area(loop: FloatArray) -> float:
    a, b = _loop_edges(loop)
    return 0.5 * float(np.sum(a[:, 0] * b[:, 1] - b[:, 0] * a[:, 1]))


def ensure_ccw(loop: FloatArray) -> FloatArray:
    """Return the loop with counterclockwise orientation."""
    lp = np.asarray(loop, dtype=float)
    return lp if _signed_area(lp) >= 0.0 else lp[::-1].copy()


def _cross2(a, b) -> float:
    return a[0] * b[1] - a[1] * b[0]


def _segments_intersect(p1, p2, p3, p4) -> bool:
    d1 = _cross2(p4 - p3, p1 - p3)
    d2 = _cross2(p4 - p3, p2 - p3)
    d3 = _cross2(p2 - p1, p3 - p1)
    d4 = _cross2(p2 - p1, p4 - p1)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0))


def offset_boundary(loop: FloatArray, distance: float, side: str = "outward") -> FloatArray:
    """Offset a closed loop along averaged vertex normals.

    side is 'outward' or 'inward' relative to the loop interior.  Sharp
    corners get mitred; the mitre length is capped at 4*distance.  Vertices
    whose images fold past a mitred corner (offsets spanning several vertex
    spacings) are dropped.  Raises GeometryError if the offset loop
    collapses or self-intersects (distance too large for the geometry).
    """
    if side not in ("outward", "inward"):
        raise GeometryError(f"side must be 'outward' or 'inward', not {side!r}")
    lp = ensure_ccw(loop)
    a, b = _loop_edges(lp)
    t = b - a
    L = np.hypot(t[:, 0], t[:, 1])
    if np.any(L == 0.0):
        raise GeometryError("loop has a zero-length edge")
    # ccw loop: interior on the left, so the outward edge normal is (ty, -tx).
    n_edge = np.stack([t[:, 1] / L, -t[:, 0] / L], axis=1)
    n_prev = np.roll(n_edge, 1, axis=0)
    m = n_prev + n_edge
    mlen = np.hypot(m[:, 0], m[:, 1])
    if np.any(mlen < 1e-12):
        raise GeometryError("loop has a cusp (adjacent normals cancel)")
    cos_half = mlen / 2.0
    scale = distance / np.maximum(cos_half, 0.25)
    sign = 1.0 if side == "outward" else -1.0
    new = lp + sign * scale[:, None] * (m / mlen[:, None])
    # Offsetting further than one vertex spacing folds the images near a
    # corner: the mitred corner image overtakes its collinear neighbours,
    # whose images still sit on the correct offset line, just out of order.
    # Dropping the straighter endpoint of every reversed edge (keeping the
    # actual corner) restores the order; a loop that keeps folding until
    # fewer than three vertices remain has genuinely collapsed.
    idx = np.arange(len(lp))
    while True:
        t_new = np.roll(new[idx], -1, axis=0) - new[idx]
        t_old = np.roll(lp[idx], -1, axis=0) - lp[idx]
        lo = np.hypot(t_old[:, 0], t_old[:, 1])
        dots = np.sum(t_new * t_old, axis=1)
        rev = np.nonzero(dots < -1e-10 * lo * lo.max())[0]
        if rev.size == 0:
            break
        drop = set()
        for e in rev:
            i, j = idx[e], idx[(e + 1) % len(idx)]
            drop.add(i if cos_half[i] >= cos_half[j] else j)
        idx = np.array([v for v in idx if v not in drop])
        if len(idx) < 3:
            raise GeometryError(f"offset by {distance:g} collapses the loop")
    new = new[idx]
    if _signed_area(new) <= 0.0:
        raise GeometryError(f"offset by {distance:g} collapses the loop")
    tol = 1e-9 * abs(distance)
    if tol > 0.0:
        kept = [new[0]]
        for p in new[1:]:
            if math.hypot(p[0] - kept[-1][0], p[1] - kept[-1][1]) > tol:
                kept.append(p)
        while len(kept) > 1 and math.hypot(kept[-1][0] - kept[0][0],
                                           kept[-1][1] - kept[0][1]) <= tol:
            kept.pop()
        new = np.asarray(kept)
        if len(new) < 3:
            raise GeometryError(f"offset by {distance:g} collapses the loop")
    edges_a, edges_b = _loop_edges(new)
    n = len(new)
    for i in range(n):
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue
            if _segments_intersect(edges_a[i], edges_b[i], edges_a[j], edges_b[j]):
                raise GeometryError(
                    f"offset by {distance:g} self-intersects (edges {i}, {j})")
    return new


def circle_loop(cx: float, cy: float, r: float, n: int) -> FloatArray:
    """Regular n-gon inscribed in the circle, counterclockwise."""
    th = 2.0 * np.pi * np.arange(n) / n
    return np.stack([cx + r * np.cos(th), cy + r * np.sin(th)], axis=1)


def rect_loop(xmin: float, xmax: float, ymin: float, ymax: float) -> FloatArray:
    """Axis-aligned rectangle, counterclockwise."""
    return np.array([[xmin, ymin], [xmax, ymin], [xmax, ymax], [xmin, ymax]])


def ellipse_loop(cx: float, cy: float, a: float, b: float, angle: float,
                 n: int) -> FloatArray:
    """Ellipse with semi-axes a, b rotated by angle (radians), counterclockwise."""
    th = 2.0 * np.pi * np.arange(n) / n
    x = a * np.cos(th)
    y = b * np.sin(th)
    c, s = math.cos(angle), math.sin(angle)
    return np.stack([cx + c * x - s * y, cy + s * x + c * y], axis=1)


def clip_polygon(poly: FloatArray, clipper: FloatArray) -> FloatArray:
    """Sutherland-Hodgman clip of poly against a convex ccw clipper.

    Returns the clipped polygon (possibly empty, shape (0, 2)).
    """
    out = np.asarray(poly, dtype=float)
    ca, cb = _loop_edges(ensure_ccw(clipper))
    for (x1, y1), (x2, y2) in zip(ca, cb):
        if len(out) == 0:
            break
        ex, ey = x2 - x1, y2 - y1
        d = ex * (out[:, 1] - y1) - ey * (out[:, 0] - x1)
        keep = d >= -1e-14 * (abs(ex) + abs(ey))
        nxt = []
        n = len(out)
        for i in range(n):
            j = (i + 1) % n
            if keep[i]:
                nxt.append(out[i])
            if keep[i] != keep[j]:
                t = d[i] / (d[i] - d[j])
                nxt.append(out[i] + t * (out[j] - out[i]))
        out = np.asarray(nxt, dtype=float).reshape(-1, 2)
    return out


def polygon_area(poly: FloatArray) -> float:
    if len(poly) < 3:
        return 0.0
    return abs(_signed_area(np.asarray(poly, dtype=float)))
