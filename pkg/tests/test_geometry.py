import numpy as np
import pytest

from hybridflow.errors import GeometryError, OutOfDomainError
from hybridflow.geometry import (
    NodalField,
    PolyRegion,
    bilinear_weights,
    build_grid,
    circle_loop,
    clip_polygon,
    ensure_ccw,
    locate,
    offset_boundary,
    polygon_area,
    rect_loop,
)


class TestBuildGrid:
    def test_unit_box_half_spacing(self):
        g = build_grid((0.0, 1.0, 0.0, 1.0), 0.5)
        assert (g.nx, g.ny) == (3, 3)
        assert g.hull == (0.0, 1.0, 0.0, 1.0)

    def test_non_dividing_spacing_overhangs(self):
        g = build_grid((0.0, 1.0, 0.0, 1.0), 0.4)
        assert (g.nx, g.ny) == (4, 4)
        x0, x1, y0, y1 = g.hull
        assert x0 == 0.0 and y0 == 0.0
        assert x1 == pytest.approx(1.2, abs=1e-15)
        assert y1 == pytest.approx(1.2, abs=1e-15)

    def test_offset_box(self):
        g = build_grid((-0.25, 0.25, -0.5, 0.5), 5e-3)
        assert (g.nx, g.ny) == (101, 201)
        x0, x1, y0, y1 = g.hull
        assert x0 == pytest.approx(-0.25, abs=1e-12)
        assert y1 == pytest.approx(0.5, abs=1e-12)

    def test_origin_anchor_shared_between_grids(self):
        h = 0.05
        g1 = build_grid((-0.312, 0.401, -0.2, 0.33), h)
        g2 = build_grid((0.1, 0.9, 0.1, 0.9), h)
        # Overlapping nodes must coincide bit-exactly (both lattices are
        # anchored at the global origin).
        ks = range(max(g1.ix0, g2.ix0), min(g1.ix0 + g1.nx, g2.ix0 + g2.nx))
        assert len(ks) > 0
        for k in ks:
            assert g1.xs[k - g1.ix0] == g2.xs[k - g2.ix0]

    def test_hull_contains_box(self):
        rng = np.random.default_rng(42)
        for _ in range(50):
            lo = rng.uniform(-3, 3, size=2)
            span = rng.uniform(0.1, 4, size=2)
            h = rng.uniform(0.01, 0.5)
            g = build_grid((lo[0], lo[0] + span[0], lo[1], lo[1] + span[1]), h)
            x0, x1, y0, y1 = g.hull
            assert x0 <= lo[0] + 1e-9 * h and x1 >= lo[0] + span[0] - 1e-9 * h
            assert y0 <= lo[1] + 1e-9 * h and y1 >= lo[1] + span[1] - 1e-9 * h

    def test_bad_input(self):
        with pytest.raises(GeometryError):
            build_grid((1.0, 0.0, 0.0, 1.0), 0.5)
        with pytest.raises(GeometryError):
            build_grid((0.0, 1.0, 0.0, 1.0), -0.1)


class TestLocate:
    def test_round_trip(self):
        g = build_grid((-1.0, 1.0, -2.0, 0.5), 0.033)
        rng = np.random.default_rng(7)
        x0, x1, y0, y1 = g.hull
        x = rng.uniform(x0, x1, 500)
        y = rng.uniform(y0, y1, 500)
        loc = locate(g, x, y)
        xr = g.x0 + loc.i * g.h + loc.dx
        yr = g.y0 + loc.j * g.h + loc.dy
        assert np.max(np.abs(xr - x)) <= 1e-12 * g.h
        assert np.max(np.abs(yr - y)) <= 1e-12 * g.h
        assert np.all(loc.dx >= 0) and np.all(loc.dx <= g.h)
        assert np.all(loc.i >= 0) and np.all(loc.i <= g.nx - 2)

    def test_hull_corners_clamp(self):
        g = build_grid((0.0, 1.0, 0.0, 1.0), 0.25)
        loc = locate(g, 1.0, 1.0)
        assert int(loc.i) == g.nx - 2 and int(loc.j) == g.ny - 2
        assert float(loc.dx) == pytest.approx(g.h)

    def test_outside_raises(self):
        g = build_grid((0.0, 1.0, 0.0, 1.0), 0.25)
        with pytest.raises(OutOfDomainError):
            locate(g, 1.5, 0.5)
        with pytest.raises(OutOfDomainError):
            locate(g, np.array([0.5, 0.2]), np.array([0.5, -0.3]))


class TestBilinearWeights:
    def test_partition_of_unity_and_range(self):
        h = 0.07
        rng = np.random.default_rng(3)
        dx = rng.uniform(0, h, 200)
        dy = rng.uniform(0, h, 200)
        w = bilinear_weights(dx, dy, h)
        assert np.allclose(w.sum(axis=-1), 1.0, atol=1e-14)
        assert np.all(w >= -1e-15) and np.all(w <= 1 + 1e-15)

    def test_corners_pick_single_node(self):
        h = 0.5
        assert np.allclose(bilinear_weights(0, 0, h), [1, 0, 0, 0])
        assert np.allclose(bilinear_weights(h, 0, h), [0, 1, 0, 0])
        assert np.allclose(bilinear_weights(h, h, h), [0, 0, 1, 0])
        assert np.allclose(bilinear_weights(0, h, h), [0, 0, 0, 1])

    def test_linear_reproduction(self):
        g = build_grid((0.0, 1.0, 0.0, 1.0), 0.2)
        X, Y = np.meshgrid(g.xs, g.ys, indexing="xy")
        f = NodalField(g, 3.0 * X - 2.0 * Y + 0.5)
        rng = np.random.default_rng(11)
        x = rng.uniform(0, 1, 100)
        y = rng.uniform(0, 1, 100)
        assert np.allclose(f.sample(x, y), 3 * x - 2 * y + 0.5, atol=1e-13)


class TestPolyRegion:
    def test_square_membership(self):
        r = PolyRegion([rect_loop(0, 1, 0, 1)])
        assert r.contains(0.5, 0.5)
        assert not r.contains(1.5, 0.5)
        assert not r.contains(0.5, -0.01)
        # On-edge points count as inside.
        assert r.contains(1.0, 0.5)
        assert r.contains(0.0, 0.0)

    def test_annulus(self):
        outer = circle_loop(0, 0, 1.0, 256)
        inner = circle_loop(0, 0, 0.4, 256)
        r = PolyRegion([outer, inner])
        assert r.contains(0.7, 0.0)
        assert not r.contains(0.1, 0.1)
        assert not r.contains(1.2, 0.0)
        area = np.pi * (1.0**2 - 0.4**2)
        assert r.area() == pytest.approx(area, rel=1e-3)

    def test_contains_vectorized_matches_scalar(self):
        r = PolyRegion([circle_loop(0.2, -0.1, 0.8, 64)])
        rng = np.random.default_rng(5)
        x = rng.uniform(-1.2, 1.2, 300)
        y = rng.uniform(-1.2, 1.2, 300)
        m = r.contains(x, y)
        exact = np.hypot(x - 0.2, y + 0.1) <= 0.8
        # The polygon is inscribed, so disagreement is confined to a thin
        # band near the circle.
        band = np.abs(np.hypot(x - 0.2, y + 0.1) - 0.8) < 0.8 * 2e-3
        assert np.array_equal(m[~band], exact[~band])

    def test_raster_matches_contains_on_lattice_aligned_rect(self):
        # Rectangle edges exactly on lattice lines: the degenerate case the
        # on-edge rule exists for.
        g = build_grid((-0.3, 0.3, -0.3, 0.3), 0.05)
        r = PolyRegion([rect_loop(-0.25, 0.25, -0.2, 0.1)])
        mask = r.raster(g)
        X, Y = np.meshgrid(g.xs, g.ys, indexing="xy")
        ref = r.contains(X.ravel(), Y.ravel()).reshape(g.ny, g.nx)
        assert np.array_equal(mask, ref)
        # Nodes on the rectangle edge are inside.
        j = int(round((-0.2 - g.y0) / g.h))
        i = int(round((0.0 - g.x0) / g.h))
        assert mask[j, i]

    def test_raster_matches_contains_on_circle(self):
        g = build_grid((-1.1, 1.1, -1.1, 1.1), 0.13)
        r = PolyRegion([circle_loop(0, 0, 1.0, 128), circle_loop(0, 0, 0.5, 128)])
        mask = r.raster(g)
        X, Y = np.meshgrid(g.xs, g.ys, indexing="xy")
        ref = r.contains(X.ravel(), Y.ravel()).reshape(g.ny, g.nx)
        assert np.array_equal(mask, ref)


class TestOffsetBoundary:
    def test_circle_inward(self):
        loop = circle_loop(0, 0, 1.5, 256)
        off = offset_boundary(loop, 0.2, side="inward")
        rad = np.hypot(off[:, 0], off[:, 1])
        assert np.max(np.abs(rad - 1.3)) < 1e-3 * 1.5

    def test_circle_outward(self):
        loop = circle_loop(0, 0, 1.0, 200)
        off = offset_boundary(loop, 0.35, side="outward")
        rad = np.hypot(off[:, 0], off[:, 1])
        assert np.max(np.abs(rad - 1.35)) < 1e-3

    def test_square_outward_mitred_area(self):
        d = 0.1
        loop = rect_loop(0, 1, 0, 1)
        off = offset_boundary(loop, d, side="outward")
        assert polygon_area(off) == pytest.approx((1 + 2 * d) ** 2, rel=1e-12)

    def test_too_large_inward_offset_raises(self):
        loop = rect_loop(0, 1, 0, 0.2)
        with pytest.raises(GeometryError):
            offset_boundary(loop, 0.15, side="inward")

    def test_orientation_insensitive(self):
        loop = rect_loop(0, 1, 0, 1)
        a = offset_boundary(loop, 0.05, "outward")
        b = offset_boundary(loop[::-1], 0.05, "outward")
        assert polygon_area(a) == pytest.approx(polygon_area(b), rel=1e-14)


class TestClipping:
    def test_rect_rect_overlap(self):
        poly = rect_loop(0, 2, 0, 1)
        clipper = rect_loop(1, 3, -1, 0.5)
        out = clip_polygon(poly, clipper)
        assert polygon_area(out) == pytest.approx(1.0 * 0.5, abs=1e-14)

    def test_disjoint_gives_empty(self):
        out = clip_polygon(rect_loop(0, 1, 0, 1), rect_loop(2, 3, 2, 3))
        assert polygon_area(out) == 0.0

    def test_triangle_fully_inside(self):
        tri = np.array([[0.2, 0.2], [0.8, 0.3], [0.5, 0.7]])
        out = clip_polygon(tri, rect_loop(0, 1, 0, 1))
        assert polygon_area(out) == pytest.approx(polygon_area(tri), rel=1e-14)

    def test_ensure_ccw(self):
        cw = rect_loop(0, 1, 0, 1)[::-1]
        ccw = ensure_ccw(cw)
        a, b = ccw, np.roll(ccw, -1, axis=0)
        assert 0.5 * np.sum(a[:, 0] * b[:, 1] - b[:, 0] * a[:, 1]) > 0
