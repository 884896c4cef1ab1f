import math

import numpy as np
import pytest

from hybridflow.errors import BlowupError
from hybridflow.geometry import build_grid
from hybridflow.vpm import (
    ParticleField,
    convect,
    diffuse,
    diffusion_stencil,
    empty_field,
    induced_velocity_direct,
    induced_velocity_reference,
    remesh,
    seed_from_vorticity,
    vpm_step,
)


def random_cloud(n=60, seed=0, h=0.05):
    rng = np.random.default_rng(seed)
    return ParticleField(rng.uniform(-1, 1, n), rng.uniform(-1, 1, n),
                         rng.normal(size=n), h, h)


class TestSeeding:
    def test_constant_vorticity(self):
        h = 0.1
        pf = seed_from_vorticity((0, 1, 0, 1), lambda x, y: np.ones_like(x), h)
        assert np.allclose(pf.gam, h * h)
        # 11x11 nodes over the unit box.
        assert pf.n == 121
        assert pf.total_circulation() == pytest.approx(121 * h * h, rel=1e-14)

    def test_zero_field_gives_empty(self):
        pf = seed_from_vorticity((0, 1, 0, 1), lambda x, y: np.zeros_like(x), 0.2)
        assert pf.n == 0


class TestInducedVelocity:
    def test_matches_numpy_reference(self):
        pf = random_cloud(80, seed=3)
        rng = np.random.default_rng(4)
        qx = rng.uniform(-1.5, 1.5, 50)
        qy = rng.uniform(-1.5, 1.5, 50)
        u1, v1 = induced_velocity_direct(pf, qx, qy)
        u2, v2 = induced_velocity_reference(pf, qx, qy)
        scale = np.max(np.hypot(u2, v2))
        assert np.max(np.hypot(u1 - u2, v1 - v2)) < 1e-13 * scale

    def test_single_vortex_profile(self):
        sigma = 0.05
        pf = ParticleField(np.zeros(1), np.zeros(1), np.array([2.0]),
                           sigma, sigma)
        r = np.array([0.5 * sigma, sigma, 3 * sigma, 20 * sigma])
        u, v = induced_velocity_direct(pf, r, np.zeros_like(r))
        # On the +x axis a positive vortex at the origin induces +v only.
        assert np.allclose(u, 0.0, atol=1e-16)
        g = -np.expm1(-(r / sigma) ** 2 / 2)
        assert np.allclose(v, 2.0 * g / (2 * np.pi * r), rtol=1e-13)
        # Far field recovers the point vortex.
        assert v[-1] == pytest.approx(2.0 / (2 * np.pi * r[-1]), rel=1e-10)

    def test_self_term_is_zero(self):
        pf = ParticleField(np.array([0.3]), np.array([-0.2]), np.array([1.5]),
                           0.1, 0.1)
        u, v = induced_velocity_direct(pf, 0.3, -0.2)
        assert float(u[0]) == 0.0 and float(v[0]) == 0.0

    def test_corotating_pair_speed(self):
        # Two equal vortices separated by d >> sigma each move at
        # Gamma / (2 pi d), perpendicular to the separation.
        gam, d, sigma = 1.3, 1.0, 0.01
        pf = ParticleField(np.array([-d / 2, d / 2]), np.zeros(2),
                           np.array([gam, gam]), sigma, sigma)
        u, v = induced_velocity_direct(pf, pf.x, pf.y)
        assert np.allclose(u, 0.0, atol=1e-15)
        assert v[1] == pytest.approx(gam / (2 * np.pi * d), rel=1e-12)
        assert v[0] == pytest.approx(-gam / (2 * np.pi * d), rel=1e-12)


class TestConvect:
    def test_rk2_rigid_rotation(self):
        om = 2.0

        def vel(x, y):
            return -om * y, om * x

        pf = ParticleField(np.array([1.0]), np.array([0.0]), np.array([1.0]),
                           0.1, 0.1)
        dt = 0.01
        for _ in range(100):
            pf = convect(pf, vel, dt)
        # RK2 on a circle: radius drift O(dt^2) per revolution.
        r = float(np.hypot(pf.x[0], pf.y[0]))
        ang = math.atan2(pf.y[0], pf.x[0])
        assert r == pytest.approx(1.0, abs=5e-5)
        assert ang == pytest.approx(om * 1.0 - 2 * np.pi * round((om) / (2 * np.pi)),
                                    abs=1e-3)

    def test_rk4_more_accurate_than_rk2(self):
        def vel(x, y):
            return -y, x

        start = ParticleField(np.array([1.0]), np.array([0.0]),
                              np.array([1.0]), 0.1, 0.1)
        errs = {}
        for scheme in ("rk2", "rk4"):
            pf = start
            for _ in range(50):
                pf = convect(pf, vel, 0.02, scheme=scheme)
            errs[scheme] = abs(np.hypot(pf.x[0], pf.y[0]) - 1.0)
        assert errs["rk4"] < errs["rk2"] * 1e-3

    def test_blowup_detected(self):
        pf = random_cloud(5)
        with pytest.raises(BlowupError):
            convect(pf, lambda x, y: (np.full_like(x, np.nan), y), 0.1)


class TestRemesh:
    def test_particle_on_node_is_fixed_point(self):
        h = 0.1
        pf = ParticleField(np.array([0.3]), np.array([-0.2]), np.array([0.7]),
                           h, h)
        out, _, _ = remesh(pf)
        assert out.n == 1
        assert float(out.x[0]) == pytest.approx(0.3, abs=1e-15)
        assert float(out.y[0]) == pytest.approx(-0.2, abs=1e-15)
        assert float(out.gam[0]) == pytest.approx(0.7, rel=1e-15)

    def test_cell_center_spreads_to_16_nodes(self):
        h = 1.0
        pf = ParticleField(np.array([0.5]), np.array([0.5]), np.array([1.0]),
                           h, h)
        out, grid, gam2d = remesh(pf)
        assert out.n == 16
        # Tensor products of the 1D weights [-1/16, 9/16, 9/16, -1/16].
        got = {}
        for x, y, g in zip(out.x, out.y, out.gam):
            got[(round(x), round(y))] = g
        assert got[(0, 0)] == pytest.approx(81 / 256, rel=1e-13)
        assert got[(1, 1)] == pytest.approx(81 / 256, rel=1e-13)
        assert got[(-1, 0)] == pytest.approx(-9 / 256, rel=1e-13)
        assert got[(2, -1)] == pytest.approx(1 / 256, rel=1e-13)
        assert math.fsum(got.values()) == pytest.approx(1.0, abs=1e-14)

    def test_conserves_moments(self):
        pf = random_cloud(200, seed=8, h=0.04)
        out, _, _ = remesh(pf)
        for k, (before, after) in enumerate([
                (pf.total_circulation(), out.total_circulation()),
                (pf.linear_impulse()[0], out.linear_impulse()[0]),
                (pf.linear_impulse()[1], out.linear_impulse()[1]),
                (np.sum(pf.gam * (pf.x**2 + pf.y**2)),
                 np.sum(out.gam * (out.x**2 + out.y**2)))]):
            assert after == pytest.approx(before, abs=1e-12 * max(1, abs(before))), k

    def test_cutoff_redistributes(self):
        h = 0.5
        x = np.array([0.0, 0.5, 1.0])
        y = np.zeros(3)
        gam = np.array([1.0, 1e-14, -0.5])
        pf = ParticleField(x, y, gam, h, h)
        out, _, _ = remesh(pf)
        # Total preserved despite dropping the tiny node's spread-out dust.
        assert out.total_circulation() == pytest.approx(0.5 + 1e-14, rel=1e-12)
        gmax = np.max(np.abs(out.gam))
        assert np.all(np.abs(out.gam) >= 1e-10 * gmax)

    def test_empty(self):
        out, _, _ = remesh(empty_field(0.1))
        assert out.n == 0


class TestDiffusion:
    def test_stencil_values_quarter(self):
        s = diffusion_stencil(0.25)
        assert s[1, 1] == pytest.approx(0.25, rel=1e-12)
        assert s[0, 1] == pytest.approx(0.125, rel=1e-12)
        assert s[0, 0] == pytest.approx(0.0625, rel=1e-12)
        assert math.fsum(s.ravel()) == 1.0

    @pytest.mark.parametrize("c", [0.0, 0.1, 0.25, 0.3, 1 / 3, 0.499, 0.5])
    def test_stencil_sums_to_exactly_one(self, c):
        s = diffusion_stencil(c)
        assert math.fsum(s.ravel()) == 1.0
        w = np.array([c, 1 - 2 * c, c])
        assert np.allclose(s, np.outer(w, w), atol=4e-16)

    def test_stencil_rejects_unstable(self):
        with pytest.raises(ValueError):
            diffusion_stencil(0.6)

    def test_single_step_matches_stencil(self):
        h, nu, dt = 0.1, 1.0, 0.0025  # c = 0.25
        pf = ParticleField(np.array([0.0]), np.array([0.0]), np.array([1.0]),
                           h, h)
        out = diffuse(pf, nu, dt)
        s = diffusion_stencil(0.25)
        assert out.n == 9
        got = {(round(x / h), round(y / h)): g
               for x, y, g in zip(out.x, out.y, out.gam)}
        for dj in (-1, 0, 1):
            for di in (-1, 0, 1):
                assert got[(di, dj)] == pytest.approx(s[dj + 1, di + 1],
                                                      rel=1e-14)

    def test_substeps_conserve(self):
        h = 0.05
        pf = seed_from_vorticity((-0.3, 0.3, -0.3, 0.3),
                                 lambda x, y: np.exp(-(x**2 + y**2) / 0.02), h)
        before = pf.total_circulation()
        # c = nu dt / h^2 = 1.8 -> 4 sub-steps.
        out = diffuse(pf, 1.0, 1.8 * h * h)
        assert out.total_circulation() == pytest.approx(before, abs=1e-13 * abs(before))

    def test_zero_viscosity_is_identity(self):
        pf = random_cloud(10)
        assert diffuse(pf, 0.0, 0.1) is pf


class TestVpmStep:
    def test_lamb_oseen_short_run_conserves(self):
        nu = 1e-3
        t0 = 1.0
        h = 0.05

        def omega(x, y):
            r2 = x**2 + y**2
            return np.exp(-r2 / (4 * nu * t0)) / (4 * np.pi * nu * t0)

        pf = seed_from_vorticity((-0.5, 0.5, -0.5, 0.5), omega, h)
        gam0 = pf.total_circulation()

        def vel(x, y):
            return induced_velocity_direct(pf, x, y)

        for _ in range(5):
            pf = vpm_step(pf, vel, 0.01, nu)
        assert pf.total_circulation() == pytest.approx(gam0, rel=1e-10)
        assert pf.n > 0
