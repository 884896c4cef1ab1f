"""Barnes-Hut acceleration of the regularized Biot-Savart sum.

A quadtree over the particles carries monopole, dipole and quadrupole moments
per node.  A node is used in far-field form when the target is well separated
from its square (side < theta * dmin) and far enough that the Gaussian core
factor has saturated (dmin > 8 sigma); theta = 0 disables the expansion and
reproduces direct summation up to reassociation roundoff.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import EXP_ARG_MAX

LEAF_SIZE = 32
CORE_SATURATION_RADII = 8.0


@dataclass
class _Node:
    cx: float
    cy: float
    half: float      # half side of the square
    lo: int          # slice into the permutation array
    hi: int
    children: list   # empty for leaves
    m0: float = 0.0
    m1: complex = 0.0j
    m2: complex = 0.0j


class VortexTree:
    """Quadtree over a fixed particle set; evaluate() may be called many times."""

    def __init__(self, x, y, gam, sigma: float, leaf_size: int = LEAF_SIZE):
        self.x = np.asarray(x, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.gam = np.asarray(gam, dtype=float)
        self.sigma = float(sigma)
        self.leaf_size = leaf_size
        n = self.x.size
        self.perm = np.arange(n)
        if n == 0:
            self.root = None
            return
        cx = 0.5 * (self.x.min() + self.x.max())
        cy = 0.5 * (self.y.min() + self.y.max())
        half = 0.5 * max(self.x.max() - self.x.min(),
                         self.y.max() - self.y.min())
        half = max(half, 1e-300) * (1 + 1e-12)
        self._min_half = 1e-12 * half
        self.root = self._build(0, n, cx, cy, half)
        self._moments(self.root)

    def _build(self, lo, hi, cx, cy, half):
        node = _Node(cx, cy, half, lo, hi, [])
        # Coincident points would recurse forever; leave them in one leaf.
        if hi - lo <= self.leaf_size or half < self._min_half:
            return node
        idx = self.perm[lo:hi]
        east = self.x[idx] >= cx
        north = self.y[idx] >= cy
        q = east.astype(np.int8) + 2 * north.astype(np.int8)
        order = np.argsort(q, kind="stable")
        self.perm[lo:hi] = idx[order]
        counts = np.bincount(q, minlength=4)
        h2 = 0.5 * half
        offs = [(-h2, -h2), (h2, -h2), (-h2, h2), (h2, h2)]
        start = lo
        for k in range(4):
            if counts[k] == 0:
                start += counts[k]
                continue
            node.children.append(
                self._build(start, start + counts[k],
                            cx + offs[k][0], cy + offs[k][1], h2))
            start += counts[k]
        return node

    def _moments(self, node):
        idx = self.perm[node.lo:node.hi]
        g = self.gam[idx]
        dz = np.conj((self.x[idx] - node.cx) + 1j * (self.y[idx] - node.cy))
        node.m0 = float(g.sum())
        node.m1 = complex((g * dz).sum())
        node.m2 = complex((g * dz * dz).sum())
        for ch in node.children:
            self._moments(ch)

    def evaluate(self, qx, qy, theta: float = 0.3):
        """Velocity (u, v) at query points."""
        qx = np.atleast_1d(np.asarray(qx, dtype=float))
        qy = np.atleast_1d(np.asarray(qy, dtype=float))
        out = np.zeros(qx.size, dtype=complex)
        if self.root is not None:
            z = qx.ravel() + 1j * qy.ravel()
            self._accumulate(self.root, z, np.arange(z.size), out, theta)
            out *= 1j / (2.0 * np.pi)
        return out.real.reshape(qx.shape), out.imag.reshape(qx.shape)

    def _accumulate(self, node, z, tsel, out, theta):
        zt = z[tsel]
        dx = np.abs(zt.real - node.cx)
        dy = np.abs(zt.imag - node.cy)
        dmin = np.hypot(np.maximum(dx - node.half, 0.0),
                        np.maximum(dy - node.half, 0.0))
        side = 2.0 * node.half
        far = ((dmin > 0.0) & (side < theta * dmin)
               & (dmin > CORE_SATURATION_RADII * self.sigma))
        if np.any(far):
            D = np.conj(zt[far] - (node.cx + 1j * node.cy))
            inv = 1.0 / D
            out[tsel[far]] += inv * (node.m0 + inv * (node.m1 + inv * node.m2))
        near = tsel[~far]
        if near.size == 0:
            return
        if node.children:
            for ch in node.children:
                self._accumulate(ch, z, near, out, theta)
        else:
            idx = self.perm[node.lo:node.hi]
            zp = self.x[idx] + 1j * self.y[idx]
            d = z[near, None] - zp[None, :]
            r2 = d.real**2 + d.imag**2
            a = np.minimum(r2 / (2.0 * self.sigma**2), EXP_ARG_MAX)
            g = -np.expm1(-a)
            with np.errstate(divide="ignore", invalid="ignore"):
                f = np.where(r2 > 0.0, self.gam[idx][None, :] * g / r2, 0.0)
            out[near] += (f * d).sum(axis=1)


def induced_velocity_tree(particles, qx, qy, theta: float = 0.3,
                          leaf_size: int = LEAF_SIZE):
    """One-shot build-and-evaluate convenience wrapper."""
    tree = VortexTree(particles.x, particles.y, particles.gam,
                      particles.sigma, leaf_size)
    return tree.evaluate(qx, qy, theta)
