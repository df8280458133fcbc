"""Surface voxelization and the surface-shell Dice overlap score."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


__all__ = ["DEFAULT_RESOLUTION_MM", "VoxelGrid", "dice_shell", "grid_dims", "voxelize_surface"]

DEFAULT_RESOLUTION_MM = 1.0

# (triangle, cell) pairs tested per vectorized batch
_BATCH = 1 << 18


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """Occupancy over ``dims`` cubic cells of side ``resolution`` from ``origin``."""

    origin: np.ndarray
    resolution: float
    dims: tuple
    occupancy: np.ndarray

    def __post_init__(self):
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or min(dims) < 1:
            raise ValueError(f"dims must be three positive integers, got {self.dims!r}")
        occ = np.asarray(self.occupancy, dtype=bool)
        if occ.shape != dims:
            raise ValueError(f"occupancy shape {occ.shape} != dims {dims}")
        occ.setflags(write=False)
        origin = np.array(self.origin, dtype=np.float64).reshape(3)
        origin.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "occupancy", occ)
        object.__setattr__(self, "origin", origin)

    @property
    def count(self):
        return int(np.count_nonzero(self.occupancy))

    def occupied_indices(self):
        return np.argwhere(self.occupancy)

    def same_lattice(self, other):
        return (self.dims == other.dims and self.resolution == other.resolution
                and np.array_equal(self.origin, other.origin))


def grid_dims(bounds, resolution):
    n = np.ceil(bounds.extent / resolution).astype(np.int64)
    return tuple(int(x) for x in np.maximum(n, 1))


def _tri_box_overlap(v0, v1, v2, half):
    """Vectorized separating-axis test of triangles against boxes at the origin.

    ``v0, v1, v2`` are ``(m, 3)`` corner positions relative to each box
    center; boxes are closed cubes of half-width ``half``.
    """
    hit = np.ones(len(v0), dtype=bool)

    def test(axis):
        p0 = np.einsum("ij,ij->i", v0, axis)
        p1 = np.einsum("ij,ij->i", v1, axis)
        p2 = np.einsum("ij,ij->i", v2, axis)
        r = half * np.abs(axis).sum(axis=1)
        lo = np.minimum(np.minimum(p0, p1), p2)
        hi = np.maximum(np.maximum(p0, p1), p2)
        return (lo <= r) & (hi >= -r)

    # box face normals
    for a in range(3):
        c = np.stack([v0[:, a], v1[:, a], v2[:, a]], axis=1)
        hit &= (c.min(axis=1) <= half) & (c.max(axis=1) >= -half)
    edges = (v1 - v0, v2 - v1, v0 - v2)
    hit &= test(np.cross(edges[0], edges[1]))
    for e in edges:
        for a in range(3):
            unit = np.zeros(3)
            unit[a] = 1.0
            hit &= test(np.cross(unit, e))
    return hit


def voxelize_surface(mesh, bounds, resolution=DEFAULT_RESOLUTION_MM):
    """Mark every cell whose closed box intersects at least one triangle.

    The lattice starts at ``bounds.min`` with ``ceil(extent / resolution)``
    cells per axis, so meshes voxelized against the same bounds line up
    cell for cell.
    """
    if not resolution > 0:
        raise ValueError(f"resolution must be positive, got {resolution!r}")
    if mesh.n_vertices and not bounds.contains(mesh.vertices, tol=1e-9 * resolution):
        raise ValueError("mesh extends outside the voxelization bounds")
    R = float(resolution)
    origin = bounds.min
    dims = np.array(grid_dims(bounds, R))
    occ = np.zeros(tuple(dims), dtype=bool)
    if mesh.n_faces == 0:
        return VoxelGrid(origin, R, tuple(dims), occ)

    tri = (mesh.triangles() - origin) / R  # lattice units
    lo = np.clip(np.ceil(tri.min(axis=1)).astype(np.int64) - 1, 0, dims - 1)
    hi = np.clip(np.floor(tri.max(axis=1)).astype(np.int64), 0, dims - 1)
    span = hi - lo + 1
    counts = span.prod(axis=1)

    start = 0
    while start < len(tri):
        csum = np.cumsum(counts[start:])
        stop = start + max(1, int(np.searchsorted(csum, _BATCH, side="right")))
        sel = np.arange(start, stop)
        n = counts[sel]
        owner = np.repeat(sel, n)
        local = np.arange(n.sum()) - np.repeat(np.cumsum(n) - n, n)
        sy, sz = span[owner, 1], span[owner, 2]
        cell = lo[owner] + np.stack([local // (sy * sz), (local // sz) % sy, local % sz], axis=1)
        center = cell + 0.5
        t = tri[owner]
        hit = _tri_box_overlap(t[:, 0] - center, t[:, 1] - center, t[:, 2] - center, 0.5)
        c = cell[hit]
        occ[c[:, 0], c[:, 1], c[:, 2]] = True
        start = stop
    return VoxelGrid(origin, R, tuple(dims), occ)


def dice_shell(a, b):
    """``2|A ∩ B| / (|A| + |B|)`` over two grids on the same lattice.

    Two empty shells score 1.0.
    """
    if not a.same_lattice(b):
        raise ValueError("grids must share origin, resolution and dims")
    na, nb = a.count, b.count
    if na + nb == 0:
        return 1.0
    inter = int(np.count_nonzero(a.occupancy & b.occupancy))
    return 2.0 * inter / (na + nb)
