"""Stair-stepped meshes, Laplacian smoothing and the shell Dice score.

A sphere stands in for a vertebra. Snapping its vertices to a 1 mm grid
mimics the slice stepping of an MRI segmentation; smoothing pulls the
vertices back toward the surface and the shell Dice against the clean mesh
shows how much.

    python3 demos/smoothing_and_dice.py
"""

from spinenav.geometry import mesh_bounds, union_bounds
from spinenav.smoothing import SmoothingParams, laplacian_smooth
from spinenav.synthetic import icosphere, quantize
from spinenav.voxel import dice_shell, voxelize_surface

truth = icosphere(4, radius=25.0)
stepped = quantize(truth, 1.0)
bounds = union_bounds(mesh_bounds(truth), mesh_bounds(stepped))
ref = voxelize_surface(truth, bounds, 1.0)

print(f"{truth.n_vertices} vertices, lattice {ref.dims}, {ref.count} shell cells")
print(f"stair-stepped mesh: Dice {dice_shell(ref, voxelize_surface(stepped, bounds)):.4f}")

# Too little smoothing leaves the steps; too much shrinks the surface.
for k, iterations, alpha in [(8, 1, 0.5), (16, 1, 0.5), (16, 5, 0.5), (64, 20, 1.0)]:
    smoothed = laplacian_smooth(stepped, SmoothingParams(k, iterations, alpha))
    d = dice_shell(ref, voxelize_surface(smoothed, bounds))
    print(f"k={k:3d} iterations={iterations:2d} alpha={alpha}: Dice {d:.4f}")
