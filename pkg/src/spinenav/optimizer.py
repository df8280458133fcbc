"""Exhaustive (k, iterations, alpha) grid search for Laplacian smoothing.

Each parameter triplet smooths the MRI mesh, voxelizes it on the lattice
shared with the ground-truth mesh and scores the shell Dice. Results are
ranked by Dice, best first, and the top entries can be exported as STL.
"""

from __future__ import annotations

import itertools
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from ._io import atomic_write_bytes, atomic_write_text
from .geometry import mesh_bounds, union_bounds, write_stl
from .smoothing import SmoothingParams, build_knn_graph, laplacian_smooth
from .voxel import DEFAULT_RESOLUTION_MM, dice_shell, voxelize_surface

__all__ = [
    "GridResult",
    "GridSpec",
    "OptimizationError",
    "DEFAULT_GRID",
    "export_best",
    "optimize",
    "result_filename",
]

log = logging.getLogger(__name__)


class OptimizationError(RuntimeError):
    """A grid cell failed; ``params`` names the offending triplet."""

    def __init__(self, params, cause):
        super().__init__(f"k={params[0]} iterations={params[1]} alpha={params[2]}: {cause}")
        self.params = params


@dataclass(frozen=True)
class GridSpec:
    k: tuple
    iterations: tuple
    alpha: tuple
    resolution_mm: float = DEFAULT_RESOLUTION_MM
    top_n: int = 5

    def __post_init__(self):
        for name in ("k", "iterations", "alpha"):
            vals = tuple(getattr(self, name))
            if not vals:
                raise ValueError(f"grid axis {name!r} is empty")
            object.__setattr__(self, name, vals)
        for k, it, a in self.triplets():
            SmoothingParams(k, it, a)
        if not self.resolution_mm > 0:
            raise ValueError("resolution_mm must be positive")
        if int(self.top_n) != self.top_n or self.top_n < 1:
            raise ValueError("top_n must be an integer >= 1")

    def triplets(self):
        return list(itertools.product(self.k, self.iterations, self.alpha))

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {"k", "iterations", "alpha", "resolution_mm", "top_n"}
        if unknown:
            raise ValueError(f"unknown grid config keys: {sorted(unknown)}")
        return cls(
            k=tuple(int(x) for x in d["k"]),
            iterations=tuple(int(x) for x in d["iterations"]),
            alpha=tuple(float(x) for x in d["alpha"]),
            resolution_mm=float(d.get("resolution_mm", DEFAULT_RESOLUTION_MM)),
            top_n=int(d.get("top_n", 5)),
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def to_dict(self):
        return {
            "k": list(self.k),
            "iterations": list(self.iterations),
            "alpha": list(self.alpha),
            "resolution_mm": self.resolution_mm,
            "top_n": self.top_n,
        }


# the 5 x 5 x 5 grid used for the smoothing benchmark
DEFAULT_GRID = GridSpec(
    k=(8, 16, 32, 64, 128),
    iterations=(1, 5, 10, 20, 50),
    alpha=(0.1, 0.3, 0.5, 0.7, 1.0),
)


@dataclass(frozen=True)
class GridResult:
    dice: float
    k: int
    iterations: int
    alpha: float
    mesh: object = field(default=None, repr=False, compare=False)

    @property
    def params(self):
        return (self.k, self.iterations, self.alpha)


def _rank_key(r):
    return (-r.dice, r.k, r.iterations, r.alpha)


def optimize(gt_mesh, mri_mesh, spec, workers=1):
    """Score every triplet of ``spec`` and return the results ranked best first.

    Only the ``spec.top_n`` best results carry their smoothed mesh; the rest
    are dropped after scoring to bound memory.
    """
    bounds = union_bounds(mesh_bounds(gt_mesh), mesh_bounds(mri_mesh))
    R = spec.resolution_mm
    gt_shell = voxelize_surface(gt_mesh, bounds, R)
    graphs = {}

    def graph(k):
        if k not in graphs:
            graphs[k] = build_knn_graph(mri_mesh, k)
        return graphs[k]

    def evaluate(params):
        k, it, a = params
        try:
            smoothed = laplacian_smooth(mri_mesh, SmoothingParams(k, it, a), graph(k))
            d = dice_shell(gt_shell, voxelize_surface(smoothed, bounds, R))
        except ValueError as exc:
            raise OptimizationError(params, exc) from exc
        log.info("k=%d iterations=%d alpha=%g dice=%.6f", k, it, a, d)
        return GridResult(d, k, it, a)

    triplets = spec.triplets()
    # neighbor graphs are built serially so worker threads only read them
    for k in spec.k:
        try:
            graph(k)
        except ValueError as exc:
            raise OptimizationError((k, spec.iterations[0], spec.alpha[0]), exc) from exc
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(evaluate, triplets))
    else:
        results = [evaluate(p) for p in triplets]
    results.sort(key=_rank_key)

    for i, r in enumerate(results[: spec.top_n]):
        params = SmoothingParams(r.k, r.iterations, r.alpha)
        results[i] = GridResult(r.dice, r.k, r.iterations, r.alpha,
                                laplacian_smooth(mri_mesh, params, graph(r.k)))
    return results


def result_filename(rank, result):
    return f"rank{rank}_k{result.k}_iters{result.iterations}_alpha{result.alpha:.1f}_dice{result.dice:.4f}.stl"


def export_best(results, out_dir, top_n=None, format="binary"):
    """Write the leading results that carry a mesh as STL plus ``summary.json``.

    Returns the STL paths in rank order.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    best = [r for r in results if r.mesh is not None]
    if top_n is not None:
        best = best[:top_n]
    paths, summary = [], []
    for rank, r in enumerate(best, start=1):
        name = result_filename(rank, r)
        atomic_write_bytes(out_dir / name, write_stl(r.mesh, format))
        paths.append(out_dir / name)
        summary.append({
            "rank": rank,
            "k": r.k,
            "iterations": r.iterations,
            "alpha": r.alpha,
            "dice": r.dice,
            "filename": name,
        })
    atomic_write_text(out_dir / "summary.json", json.dumps(summary, indent=2) + "\n")
    return paths
