"""Explicit Laplacian smoothing toward k-nearest-neighbor averages.

Each pass moves every vertex a fraction ``alpha`` of the way to the mean of
its ``k`` spatially nearest vertices::

    v_i <- v_i + alpha * (mean(v_j for j in N_k(i)) - v_i)

All vertices in a pass read the previous pass's positions. The neighbor
sets are computed once, from the input mesh.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

__all__ = ["NeighborGraph", "SmoothingParams", "build_knn_graph", "laplacian_smooth"]


@dataclass(frozen=True)
class SmoothingParams:
    k: int
    iterations: int
    alpha: float

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"k must be an integer >= 1, got {self.k!r}")
        if int(self.iterations) != self.iterations or self.iterations < 0:
            raise ValueError(f"iterations must be an integer >= 0, got {self.iterations!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha!r}")


@dataclass(frozen=True, eq=False)
class NeighborGraph:
    """``indices[i]`` holds the ``k`` neighbors of vertex ``i``, nearest first."""

    indices: np.ndarray

    @property
    def k(self):
        return self.indices.shape[1]

    def __len__(self):
        return self.indices.shape[0]


def build_knn_graph(points, k):
    """k nearest neighbors by Euclidean distance, excluding the vertex itself.

    ``points`` may be a mesh or an ``(n, 3)`` array. Equal distances are
    ordered by vertex index so the graph is fully deterministic, which
    matters for lattice-snapped inputs where ties are everywhere.
    """
    pts = np.asarray(getattr(points, "vertices", points), dtype=np.float64)
    n = len(pts)
    if int(k) != k or k < 1:
        raise ValueError(f"k must be an integer >= 1, got {k!r}")
    if k >= n:
        raise ValueError(f"k={k} needs more than {k} vertices, mesh has {n}")

    tree = cKDTree(pts)
    # The (k+1)-th distance from the tree bounds the true k-th neighbor
    # distance; re-rank every candidate inside that radius exactly.
    dist, _ = tree.query(pts, k=k + 1)
    radius = dist[:, -1]
    out = np.empty((n, k), dtype=np.int64)
    for i in range(n):
        cand = np.asarray(tree.query_ball_point(pts[i], radius[i] * (1 + 1e-9) + 1e-12), dtype=np.int64)
        cand = cand[cand != i]
        d2 = ((pts[cand] - pts[i]) ** 2).sum(axis=1)
        order = np.lexsort((cand, d2))[:k]
        out[i] = cand[order]
    out.setflags(write=False)
    return NeighborGraph(out)


def laplacian_smooth(mesh, params, graph=None):
    """Return a copy of ``mesh`` smoothed with ``params``; faces are untouched.

    A precomputed ``graph`` for the same mesh and ``params.k`` may be passed
    to skip the neighbor search.
    """
    if graph is None:
        graph = build_knn_graph(mesh, params.k)
    elif graph.k != params.k or len(graph) != mesh.n_vertices:
        raise ValueError("neighbor graph does not match mesh/params")
    v = np.array(mesh.vertices, dtype=np.float64)
    alpha = float(params.alpha)
    if alpha == 0.0 or params.iterations == 0:
        return mesh.with_vertices(v)
    idx = graph.indices
    for _ in range(params.iterations):
        mean = v[idx].sum(axis=1) / graph.k
        v = v + alpha * (mean - v)
    return mesh.with_vertices(v)
