"""Geometric primitives shared by the rest of the package.

Points are plain ``(3,)`` float arrays in millimeters. Rotations are unit
quaternions stored as ``(w, x, y, z)`` arrays. Meshes, bounds and transforms
are frozen dataclasses holding read-only arrays.
"""

from __future__ import annotations

import math
import re
import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Aabb",
    "RigidTransform",
    "STLParseError",
    "SimilarityTransform",
    "TriangleMesh",
    "apply_transform",
    "mesh_bounds",
    "parse_stl",
    "quat_from_matrix",
    "quat_multiply",
    "quat_normalize",
    "quat_to_matrix",
    "union_bounds",
    "write_stl",
]


def _frozen(a, dtype=np.float64, shape=None):
    arr = np.array(a, dtype=dtype)
    if shape is not None:
        arr = arr.reshape(shape)
    arr.setflags(write=False)
    return arr


# --------------------------------------------------------------------------
# quaternions

def quat_normalize(q):
    """Normalize ``q`` and flip it onto the ``w >= 0`` hemisphere."""
    q = np.asarray(q, dtype=np.float64)
    n = math.sqrt(float(q @ q))
    if not np.isfinite(n) or n == 0.0:
        raise ValueError(f"cannot normalize quaternion {q!r}")
    q = q / n
    if q[0] < 0.0:
        q = -q
    return q


def quat_multiply(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_to_matrix(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_matrix(m):
    """Rotation matrix to canonical unit quaternion (Shepperd's method)."""
    m = np.asarray(m, dtype=np.float64)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0.0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    return quat_normalize(q)


def rotvec_to_matrix(v):
    """Rodrigues' formula for a rotation vector (axis times angle, radians)."""
    x, y, z = (float(c) for c in v)
    theta = (x * x + y * y + z * z) ** 0.5
    K = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    if theta < 1e-8:
        # second-order series; exact to double precision at this size
        return np.eye(3) + K + 0.5 * (K @ K)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * K + b * (K @ K)


def rotation_angle(qa, qb):
    """Angle in radians of the relative rotation between two quaternions."""
    rel = quat_multiply(np.asarray(qa) * np.array([1.0, -1.0, -1.0, -1.0]), qb)
    return 2.0 * float(np.arctan2(np.linalg.norm(rel[1:]), abs(rel[0])))


# --------------------------------------------------------------------------
# transforms

@dataclass(frozen=True, eq=False)
class SimilarityTransform:
    """``p -> scale * R p + translation``."""

    rotation: np.ndarray
    translation: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "rotation", _frozen(quat_normalize(self.rotation)))
        object.__setattr__(self, "translation", _frozen(self.translation, shape=(3,)))
        scale = float(self.scale)
        if not (scale > 0.0 and np.isfinite(scale)):
            raise ValueError(f"scale must be positive, got {scale}")
        object.__setattr__(self, "scale", scale)
        if not np.all(np.isfinite(self.translation)):
            raise ValueError("translation must be finite")

    @classmethod
    def identity(cls):
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @classmethod
    def from_matrix(cls, R, t, scale=1.0):
        return cls(quat_from_matrix(R), t, scale)

    @property
    def matrix(self):
        return quat_to_matrix(self.rotation)

    def apply(self, p):
        """Map a point or an ``(n, 3)`` array of points."""
        p = np.asarray(p, dtype=np.float64)
        return self.scale * (p @ self.matrix.T) + self.translation

    def compose(self, other):
        """``self ∘ other``: apply ``other`` first."""
        q = quat_normalize(quat_multiply(self.rotation, other.rotation))
        t = self.scale * (self.matrix @ other.translation) + self.translation
        return SimilarityTransform(q, t, self.scale * other.scale)

    def inverse(self):
        q_inv = self.rotation * np.array([1.0, -1.0, -1.0, -1.0])
        s_inv = 1.0 / self.scale
        t = -s_inv * (quat_to_matrix(q_inv) @ self.translation)
        return SimilarityTransform(q_inv, t, s_inv)


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Rotation plus translation; the 6-DoF pose of a marker or camera."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", _frozen(quat_normalize(self.rotation)))
        object.__setattr__(self, "translation", _frozen(self.translation, shape=(3,)))
        if not np.all(np.isfinite(self.translation)):
            raise ValueError("translation must be finite")

    scale = 1.0

    @classmethod
    def identity(cls):
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @classmethod
    def from_matrix(cls, R, t):
        return cls(quat_from_matrix(R), t)

    @property
    def matrix(self):
        return quat_to_matrix(self.rotation)

    def apply(self, p):
        p = np.asarray(p, dtype=np.float64)
        return p @ self.matrix.T + self.translation

    def compose(self, other):
        """``self ∘ other``. Composing with a similarity yields a similarity."""
        if isinstance(other, SimilarityTransform):
            return self.as_similarity().compose(other)
        q = quat_normalize(quat_multiply(self.rotation, other.rotation))
        t = self.matrix @ other.translation + self.translation
        return RigidTransform(q, t)

    def inverse(self):
        q_inv = self.rotation * np.array([1.0, -1.0, -1.0, -1.0])
        return RigidTransform(q_inv, -(quat_to_matrix(q_inv) @ self.translation))

    def as_similarity(self):
        return SimilarityTransform(self.rotation, self.translation, 1.0)


def apply_transform(t, p):
    """Return ``scale * R p + translation`` for a rigid or similarity transform."""
    return t.apply(p)


# --------------------------------------------------------------------------
# meshes and bounds

@dataclass(frozen=True)
class Aabb:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = _frozen(self.min, shape=(3,))
        hi = _frozen(self.max, shape=(3,))
        if np.any(lo > hi):
            raise ValueError(f"degenerate bounds: min {lo} > max {hi}")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @property
    def extent(self):
        return self.max - self.min

    def padded(self, pad):
        return Aabb(self.min - pad, self.max + pad)

    def contains(self, points, tol=0.0):
        points = np.atleast_2d(points)
        return bool(np.all(points >= self.min - tol) and np.all(points <= self.max + tol))

    def __eq__(self, other):
        if not isinstance(other, Aabb):
            return NotImplemented
        return np.array_equal(self.min, other.min) and np.array_equal(self.max, other.max)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Indexed triangle surface. ``vertices`` is ``(n, 3)`` mm, ``faces`` ``(m, 3)``."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = _frozen(self.vertices, shape=(-1, 3))
        f = _frozen(self.faces, dtype=np.int64, shape=(-1, 3))
        if not np.all(np.isfinite(v)):
            raise ValueError("vertex coordinates must be finite")
        if f.size:
            if f.min() < 0 or f.max() >= len(v):
                raise ValueError("face index out of range")
            if np.any((f[:, 0] == f[:, 1]) & (f[:, 1] == f[:, 2])):
                raise ValueError("degenerate face with three identical indices")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_faces(self):
        return len(self.faces)

    def triangles(self):
        """``(m, 3, 3)`` array of corner positions."""
        return self.vertices[self.faces]

    def with_vertices(self, vertices):
        return TriangleMesh(vertices, self.faces)

    def face_normals(self):
        tri = self.triangles()
        n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        norm = np.linalg.norm(n, axis=1, keepdims=True)
        return np.divide(n, norm, out=np.zeros_like(n), where=norm > 0)


def mesh_bounds(mesh):
    if mesh.n_vertices == 0:
        raise ValueError("bounds of an empty mesh are undefined")
    return Aabb(mesh.vertices.min(axis=0), mesh.vertices.max(axis=0))


def union_bounds(a, b):
    return Aabb(np.minimum(a.min, b.min), np.maximum(a.max, b.max))


# --------------------------------------------------------------------------
# STL

class STLParseError(ValueError):
    """Malformed STL input. ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


_HEADER = 80
_RECORD = struct.Struct("<12fH")
_FLOAT = r"([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)"
_VERTEX_RE = re.compile(rb"vertex\s+" + (_FLOAT.encode() + rb"\s+") * 2 + _FLOAT.encode(), re.I)
_FACET_RE = re.compile(rb"\bfacet\b")
_ENDFACET_RE = re.compile(rb"\bendfacet\b")
_ENDSOLID_RE = re.compile(rb"\bendsolid\b")


def _is_ascii(data):
    if data.lstrip()[:5].lower() != b"solid":
        return False
    if _FACET_RE.search(data) is None and _ENDSOLID_RE.search(data) is None:
        return False
    # a binary file whose header happens to start with "solid"
    if len(data) >= _HEADER + 4:
        (count,) = struct.unpack_from("<I", data, _HEADER)
        if len(data) == _HEADER + 4 + 50 * count:
            return False
    return True


def _merge(corners):
    """Weld corner positions with exact bit equality, first occurrence first."""
    corners = np.ascontiguousarray(corners, dtype=np.float64).reshape(-1, 3)
    if len(corners) == 0:
        return np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64)
    keys = corners.view(np.dtype((np.void, 24))).ravel()
    _, first, inverse = np.unique(keys, return_index=True, return_inverse=True)
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    vertices = corners[first[order]]
    faces = rank[inverse.ravel()].reshape(-1, 3)
    return vertices, faces


def _parse_binary(data):
    if len(data) < _HEADER + 4:
        raise STLParseError("truncated binary STL header", len(data))
    (count,) = struct.unpack_from("<I", data, _HEADER)
    expected = _HEADER + 4 + 50 * count
    if len(data) < expected:
        full = (len(data) - _HEADER - 4) // 50
        raise STLParseError(
            f"truncated record {full} of {count}", _HEADER + 4 + 50 * full)
    if len(data) > expected:
        raise STLParseError(
            f"triangle count {count} does not match file size {len(data)}", _HEADER)
    rec = np.frombuffer(data, dtype=np.dtype([("n", "<f4", 3), ("v", "<f4", (3, 3)), ("a", "<u2")]),
                        count=count, offset=_HEADER + 4)
    return rec["v"].astype(np.float64)


def _parse_ascii(data):
    corners = []
    pos = 0
    for m in _FACET_RE.finditer(data):
        if m.start() < pos:
            continue
        end = _ENDFACET_RE.search(data, m.end())
        if end is None:
            raise STLParseError("facet without endfacet", m.start())
        verts = _VERTEX_RE.findall(data, m.end(), end.start())
        if len(verts) != 3:
            raise STLParseError(f"facet has {len(verts)} vertices, expected 3", m.start())
        corners.append([[float(c) for c in v] for v in verts])
        pos = end.end()
    return np.array(corners, dtype=np.float64).reshape(-1, 3, 3)


def parse_stl(data):
    """Parse binary or ASCII STL bytes into a welded :class:`TriangleMesh`.

    Facet normals stored in the file are ignored.
    """
    data = bytes(data)
    if not data:
        raise STLParseError("empty input", 0)
    corners = _parse_ascii(data) if _is_ascii(data) else _parse_binary(data)
    if not np.all(np.isfinite(corners)):
        raise STLParseError("non-finite vertex coordinate")
    vertices, faces = _merge(corners)
    try:
        return TriangleMesh(vertices, faces)
    except ValueError as exc:
        raise STLParseError(str(exc)) from exc


def write_stl(mesh, format="binary", name="spinenav"):
    """Serialize ``mesh``; output is a pure function of the mesh contents."""
    tri = mesh.triangles()
    normals = mesh.face_normals()
    if format == "binary":
        header = f"binary STL {name}".encode("ascii")[:_HEADER].ljust(_HEADER, b"\0")
        rec = np.zeros(len(tri), dtype=np.dtype([("n", "<f4", 3), ("v", "<f4", (3, 3)), ("a", "<u2")]))
        rec["n"] = normals
        rec["v"] = tri
        return header + struct.pack("<I", len(tri)) + rec.tobytes()
    if format == "ascii":
        lines = [f"solid {name}"]
        for n, t in zip(normals, tri):
            lines.append("  facet normal {!r} {!r} {!r}".format(*map(float, n)))
            lines.append("    outer loop")
            for c in t:
                lines.append("      vertex {!r} {!r} {!r}".format(*map(float, c)))
            lines.append("    endloop")
            lines.append("  endfacet")
        lines.append(f"endsolid {name}")
        return ("\n".join(lines) + "\n").encode("ascii")
    raise ValueError(f"unknown STL format {format!r}")
