"""Square fiducial marker pose estimation and per-frame tracking.

Observations arrive pre-detected as four pixel corners per marker. A frame
update estimates each marker's pose, low-pass filters it against the
previous estimate, and counts consecutive misses so stale markers can be
switched off.

Corner order, in marker coordinates with side length ``L``::

    (-L/2, +L/2), (+L/2, +L/2), (+L/2, -L/2), (-L/2, -L/2)
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from .geometry import RigidTransform, quat_from_matrix, quat_normalize, rotvec_to_matrix

__all__ = [
    "CameraIntrinsics",
    "MarkerObservation",
    "MarkerSpec",
    "PoseEstimationError",
    "TrackedObject",
    "TrackerConfig",
    "TrackerEvent",
    "estimate_marker_pose",
    "marker_corners",
    "new_registry",
    "parse_observations",
    "pose_record",
    "replay",
    "slerp",
    "smooth_pose",
    "tracker_step",
]

log = logging.getLogger(__name__)

GN_MAX_ITERATIONS = 20
GN_STEP_TOL = 1e-10


class PoseEstimationError(ValueError):
    """Pose could not be recovered. ``residual`` is the last RMS pixel error, if any."""

    def __init__(self, message, residual=None):
        super().__init__(message if residual is None else f"{message} (residual {residual:.3g} px)")
        self.residual = residual


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def project(self, points):
        """Pinhole projection of camera-frame points, ``(n, 3) -> (n, 2)``."""
        p = np.asarray(points, dtype=np.float64)
        return np.stack([self.fx * p[..., 0] / p[..., 2] + self.cx,
                         self.fy * p[..., 1] / p[..., 2] + self.cy], axis=-1)

    def contains(self, uv):
        uv = np.asarray(uv)
        return bool(np.all((uv[..., 0] >= 0) & (uv[..., 0] < self.width)
                           & (uv[..., 1] >= 0) & (uv[..., 1] < self.height)))

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))

    def to_dict(self):
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}


@dataclass(frozen=True)
class MarkerSpec:
    id: int
    side_length: float

    def __post_init__(self):
        if not self.side_length > 0:
            raise ValueError(f"marker {self.id}: side length must be positive")


def marker_corners(side_length):
    """Corner positions in the marker frame, canonical order, ``(4, 3)``."""
    h = side_length / 2.0
    return np.array([[-h, h, 0.0], [h, h, 0.0], [h, -h, 0.0], [-h, -h, 0.0]])


@dataclass(frozen=True, eq=False)
class MarkerObservation:
    frame: int
    id: int
    corners: np.ndarray

    def __post_init__(self):
        c = np.array(self.corners, dtype=np.float64).reshape(4, 2)
        c.setflags(write=False)
        object.__setattr__(self, "corners", c)


@dataclass(frozen=True)
class TrackerConfig:
    t_miss: int = 5
    beta: float = 0.5
    auto_disable: bool = True

    def __post_init__(self):
        if int(self.t_miss) != self.t_miss or self.t_miss < 1:
            raise ValueError("t_miss must be an integer >= 1")
        if not 0.0 < self.beta <= 1.0:
            raise ValueError("beta must lie in (0, 1]")


@dataclass(frozen=True)
class TrackedObject:
    """Tracking state of one registered marker; ``pose`` is marker -> camera."""

    id: int
    pose: RigidTransform | None = None
    active: bool = False
    miss_count: int = 0


@dataclass(frozen=True)
class TrackerEvent:
    frame: int | None
    id: int
    kind: str
    detail: str = field(default="", compare=False)


def new_registry(specs):
    return {s.id: TrackedObject(s.id) for s in _spec_map(specs).values()}


def _spec_map(specs):
    if isinstance(specs, dict):
        return specs
    return {s.id: s for s in specs}


# --------------------------------------------------------------------------
# pose estimation

def _check_corners(uv, cam):
    if not np.all(np.isfinite(uv)):
        raise PoseEstimationError("non-finite corner coordinates")
    if not cam.contains(uv):
        raise PoseEstimationError("corner outside the image")
    pts = uv.tolist()
    edges = [(pts[(i + 1) % 4][0] - pts[i][0], pts[(i + 1) % 4][1] - pts[i][1]) for i in range(4)]
    cross = [edges[i][0] * edges[(i + 1) % 4][1] - edges[i][1] * edges[(i + 1) % 4][0] for i in range(4)]
    scale = max(max(abs(a), abs(b)) for a, b in edges) ** 2
    if any(abs(c) <= 1e-9 * scale for c in cross) or not (all(c > 0 for c in cross) or all(c < 0 for c in cross)):
        raise PoseEstimationError("corners do not form a strictly convex quadrilateral")


@njit(cache=True)
def _orthonormalize(M):
    u, _, vt = np.linalg.svd(M)
    R = u @ vt
    if np.linalg.det(R) < 0:
        u[:, 2] = -u[:, 2]
        R = u @ vt
    return R


@njit(cache=True)
def _pose_from_homography(obj_xy, img_xy, half):
    """DLT homography of the marker plane, split into ``(R, t, ok)``.

    ``obj_xy`` is pre-scaled by ``1 / half`` for conditioning.
    """
    n = obj_xy.shape[0]
    A = np.zeros((2 * n, 9))
    for i in range(n):
        X, Y = obj_xy[i, 0], obj_xy[i, 1]
        x, y = img_xy[i, 0], img_xy[i, 1]
        A[2 * i, 0], A[2 * i, 1], A[2 * i, 2] = X, Y, 1.0
        A[2 * i, 6], A[2 * i, 7], A[2 * i, 8] = -x * X, -x * Y, -x
        A[2 * i + 1, 3], A[2 * i + 1, 4], A[2 * i + 1, 5] = X, Y, 1.0
        A[2 * i + 1, 6], A[2 * i + 1, 7], A[2 * i + 1, 8] = -y * X, -y * Y, -y
    _, _, vt = np.linalg.svd(A)
    H = np.ascontiguousarray(vt[8]).reshape(3, 3)
    h1 = H[:, 0] / half
    h2 = H[:, 1] / half
    lam = (np.sqrt(np.sum(h1 * h1)) + np.sqrt(np.sum(h2 * h2))) / 2.0
    R = np.eye(3)
    t = np.zeros(3)
    if not (lam > 0.0 and np.isfinite(lam)):
        return R, t, False
    if H[2, 2] < 0:
        lam = -lam
    r1 = h1 / lam
    r2 = h2 / lam
    t = H[:, 2] / lam
    M = np.empty((3, 3))
    M[:, 0] = r1
    M[:, 1] = r2
    M[:, 2] = np.cross(r1, r2)
    return _orthonormalize(M), t, True


@njit(cache=True)
def _mirror_candidate(R, t):
    """Second planar-pose seed: marker normal reflected about the line of sight.

    Returns ``(R, ok)``; not ok when the two seeds coincide.
    """
    n = R[:, 2].copy()
    v = t / np.sqrt(np.sum(t * t))
    n2 = 2.0 * np.dot(n, v) * v - n
    axis = np.cross(n, n2)
    s = np.sqrt(np.sum(axis * axis))
    if s < 1e-12:
        return R, False
    c = min(1.0, max(-1.0, np.dot(n, n2)))
    k = axis / s
    ang = np.arctan2(s, c)
    K = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    Rot = np.eye(3) + np.sin(ang) * K + (1.0 - np.cos(ang)) * (K @ K)
    return Rot @ R, True


def _residual(R, t, obj, uv, cam):
    pc = obj @ R.T + t
    return (cam.project(pc) - uv).ravel(), pc


@njit(cache=True)
def _gauss_newton(R, t, obj, u_obs, v_obs, fx, fy, max_iter, tol):
    """Returns ``(R, t, rms, status)``; status 0 ok, 1 behind camera, 2 singular."""
    R = R.copy()
    t = t.copy()
    n = obj.shape[0]
    J = np.empty((2 * n, 6))
    r = np.empty(2 * n)
    q = np.empty((n, 3))
    status = 0
    for it in range(max_iter + 1):
        for i in range(n):
            for a in range(3):
                q[i, a] = R[a, 0] * obj[i, 0] + R[a, 1] * obj[i, 1] + R[a, 2] * obj[i, 2]
            X, Y, Z = q[i, 0] + t[0], q[i, 1] + t[1], q[i, 2] + t[2]
            if not Z > 0.0:
                status = 1
            iz = 1.0 / Z
            r[2 * i] = fx * X * iz - u_obs[i]
            r[2 * i + 1] = fy * Y * iz - v_obs[i]
            # d(pixel)/d(point) rows; rotation columns are q x row
            au0, au2 = fx * iz, -fx * X * iz * iz
            av1, av2 = fy * iz, -fy * Y * iz * iz
            qx, qy, qz = q[i, 0], q[i, 1], q[i, 2]
            J[2 * i, 0] = qy * au2
            J[2 * i, 1] = qz * au0 - qx * au2
            J[2 * i, 2] = -qy * au0
            J[2 * i, 3] = au0
            J[2 * i, 4] = 0.0
            J[2 * i, 5] = au2
            J[2 * i + 1, 0] = qy * av2 - qz * av1
            J[2 * i + 1, 1] = -qx * av2
            J[2 * i + 1, 2] = qx * av1
            J[2 * i + 1, 3] = 0.0
            J[2 * i + 1, 4] = av1
            J[2 * i + 1, 5] = av2
        if status != 0 or it == max_iter:
            break
        A = J.T @ J
        if abs(np.linalg.det(A)) == 0.0:
            status = 2
            break
        step = np.linalg.solve(A, -(J.T @ r))
        wx, wy, wz = step[0], step[1], step[2]
        theta = np.sqrt(wx * wx + wy * wy + wz * wz)
        K = np.array([[0.0, -wz, wy], [wz, 0.0, -wx], [-wy, wx, 0.0]])
        if theta < 1e-8:
            a, b = 1.0, 0.5
        else:
            a, b = np.sin(theta) / theta, (1.0 - np.cos(theta)) / (theta * theta)
        R = (np.eye(3) + a * K + b * (K @ K)) @ R
        for k in range(3):
            t[k] += step[3 + k]
        if np.sqrt(np.sum(step * step)) < tol:
            # one more pass refreshes the residual at the final estimate
            max_iter = it + 1
    rms = np.sqrt(np.mean(r * r))
    return R, t, rms, status


def _refine(R, t, obj, uv, cam):
    """Gauss-Newton on reprojection error; rotation updated on the left."""
    R, t, rms, status = _gauss_newton(
        np.ascontiguousarray(R, dtype=np.float64), np.asarray(t, dtype=np.float64), obj,
        uv[:, 0] - cam.cx, uv[:, 1] - cam.cy, float(cam.fx), float(cam.fy),
        GN_MAX_ITERATIONS, GN_STEP_TOL)
    if status == 2:
        raise PoseEstimationError("singular refinement system", rms)
    if status == 1 or not np.isfinite(rms) or not np.all(np.isfinite(t)):
        raise PoseEstimationError("refinement diverged", rms)
    return _orthonormalize(R), t, float(rms)


def estimate_marker_pose(obs, spec, cam):
    """Marker -> camera pose minimizing corner reprojection error.

    Homography initialization, Gauss-Newton refinement of both planar-pose
    candidates, lower reprojection error wins; on a tie the candidate whose
    marker normal faces the camera wins.
    """
    uv = np.asarray(obs.corners, dtype=np.float64)
    _check_corners(uv, cam)
    obj = marker_corners(spec.side_length)
    half = spec.side_length / 2.0
    img = np.column_stack([(uv[:, 0] - cam.cx) / cam.fx, (uv[:, 1] - cam.cy) / cam.fy])
    R0, t0, ok = _pose_from_homography(obj[:, :2] / half, img, half)
    if not ok:
        raise PoseEstimationError("degenerate homography")
    R1, has_mirror = _mirror_candidate(R0, t0)

    candidates = []
    errors = []
    for R_init in ((R0, R1) if has_mirror else (R0,)):
        try:
            candidates.append(_refine(R_init, t0, obj, uv, cam))
        except PoseEstimationError as exc:
            errors.append(exc)
    if not candidates:
        raise errors[0]

    def key(c):
        R, t, rms = c
        return (rms, 0 if np.dot(R[:, 2], t) < 0 else 1)

    if len(candidates) == 2:
        (Ra, ta, ea), (Rb, tb, eb) = candidates
        if abs(ea - eb) <= 1e-9 * (1.0 + max(ea, eb)):
            candidates.sort(key=lambda c: key(c)[1])
        else:
            candidates.sort(key=lambda c: c[2])
    R, t, _ = candidates[0]
    return RigidTransform(quat_from_matrix(R), t)


def reprojection_rms(pose, obs, spec, cam):
    r, _ = _residual(pose.matrix, pose.translation, marker_corners(spec.side_length),
                     np.asarray(obs.corners), cam)
    return float(np.sqrt(np.mean(r * r)))


# --------------------------------------------------------------------------
# smoothing

def slerp(q0, q1, frac):
    """Spherical interpolation on the short arc."""
    q0 = np.asarray(q0, dtype=np.float64)
    q1 = np.asarray(q1, dtype=np.float64)
    d = float(np.dot(q0, q1))
    if d < 0.0:
        q1, d = -q1, -d
    if d > 0.9995:
        return quat_normalize(q0 + frac * (q1 - q0))
    theta = np.arccos(d)
    s = np.sin(theta)
    return quat_normalize((np.sin((1.0 - frac) * theta) * q0 + np.sin(frac * theta) * q1) / s)


def smooth_pose(previous, measured, beta):
    """Exponential low-pass step: move ``beta`` of the way toward ``measured``."""
    if not 0.0 < beta <= 1.0:
        raise ValueError("beta must lie in (0, 1]")
    if beta == 1.0:
        return measured
    t = (1.0 - beta) * previous.translation + beta * measured.translation
    return RigidTransform(slerp(previous.rotation, measured.rotation, beta), t)


# --------------------------------------------------------------------------
# per-frame state machine

def tracker_step(registry, config, observations, specs, cam, frame=None,
                 estimator=estimate_marker_pose):
    """Advance every registered marker by one frame.

    Returns ``(registry, events)``; the input registry is not modified.
    Markers that fail pose estimation count as missed this frame.
    """
    specs = _spec_map(specs)
    if frame is None and observations:
        frame = observations[0].frame
    events = []
    measured = {}
    for obs in observations:
        if obs.id not in registry or obs.id not in specs:
            events.append(TrackerEvent(frame, obs.id, "UnknownMarker"))
            log.warning("frame %s: ignoring unregistered marker %s", frame, obs.id)
            continue
        if obs.id in measured:
            continue
        try:
            measured[obs.id] = estimator(obs, specs[obs.id], cam)
        except PoseEstimationError as exc:
            events.append(TrackerEvent(frame, obs.id, "EstimationFailed", str(exc)))

    out = {}
    for mid in sorted(registry):
        obj = registry[mid]
        if mid in measured:
            raw = measured[mid]
            if obj.pose is None:
                pose = raw
                events.append(TrackerEvent(frame, mid, "Activated"))
            elif not obj.active:
                pose = raw
                events.append(TrackerEvent(frame, mid, "Reactivated"))
            else:
                pose = smooth_pose(obj.pose, raw, config.beta)
            out[mid] = TrackedObject(mid, pose, True, 0)
        else:
            miss = obj.miss_count + 1
            active = obj.active
            if active and config.auto_disable and miss >= config.t_miss:
                active = False
                events.append(TrackerEvent(frame, mid, "Deactivated"))
            out[mid] = replace(obj, active=active, miss_count=miss)
    return out, events


# --------------------------------------------------------------------------
# line-delimited JSON streams

def parse_observations(lines):
    """Parse ``{frame, id, corners}`` records; raises ``ValueError`` naming the line."""
    out = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            obs = MarkerObservation(int(rec["frame"]), int(rec["id"]), rec["corners"])
        except (ValueError, KeyError, TypeError) as exc:
            raise ValueError(f"line {lineno}: malformed observation record ({exc})") from exc
        out.append(obs)
    return out


def pose_record(frame, obj):
    return {
        "frame": frame,
        "id": obj.id,
        "active": obj.active,
        "q": [float(x) for x in obj.pose.rotation],
        "t": [float(x) for x in obj.pose.translation],
    }


def replay(observations, specs, cam, config):
    """Run a recorded stream through the tracker frame by frame.

    Every frame between the first and last observed frame is stepped, so
    gaps count toward the miss threshold. Returns output records (poses
    and events) in order.
    """
    registry = new_registry(specs)
    if not observations:
        return []
    by_frame = {}
    for obs in observations:
        by_frame.setdefault(obs.frame, []).append(obs)
    records = []
    for frame in range(min(by_frame), max(by_frame) + 1):
        registry, events = tracker_step(registry, config, by_frame.get(frame, []), specs, cam, frame=frame)
        for ev in events:
            rec = {"frame": frame, "id": ev.id, "event": ev.kind}
            if ev.detail:
                rec["detail"] = ev.detail
            records.append(rec)
        for mid in sorted(registry):
            if registry[mid].pose is not None:
                records.append(pose_record(frame, registry[mid]))
    return records
