"""Marker pose estimation and the per-frame tracker.

A 50 mm marker is rendered through a pinhole camera with half-pixel corner
noise. The tracker low-pass filters the estimates, then the marker is hidden
long enough to be switched off and comes back.

    python3 demos/marker_tracking.py
"""

import numpy as np

from spinenav.geometry import RigidTransform, rotation_angle
from spinenav.tracking import (
    CameraIntrinsics,
    MarkerObservation,
    MarkerSpec,
    TrackerConfig,
    estimate_marker_pose,
    marker_corners,
    new_registry,
    tracker_step,
)

cam = CameraIntrinsics(800.0, 800.0, 640.0, 640.0, 1280, 1280)
spec = MarkerSpec(1, 50.0)
rng = np.random.default_rng(1)

# a marker 500 mm away, tilted 20 degrees about x
a = np.radians(20.0)
truth = RigidTransform([np.cos(a / 2), np.sin(a / 2), 0.0, 0.0], [15.0, -10.0, 500.0])
clean = cam.project(truth.apply(marker_corners(spec.side_length)))


def observe(frame, sigma=0.5):
    return MarkerObservation(frame, 1, clean + rng.normal(scale=sigma, size=clean.shape))


pose = estimate_marker_pose(MarkerObservation(0, 1, clean), spec, cam)
print(f"noiseless estimate: rotation error {rotation_angle(pose.rotation, truth.rotation):.1e} rad, "
      f"translation error {np.linalg.norm(pose.translation - truth.translation):.1e} mm")

config = TrackerConfig(t_miss=5, beta=0.5)
registry = new_registry([spec])
schedule = [True] * 8 + [False] * 6 + [True] * 3  # visible, hidden, visible again
for frame, visible in enumerate(schedule):
    obs = [observe(frame)] if visible else []
    registry, events = tracker_step(registry, config, obs, [spec], cam, frame=frame)
    obj = registry[1]
    err = np.linalg.norm(obj.pose.translation - truth.translation)
    note = ", ".join(e.kind for e in events)
    print(f"frame {frame:2d} {'seen' if visible else '----'} active={obj.active!s:5} "
          f"misses={obj.miss_count} position error {err:5.2f} mm {note}")
