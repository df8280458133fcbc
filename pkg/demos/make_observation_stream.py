"""Write a synthetic observation stream for ``spinenav track``.

One 50 mm marker drifts slowly across the view with half-pixel corner
noise and is hidden for frames 10-16, long enough to be switched off.

    python3 demos/make_observation_stream.py demos/data/observations.jsonl
"""

import json
import sys

import numpy as np

from spinenav.geometry import RigidTransform
from spinenav.tracking import CameraIntrinsics, marker_corners

cam = CameraIntrinsics(800.0, 800.0, 640.0, 640.0, 1280, 1280)
rng = np.random.default_rng(0)
lines = []
for frame in range(25):
    if 10 <= frame <= 16:
        continue
    pose = RigidTransform([0.99, 0.1, 0.0, 0.0], [2.0 * frame - 25.0, 5.0, 520.0])
    uv = cam.project(pose.apply(marker_corners(50.0))) + rng.normal(scale=0.5, size=(4, 2))
    lines.append(json.dumps({"frame": frame, "id": 1, "corners": np.round(uv, 3).tolist()}))

out = sys.argv[1] if len(sys.argv) > 1 else "observations.jsonl"
with open(out, "w") as fh:
    fh.write("\n".join(lines) + "\n")
print(f"wrote {len(lines)} observations to {out}")
