"""Single- and dual-marker overlays, and the fallback between them.

Two markers sit on the phantom's back at known places in the MRI model.
With both in view the overlay is anchored by both; covering one drops to
the single-marker chain and uncovering it restores dual mode.

    python3 demos/overlay_modes.py
"""

import numpy as np

from spinenav.geometry import RigidTransform, quat_normalize
from spinenav.overlay import FiducialLayout, overlay_step
from spinenav.tracking import TrackedObject

layout = FiducialLayout({
    1: RigidTransform([1.0, 0.0, 0.0, 0.0], [-50.0, 0.0, 0.0]),
    2: RigidTransform([1.0, 0.0, 0.0, 0.0], [50.0, 0.0, 0.0]),
})
print(f"layout markers {layout.ids}, spacing {layout.d_ref:.1f} mm")

# where the phantom actually is, seen from the camera
scene = RigidTransform(quat_normalize([0.96, 0.25, 0.05, 0.0]), [10.0, -20.0, 380.0])
target = np.array([0.0, 0.0, -30.0])
marker_poses = {i: scene.compose(layout[i]) for i in layout.ids}

for label, active in [("both visible", {1, 2}), ("marker 2 covered", {1}),
                      ("both visible again", {1, 2}), ("both covered", set())]:
    registry = {i: TrackedObject(i, marker_poses[i], i in active, 0 if i in active else 5)
                for i in layout.ids}
    o = overlay_step(registry, layout)
    if o.transform is None:
        print(f"{label:20s} mode={o.mode.value:6s} no overlay")
        continue
    err = np.linalg.norm(o.transform.apply(target) - scene.apply(target))
    print(f"{label:20s} mode={o.mode.value:6s} scale={o.transform.scale:.6f} target error {err:.1e} mm")
