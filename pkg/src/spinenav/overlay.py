"""Model-to-camera overlay transform from one or two tracked markers.

With both layout markers visible the overlay is a similarity: the marker
centers fix position and uniform scale, the inter-marker direction plus the
averaged marker normals fix orientation. With one marker the overlay is the
rigid chain through that marker. The mode is re-evaluated every step, so a
briefly occluded marker drops the overlay to single-marker mode and it
returns to dual mode as soon as both are visible again.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .geometry import RigidTransform, SimilarityTransform

__all__ = [
    "FiducialLayout",
    "OverlayMode",
    "OverlayPose",
    "dual_marker_overlay",
    "overlay_step",
    "select_mode",
    "single_marker_overlay",
]


class OverlayMode(str, Enum):
    NONE = "None"
    SINGLE = "Single"
    DUAL = "Dual"


@dataclass(frozen=True, eq=False)
class FiducialLayout:
    """Marker -> model transforms recorded at scan time, keyed by marker id."""

    markers: dict
    d_ref: float | None = None

    def __post_init__(self):
        markers = {int(k): v for k, v in self.markers.items()}
        if not markers or len(markers) > 2:
            raise ValueError("a layout holds one or two markers")
        object.__setattr__(self, "markers", markers)
        if len(markers) == 2:
            a, b = (markers[i].translation for i in self.ids)
            d = float(np.linalg.norm(b - a))
            if not d > 0:
                raise ValueError("layout markers share a center")
            if self.d_ref is None:
                object.__setattr__(self, "d_ref", d)
            elif abs(self.d_ref - d) > 1e-9 * max(1.0, d):
                raise ValueError(f"d_ref {self.d_ref} disagrees with marker spacing {d}")
            a, b = (markers[i] for i in self.ids)
            object.__setattr__(self, "_model_frame",
                               _frame(a.translation, b.translation, a.matrix[:, 2], b.matrix[:, 2])[0])

    @property
    def model_frame(self):
        """Orthonormal dual-marker basis in the model frame (two-marker layouts only)."""
        return getattr(self, "_model_frame", None)

    @property
    def ids(self):
        return tuple(sorted(self.markers))

    def __getitem__(self, mid):
        return self.markers[mid]

    def __contains__(self, mid):
        return mid in self.markers

    def subset(self, ids):
        return FiducialLayout({i: self.markers[i] for i in ids})

    @classmethod
    def from_dict(cls, d):
        markers = {int(k): RigidTransform(v["q"], v["t"]) for k, v in d["markers"].items()}
        return cls(markers, d.get("d_ref_mm"))

    def to_dict(self):
        out = {"markers": {str(i): {"q": [float(x) for x in m.rotation],
                                    "t": [float(x) for x in m.translation]}
                           for i, m in sorted(self.markers.items())}}
        if self.d_ref is not None:
            out["d_ref_mm"] = self.d_ref
        return out

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class OverlayPose:
    transform: SimilarityTransform | None
    mode: OverlayMode


def select_mode(active_ids, layout_ids=None):
    """Dual when both layout markers are active, Single for one, None for zero."""
    active = set(active_ids)
    if layout_ids is not None:
        active &= set(layout_ids)
        if len(active) == 2 and len(set(layout_ids)) == 2:
            return OverlayMode.DUAL
    elif len(active) >= 2:
        return OverlayMode.DUAL
    if len(active) == 1:
        return OverlayMode.SINGLE
    if not active:
        return OverlayMode.NONE
    raise ValueError(f"cannot choose a mode for active markers {sorted(active)}")


def single_marker_overlay(pose, mid, layout):
    """``pose ∘ layout[mid]^-1``: model -> marker -> camera, unit scale."""
    if mid not in layout:
        raise KeyError(f"marker {mid} is not in the fiducial layout")
    return OverlayPose(pose.compose(layout[mid].inverse()).as_similarity(), OverlayMode.SINGLE)


def _cross(a, b):
    # np.cross is slow for single 3-vectors
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])


def _frame(c1, c2, z1, z2):
    d = c2 - c1
    dist = math.sqrt(float(d @ d))
    if dist <= 1e-6:
        raise ValueError("marker centers coincide")
    u = d / dist
    n = z1 + z2
    nn = math.sqrt(float(n @ n))
    if nn <= 1e-12:
        raise ValueError("marker normals cancel")
    n = n / nn
    n_perp = n - float(n @ u) * u
    m = math.sqrt(float(n_perp @ n_perp))
    if m <= 1e-6:
        raise ValueError("mean marker normal is parallel to the inter-marker axis")
    n_perp = n_perp / m
    return np.column_stack([u, n_perp, _cross(u, n_perp)]), dist


def dual_marker_overlay(pose1, pose2, layout):
    """Similarity overlay from two marker poses given in layout id order."""
    i1, i2 = layout.ids
    m1, m2 = layout[i1], layout[i2]
    c1, c2 = pose1.translation, pose2.translation
    B_cam, dist = _frame(c1, c2, pose1.matrix[:, 2], pose2.matrix[:, 2])
    R = B_cam @ layout.model_frame.T
    s = dist / layout.d_ref
    mid_model = (m1.translation + m2.translation) / 2.0
    t = (c1 + c2) / 2.0 - s * (R @ mid_model)
    return OverlayPose(SimilarityTransform.from_matrix(R, t, s), OverlayMode.DUAL)


def overlay_step(registry, layout):
    """Overlay from the active markers of a tracker registry."""
    active = [mid for mid, obj in registry.items()
              if obj.active and obj.pose is not None and mid in layout]
    mode = select_mode(active, layout.ids)
    if mode is OverlayMode.DUAL:
        i1, i2 = layout.ids
        return dual_marker_overlay(registry[i1].pose, registry[i2].pose, layout)
    if mode is OverlayMode.SINGLE:
        (mid,) = active
        return single_marker_overlay(registry[mid].pose, mid, layout)
    return OverlayPose(None, OverlayMode.NONE)
