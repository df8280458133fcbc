"""Seeded needle-insertion trials scored against concentric detector rings.

Each trial perturbs where the physical markers were stuck on relative to
the scan-time fiducial sites, renders noisy corner observations through a
pinhole camera, runs the tracker and overlay for a few frames, and lands
the needle where the overlay says the target is (plus operator error).
The landing offset in the detector plane is binned into rings.

Every trial draws from its own counter-based stream keyed by
``(seed, trial)``, and draws the same quantities in the same order for
every guidance mode, so modes can be compared on identical noise.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .geometry import RigidTransform
from .overlay import FiducialLayout, OverlayMode, overlay_step
from .tracking import (
    CameraIntrinsics,
    MarkerObservation,
    MarkerSpec,
    TrackerConfig,
    marker_corners,
    new_registry,
    tracker_step,
)

__all__ = [
    "AccuracyReport",
    "BLIND_SIGMA_MM",
    "DetectorRings",
    "Guidance",
    "REFERENCE_COLUMNS",
    "Scenario",
    "TrialResult",
    "classify_insertion",
    "compare_report",
    "default_scenario",
    "look_at",
    "run_trials",
    "summarize",
    "summarize_counts",
]

log = logging.getLogger(__name__)

# Rayleigh sigma with P(r < 1 mm) = 0.2: 1 - exp(-1 / (2 s^2)) = 0.2
BLIND_SIGMA_MM = 1.0 / math.sqrt(2.0 * math.log(1.0 / 0.8))

# Detector-ring counts (rings 1-4), high-accuracy rate (%) and average
# deviation (mm) of the reference phantom columns, 50 trials each.
REFERENCE_COLUMNS = {
    "blind": ((10, 18, 12, 10), 20.0, 6.4),
    "single_cad": ((20, 20, 8, 2), 40.0, 3.3),
    "single_mri": ((21, 19, 10, 0), 42.0, 2.9),
    "single_smoothed_mri": ((23, 20, 7, 0), 46.0, 2.5),
    "dual_cad": ((29, 18, 3, 0), 58.0, 1.7),
    "dual_mri": ((27, 20, 3, 0), 54.0, 1.9),
    "dual_smoothed_mri": ((30, 15, 5, 0), 60.0, 1.9),
}


class Guidance(str, Enum):
    BASELINE = "Baseline"
    SINGLE = "SingleMarker"
    DUAL = "DualMarker"


@dataclass(frozen=True)
class DetectorRings:
    radii: tuple = (1.0, 5.0, 10.0, 20.0)
    midpoints: tuple = (0.5, 3.0, 7.5, 15.0)
    miss_value: float = 20.0

    def __post_init__(self):
        r = self.radii
        if len(r) != len(self.midpoints) or not r or r[0] <= 0:
            raise ValueError("need one midpoint per ring and a positive first radius")
        if any(b <= a for a, b in zip(r, r[1:])):
            raise ValueError("ring radii must be strictly increasing")


def classify_insertion(offset, rings=DetectorRings()):
    """1-based ring index for a planar offset, or ``None`` for a miss.

    A landing exactly on a ring's radius belongs to the next ring out.
    """
    d = float(np.hypot(*np.asarray(offset, dtype=np.float64)[:2]))
    if not np.isfinite(d):
        return None
    for j, r in enumerate(rings.radii, start=1):
        if d < r:
            return j
    return None


@dataclass(frozen=True, eq=False)
class TrialResult:
    trial: int
    offset: np.ndarray
    ring: int | None
    mode: str = ""


@dataclass(frozen=True)
class AccuracyReport:
    ring_counts: tuple
    misses: int
    high_accuracy_rate: float
    average_deviation: float
    trials: int
    mode: str | None = None
    seed: int | None = None

    def to_dict(self):
        return {
            "ring_counts": list(self.ring_counts),
            "misses": self.misses,
            "high_accuracy_rate_pct": self.high_accuracy_rate,
            "average_deviation_mm": self.average_deviation,
            "mode": self.mode,
            "trials": self.trials,
            "seed": self.seed,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def summarize_counts(ring_counts, misses=0, rings=DetectorRings(), mode=None, seed=None):
    counts = tuple(int(c) for c in ring_counts)
    if len(counts) != len(rings.radii):
        raise ValueError(f"expected {len(rings.radii)} ring counts, got {len(counts)}")
    total = sum(counts) + int(misses)
    if total == 0:
        raise ValueError("cannot summarize zero trials")
    dev = (sum(c * m for c, m in zip(counts, rings.midpoints)) + misses * rings.miss_value) / total
    return AccuracyReport(counts, int(misses), 100.0 * counts[0] / total, dev, total, mode, seed)


def summarize(results, rings=DetectorRings(), mode=None, seed=None):
    """High-accuracy rate and midpoint-model average deviation of a trial batch."""
    results = list(results)
    if not results:
        raise ValueError("cannot summarize an empty result list")
    counts = [0] * len(rings.radii)
    misses = 0
    for r in sorted(results, key=lambda r: r.trial):
        if r.ring is None:
            misses += 1
        else:
            counts[r.ring - 1] += 1
    return summarize_counts(counts, misses, rings, mode, seed)


def compare_report(report, reference_counts, reference_misses=0, reference_deviation=None,
                   rings=DetectorRings()):
    """Per-ring, rate and deviation deltas (``report - reference``).

    ``reference_deviation`` overrides the midpoint-model deviation of the
    reference counts, e.g. with a reported value.
    """
    ref = summarize_counts(reference_counts, reference_misses, rings)
    if ref.trials != report.trials:
        raise ValueError(f"trial totals differ: {report.trials} vs {ref.trials}")
    ref_dev = ref.average_deviation if reference_deviation is None else reference_deviation
    return {
        "ring_count_deltas": [a - b for a, b in zip(report.ring_counts, ref.ring_counts)],
        "misses_delta": report.misses - ref.misses,
        "rate_delta_pct": report.high_accuracy_rate - ref.high_accuracy_rate,
        "deviation_delta_mm": report.average_deviation - ref_dev,
    }


# --------------------------------------------------------------------------
# scenario

def look_at(eye, target, up=(0.0, 1.0, 0.0)):
    """Model -> camera transform for a camera at ``eye`` looking at ``target``.

    Camera axes follow the pinhole convention: z forward, x right, y down,
    with ``up`` appearing toward the top of the image.
    """
    eye = np.asarray(eye, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - eye
    z /= np.linalg.norm(z)
    y = -np.asarray(up, dtype=np.float64)
    y = y - np.dot(y, z) * z
    y /= np.linalg.norm(y)
    x = np.cross(y, z)
    R = np.vstack([x, y, z])
    return RigidTransform.from_matrix(R, -R @ eye)


@dataclass(frozen=True, eq=False)
class Scenario:
    """Everything one batch of simulated insertions depends on. Lengths in mm."""

    layout: FiducialLayout
    target: np.ndarray
    camera: CameraIntrinsics
    camera_poses: tuple
    marker_specs: dict
    guidance: Guidance = Guidance.DUAL
    sigma_px: float = 0.0
    sigma_place_mm: float = 0.0
    sigma_hand_mm: float = 0.0
    blind_sigma_mm: float = BLIND_SIGMA_MM
    model_error_mm: float = 0.0
    occlusion: dict = field(default_factory=dict)
    frames: int = 5
    trials: int = 50
    seed: int = 0
    single_marker_id: int | None = None
    tracker: TrackerConfig = TrackerConfig()
    rings: DetectorRings = DetectorRings()

    def __post_init__(self):
        object.__setattr__(self, "guidance", Guidance(self.guidance))
        object.__setattr__(self, "target", np.array(self.target, dtype=np.float64).reshape(3))
        poses = self.camera_poses
        if isinstance(poses, RigidTransform):
            poses = (poses,)
        object.__setattr__(self, "camera_poses", tuple(poses))
        object.__setattr__(self, "occlusion",
                           {int(f): frozenset(int(i) for i in ids) for f, ids in self.occlusion.items()})
        if self.trials < 1 or self.frames < 1:
            raise ValueError("trials and frames must be >= 1")
        for name in ("sigma_px", "sigma_place_mm", "sigma_hand_mm", "blind_sigma_mm", "model_error_mm"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0")
        if not self.camera_poses or len(self.camera_poses) not in (1, self.frames):
            raise ValueError("give one camera pose or one per frame")
        missing = set(self.layout.ids) - set(self.marker_specs)
        if missing:
            raise ValueError(f"no marker spec for layout markers {sorted(missing)}")
        if self.single_marker_id is not None and self.single_marker_id not in self.layout:
            raise ValueError(f"single_marker_id {self.single_marker_id} is not in the layout")

    def camera_pose(self, frame):
        return self.camera_poses[frame if len(self.camera_poses) > 1 else 0]

    def tracked_ids(self):
        if self.guidance is Guidance.SINGLE:
            return (self.layout.ids[0] if self.single_marker_id is None else self.single_marker_id,)
        if self.guidance is Guidance.DUAL:
            return self.layout.ids
        return ()

    def with_(self, **changes):
        return replace(self, **changes)

    # JSON -------------------------------------------------------------

    def to_dict(self):
        return {
            "layout": self.layout.to_dict(),
            "target_mm": [float(x) for x in self.target],
            "camera": self.camera.to_dict(),
            "camera_poses": [{"q": [float(x) for x in p.rotation], "t": [float(x) for x in p.translation]}
                             for p in self.camera_poses],
            "markers": [{"id": s.id, "side_length_mm": s.side_length}
                        for _, s in sorted(self.marker_specs.items())],
            "guidance": self.guidance.value,
            "sigma_px": self.sigma_px,
            "sigma_place_mm": self.sigma_place_mm,
            "sigma_hand_mm": self.sigma_hand_mm,
            "blind_sigma_mm": self.blind_sigma_mm,
            "model_error_mm": self.model_error_mm,
            "occlusion": {str(f): sorted(ids) for f, ids in sorted(self.occlusion.items())},
            "frames": self.frames,
            "trials": self.trials,
            "seed": self.seed,
            "single_marker_id": self.single_marker_id,
            "tracker": {"t_miss": self.tracker.t_miss, "beta": self.tracker.beta,
                        "auto_disable": self.tracker.auto_disable},
            "rings": {"radii_mm": list(self.rings.radii), "midpoints_mm": list(self.rings.midpoints),
                      "miss_value_mm": self.rings.miss_value},
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d):
        poses = tuple(RigidTransform(p["q"], p["t"]) for p in d["camera_poses"])
        tracker = TrackerConfig(**d.get("tracker", {}))
        rings = d.get("rings")
        rings = DetectorRings() if rings is None else DetectorRings(
            tuple(rings["radii_mm"]), tuple(rings["midpoints_mm"]), rings.get("miss_value_mm", 20.0))
        return cls(
            layout=FiducialLayout.from_dict(d["layout"]),
            target=d["target_mm"],
            camera=CameraIntrinsics.from_dict(d["camera"]),
            camera_poses=poses,
            marker_specs={int(m["id"]): MarkerSpec(int(m["id"]), float(m["side_length_mm"]))
                          for m in d["markers"]},
            guidance=Guidance(d.get("guidance", "DualMarker")),
            sigma_px=float(d.get("sigma_px", 0.0)),
            sigma_place_mm=float(d.get("sigma_place_mm", 0.0)),
            sigma_hand_mm=float(d.get("sigma_hand_mm", 0.0)),
            blind_sigma_mm=float(d.get("blind_sigma_mm", BLIND_SIGMA_MM)),
            model_error_mm=float(d.get("model_error_mm", 0.0)),
            occlusion=d.get("occlusion", {}),
            frames=int(d.get("frames", 5)),
            trials=int(d.get("trials", 50)),
            seed=int(d.get("seed", 0)),
            single_marker_id=d.get("single_marker_id"),
            tracker=tracker,
            rings=rings,
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def default_scenario(guidance=Guidance.DUAL, **overrides):
    """Two 60 mm markers 100 mm apart on the phantom's back, target 30 mm deep.

    A 1920x1080 camera (fx = 1400 px) sits 350 mm away, tilted 30 degrees
    off vertical.
    """
    layout = FiducialLayout({
        1: RigidTransform([1.0, 0.0, 0.0, 0.0], [-50.0, 0.0, 0.0]),
        2: RigidTransform([1.0, 0.0, 0.0, 0.0], [50.0, 0.0, 0.0]),
    })
    tilt = math.radians(30.0)
    eye = (0.0, -350.0 * math.sin(tilt), 350.0 * math.cos(tilt))
    kwargs = dict(
        layout=layout,
        target=(0.0, 0.0, -30.0),
        camera=CameraIntrinsics(1400.0, 1400.0, 960.0, 540.0, 1920, 1080),
        camera_poses=(look_at(eye, (0.0, 0.0, 0.0)),),
        marker_specs={1: MarkerSpec(1, 60.0), 2: MarkerSpec(2, 60.0)},
        guidance=Guidance(guidance),
    )
    kwargs.update(overrides)
    return Scenario(**kwargs)


# --------------------------------------------------------------------------
# trials

def trial_rng(seed, trial):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(trial)])))


def _aim(sc, place, pixel, trial):
    """Overlay-predicted target in the model frame, or None with no active marker."""
    ids = sc.layout.ids
    # where the stickers actually ended up, in the model frame
    placed = {}
    for mid in ids:
        nominal = sc.layout[mid]
        shift = nominal.matrix @ np.array([place[mid][0], place[mid][1], 0.0])
        placed[mid] = RigidTransform(nominal.rotation, nominal.translation + shift)

    tracked = sc.tracked_ids()
    specs = {mid: sc.marker_specs[mid] for mid in tracked}
    layout = sc.layout if len(tracked) == 2 else sc.layout.subset(tracked)
    registry = new_registry(specs)
    cam = sc.camera
    for f in range(sc.frames):
        T = sc.camera_pose(f)
        hidden = sc.occlusion.get(f, frozenset())
        observations = []
        for k, mid in enumerate(ids):
            if mid not in specs or mid in hidden:
                continue
            pts = T.compose(placed[mid]).apply(marker_corners(specs[mid].side_length))
            if np.any(pts[:, 2] <= 0):
                continue
            uv = cam.project(pts) + pixel[f, k]
            if cam.contains(uv):
                observations.append(MarkerObservation(f, mid, uv))
        registry, events = tracker_step(registry, sc.tracker, observations, specs, cam, frame=f)
        for ev in events:
            log.debug("trial %d frame %d: marker %d %s", trial, f, ev.id, ev.kind)

    overlay = overlay_step(registry, layout)
    if overlay.mode is OverlayMode.NONE:
        return None, overlay.mode
    aim_cam = overlay.transform.apply(sc.target)
    return sc.camera_pose(sc.frames - 1).inverse().apply(aim_cam), overlay.mode


def _run_one(sc, trial, cache=None):
    rng = trial_rng(sc.seed, trial)
    ids = sc.layout.ids
    place = {mid: rng.standard_normal(2) * sc.sigma_place_mm for mid in ids}
    pixel = rng.standard_normal((sc.frames, len(ids), 4, 2)) * sc.sigma_px
    hand = rng.standard_normal(2) * sc.sigma_hand_mm
    bias_angle = rng.uniform(0.0, 2.0 * math.pi)
    blind = rng.standard_normal(2) * sc.blind_sigma_mm

    if sc.guidance is Guidance.BASELINE:
        return TrialResult(trial, blind, classify_insertion(blind, sc.rings), "Baseline")

    if cache is not None and "aim" in cache:
        landing, mode = cache["aim"]
    else:
        landing, mode = _aim(sc, place, pixel, trial)
        if cache is not None:
            cache["aim"] = (landing, mode)
    if landing is None:
        log.info("trial %d: no active marker, recorded as a miss", trial)
        return TrialResult(trial, np.array([np.nan, np.nan]), None, mode.value)
    bias = sc.model_error_mm * np.array([math.cos(bias_angle), math.sin(bias_angle)])
    offset = (landing - sc.target)[:2] + bias + hand
    return TrialResult(trial, offset, classify_insertion(offset, sc.rings), mode.value)


def run_trials(scenario, trials=None):
    """Run ``scenario.trials`` insertions (or the given trial indices)."""
    idx = range(scenario.trials) if trials is None else trials
    # without placement or pixel noise the tracked chain is the same every
    # trial, so it only needs computing once
    noiseless = scenario.sigma_px == 0 and scenario.sigma_place_mm == 0
    cache = {} if noiseless else None
    return [_run_one(scenario, int(i), cache) for i in idx]
