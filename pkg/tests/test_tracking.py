import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import marker_corner_points, project, random_facing_pose
from spinenav.geometry import RigidTransform, rotation_angle
from spinenav.tracking import (
    CameraIntrinsics,
    MarkerObservation,
    MarkerSpec,
    PoseEstimationError,
    TrackerConfig,
    estimate_marker_pose,
    marker_corners,
    new_registry,
    parse_observations,
    replay,
    smooth_pose,
    tracker_step,
)

CAM = CameraIntrinsics(800.0, 800.0, 640.0, 640.0, 1280, 1280)
SPEC = MarkerSpec(1, 50.0)


def observe(R, t, frame=0, mid=1, L=50.0, cam=CAM):
    pts = marker_corner_points(L) @ np.asarray(R).T + t
    return MarkerObservation(frame, mid, project(pts, cam.fx, cam.fy, cam.cx, cam.cy))


def test_corner_order():
    np.testing.assert_array_equal(marker_corners(50.0), marker_corner_points(50.0))


def test_on_axis_marker():
    # identity rotation at 500 mm: 25 mm half-side * 800 / 500 = 40 px
    obs = observe(np.eye(3), np.array([0.0, 0.0, 500.0]))
    np.testing.assert_allclose(obs.corners - 640.0, [[-40, 40], [40, 40], [40, -40], [-40, -40]])
    pose = estimate_marker_pose(obs, SPEC, CAM)
    assert rotation_angle(pose.rotation, [1, 0, 0, 0]) < 1e-9
    np.testing.assert_allclose(pose.translation, [0, 0, 500], atol=1e-6)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_noiseless_round_trip(seed):
    R, t = random_facing_pose(np.random.default_rng(seed))
    pose = estimate_marker_pose(observe(R, t), SPEC, CAM)
    truth = RigidTransform.from_matrix(R, t)
    assert rotation_angle(pose.rotation, truth.rotation) < 1e-6
    assert np.linalg.norm(pose.translation - t) < 1e-6


def test_collinear_corners_rejected():
    obs = MarkerObservation(0, 1, [[600, 600], [620, 620], [640, 640], [660, 660]])
    with pytest.raises(PoseEstimationError):
        estimate_marker_pose(obs, SPEC, CAM)


def test_corners_outside_image_rejected():
    obs = MarkerObservation(0, 1, [[-10, 600], [40, 600], [40, 650], [-10, 650]])
    with pytest.raises(PoseEstimationError):
        estimate_marker_pose(obs, SPEC, CAM)


def test_observation_shape_checked():
    with pytest.raises(ValueError):
        MarkerObservation(0, 1, [[0, 0], [1, 1], [2, 2]])


# --------------------------------------------------------------------------
# pose smoothing

def test_beta_one_returns_measurement():
    a = RigidTransform([1, 0, 0, 0], [0, 0, 0])
    b = RigidTransform([0.9, 0.1, 0.3, 0.0], [1, 2, 3])
    assert smooth_pose(a, b, 1.0) is b


def test_fixed_point():
    a = RigidTransform([0.9, 0.1, 0.3, 0.0], [1, 2, 3])
    out = smooth_pose(a, a, 0.37)
    np.testing.assert_allclose(out.translation, a.translation)
    assert rotation_angle(out.rotation, a.rotation) < 1e-12


def test_translation_midpoint():
    out = smooth_pose(RigidTransform([1, 0, 0, 0], [0, 0, 0]), RigidTransform([1, 0, 0, 0], [10, 0, 0]), 0.5)
    np.testing.assert_allclose(out.translation, [5, 0, 0])


def test_rotation_takes_short_arc():
    q = np.array([np.cos(0.2), 0, 0, np.sin(0.2)])
    a = RigidTransform([1, 0, 0, 0], [0, 0, 0])
    out = smooth_pose(a, RigidTransform(-q, [0, 0, 0]), 0.5)  # same rotation, other hemisphere
    assert rotation_angle(out.rotation, [1, 0, 0, 0]) == pytest.approx(0.2, rel=1e-9)


@pytest.mark.parametrize("beta", [0.0, -0.1, 1.5])
def test_beta_range(beta):
    a = RigidTransform.identity()
    with pytest.raises(ValueError):
        smooth_pose(a, a, beta)


# --------------------------------------------------------------------------
# state machine

def run(frames, config=TrackerConfig(), specs=(SPEC,), R=np.eye(3), t=(0.0, 0.0, 500.0)):
    """Step through ``frames`` (a list of id sets); returns registries and events."""
    reg = new_registry(specs)
    regs, events = [], []
    for f, ids in enumerate(frames):
        obs = [observe(R, np.asarray(t, float) + [60.0 * (i - 1), 0, 0], f, i) for i in sorted(ids)]
        reg, ev = tracker_step(reg, config, obs, specs, CAM, frame=f)
        regs.append(reg)
        events.extend(ev)
    return regs, events


def test_deactivates_after_t_miss():
    regs, events = run([{1}] + [set()] * 5)
    assert [r[1].active for r in regs] == [True, True, True, True, True, False]
    assert [(e.frame, e.kind) for e in events] == [(0, "Activated"), (5, "Deactivated")]


def test_no_auto_disable_freezes_pose():
    regs, events = run([{1}] + [set()] * 100, TrackerConfig(auto_disable=False))
    assert regs[-1][1].active
    assert regs[-1][1].miss_count == 100
    assert regs[-1][1].pose is regs[0][1].pose
    assert [e.kind for e in events] == ["Activated"]


def test_reactivation_uses_raw_pose():
    regs, events = run([{1}] + [set()] * 5 + [{1}])
    assert [e.kind for e in events] == ["Activated", "Deactivated", "Reactivated"]
    assert regs[-1][1].active and regs[-1][1].miss_count == 0


def test_unknown_marker_is_reported_not_tracked():
    reg, ev = tracker_step(new_registry([SPEC]), TrackerConfig(), [observe(np.eye(3), [0, 0, 500.0], 0, 7)],
                           [SPEC], CAM, frame=0)
    assert [e.kind for e in ev] == ["UnknownMarker"]
    assert set(reg) == {1}


def test_estimation_failure_counts_as_miss():
    bad = MarkerObservation(0, 1, [[600, 600], [620, 620], [640, 640], [660, 660]])
    reg, ev = tracker_step(new_registry([SPEC]), TrackerConfig(), [bad], [SPEC], CAM, frame=0)
    assert [e.kind for e in ev] == ["EstimationFailed"]
    assert reg[1].miss_count == 1 and not reg[1].active


def test_converges_monotonically_to_constant_measurement():
    R_true = np.array([[1, 0, 0], [0, np.cos(0.3), -np.sin(0.3)], [0, np.sin(0.3), np.cos(0.3)]])
    t_true = np.array([20.0, -10.0, 450.0])
    truth = RigidTransform.from_matrix(R_true, t_true)
    reg = new_registry([SPEC])
    # start from a deliberately wrong pose
    reg[1] = reg[1].__class__(1, RigidTransform([1, 0, 0, 0], [0, 0, 400.0]), True, 0)
    obs = observe(R_true, t_true)
    d_t, d_r = [], []
    for f in range(30):
        reg, _ = tracker_step(reg, TrackerConfig(beta=0.3), [obs], [SPEC], CAM, frame=f)
        d_t.append(np.linalg.norm(reg[1].pose.translation - t_true))
        d_r.append(rotation_angle(reg[1].pose.rotation, truth.rotation))
    assert all(b < a for a, b in zip(d_t, d_t[1:]))
    assert all(b < a for a, b in zip(d_r, d_r[1:]))
    # translation residual shrinks by exactly (1 - beta) per step
    np.testing.assert_allclose([b / a for a, b in zip(d_t, d_t[1:])], 0.7, rtol=1e-6)
    assert d_r[-1] < 1e-4


def test_config_validation():
    with pytest.raises(ValueError):
        TrackerConfig(t_miss=0)
    with pytest.raises(ValueError):
        TrackerConfig(beta=0.0)


# --------------------------------------------------------------------------
# streams

def test_parse_names_bad_line():
    lines = [json.dumps({"frame": 0, "id": 1, "corners": [[0, 0], [1, 0], [1, 1], [0, 1]]}), "{oops"]
    with pytest.raises(ValueError, match="line 2"):
        parse_observations(lines)


def test_replay_matches_ground_truth():
    rng = np.random.default_rng(3)
    poses = [random_facing_pose(rng, (300, 900)) for _ in range(4)]
    obs = [observe(R, t, f) for f, (R, t) in enumerate(poses)]
    recs = replay(obs, [SPEC], CAM, TrackerConfig(beta=1.0))
    pose_recs = [r for r in recs if "q" in r]
    assert len(pose_recs) == 4
    for rec, (R, t) in zip(pose_recs, poses):
        truth = RigidTransform.from_matrix(R, t)
        assert rotation_angle(rec["q"], truth.rotation) < 1e-6
        np.testing.assert_allclose(rec["t"], t, atol=1e-6)
