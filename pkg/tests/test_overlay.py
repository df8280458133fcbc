import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spinenav.geometry import RigidTransform, SimilarityTransform, quat_normalize
from spinenav.overlay import (
    FiducialLayout,
    OverlayMode,
    dual_marker_overlay,
    overlay_step,
    select_mode,
    single_marker_overlay,
)
from spinenav.tracking import TrackedObject


def random_rigid(rng, spread=200.0):
    return RigidTransform(quat_normalize(rng.normal(size=4)), rng.uniform(-spread, spread, 3))


def random_layout(rng):
    # two markers on a curved back: normals within ~30 degrees of +z
    markers = {}
    for mid, x in ((1, -40.0), (2, 40.0)):
        axis = np.array([*rng.normal(size=2), 0.0])
        q = quat_normalize(np.array([np.cos(0.25), *(np.sin(0.25) * axis / np.linalg.norm(axis))]))
        markers[mid] = RigidTransform(q, [x + rng.normal(), rng.normal() * 5, rng.normal() * 5])
    return FiducialLayout(markers)


def close(a, b, tol=1e-9):
    p = np.random.default_rng(0).uniform(-100, 100, (20, 3))
    return np.abs(a.apply(p) - b.apply(p)).max() <= tol * 1e3


def test_modes():
    assert select_mode({1, 2}) is OverlayMode.DUAL
    assert select_mode({1}) is OverlayMode.SINGLE
    assert select_mode(set()) is OverlayMode.NONE
    assert select_mode({1, 9}, (1, 2)) is OverlayMode.SINGLE


def test_single_identity():
    layout = FiducialLayout({1: RigidTransform([1, 0, 0, 0], [10, 20, 30])})
    o = single_marker_overlay(layout[1], 1, layout)
    assert close(o.transform, SimilarityTransform.identity(), 1e-15)
    assert o.mode is OverlayMode.SINGLE and o.transform.scale == 1.0


def test_single_translation_shift():
    layout = FiducialLayout({1: RigidTransform([0.9, 0.1, 0.2, 0.3], [10, 20, 30])})
    delta = np.array([5.0, -3.0, 12.0])
    base = single_marker_overlay(layout[1], 1, layout).transform
    moved = RigidTransform(layout[1].rotation, layout[1].translation + delta)
    shifted = single_marker_overlay(moved, 1, layout).transform
    np.testing.assert_allclose(shifted.translation - base.translation, delta, atol=1e-12)


def test_single_unknown_marker():
    layout = FiducialLayout({1: RigidTransform.identity()})
    with pytest.raises(KeyError):
        single_marker_overlay(RigidTransform.identity(), 2, layout)


def test_dual_identity():
    layout = random_layout(np.random.default_rng(1))
    o = dual_marker_overlay(layout[1], layout[2], layout)
    assert close(o.transform, SimilarityTransform.identity())
    assert o.transform.scale == pytest.approx(1.0, abs=1e-12)


def test_dual_spread_to_twice_reference():
    layout = random_layout(np.random.default_rng(2))
    c1, c2 = layout[1].translation, layout[2].translation
    mid, half = (c1 + c2) / 2, (c2 - c1) / 2
    p1 = RigidTransform(layout[1].rotation, mid - 2 * half)
    p2 = RigidTransform(layout[2].rotation, mid + 2 * half)
    o = dual_marker_overlay(p1, p2, layout)
    assert o.transform.scale == pytest.approx(2.0, rel=1e-12)
    np.testing.assert_allclose(o.transform.apply(mid), mid, atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_overlays_reproduce_scene_motion(seed):
    rng = np.random.default_rng(seed)
    layout, M = random_layout(rng), random_rigid(rng)
    poses = {i: M.compose(layout[i]) for i in layout.ids}
    for i in layout.ids:
        assert close(single_marker_overlay(poses[i], i, layout).transform, M)
    dual = dual_marker_overlay(poses[1], poses[2], layout).transform
    assert close(dual, M)
    assert dual.scale == pytest.approx(1.0, abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from([0.5, 2.0]))
def test_dual_scale_equivariance(seed, f):
    rng = np.random.default_rng(seed)
    layout, M = random_layout(rng), random_rigid(rng)
    poses = [M.compose(layout[i]) for i in layout.ids]
    scaled = [RigidTransform(p.rotation, f * p.translation) for p in poses]
    base = dual_marker_overlay(*poses, layout).transform
    out = dual_marker_overlay(*scaled, layout).transform
    expected = SimilarityTransform([1, 0, 0, 0], [0, 0, 0], f).compose(base)
    assert out.scale == pytest.approx(f * base.scale, rel=1e-12)
    assert close(out, expected)


def test_degenerate_dual_configurations():
    layout = FiducialLayout({1: RigidTransform.identity(), 2: RigidTransform([1, 0, 0, 0], [50, 0, 0])})
    with pytest.raises(ValueError):
        dual_marker_overlay(RigidTransform.identity(), RigidTransform.identity(), layout)
    # normals along the inter-marker axis
    side = RigidTransform([np.cos(np.pi / 4), 0, np.sin(np.pi / 4), 0], [0, 0, 0])
    with pytest.raises(ValueError):
        dual_marker_overlay(side, RigidTransform(side.rotation, [50, 0, 0]), layout)


def test_layout_json_round_trip():
    layout = random_layout(np.random.default_rng(5))
    back = FiducialLayout.from_json(__import__("json").dumps(layout.to_dict()))
    assert back.ids == layout.ids and back.d_ref == pytest.approx(layout.d_ref)
    with pytest.raises(ValueError):
        FiducialLayout(layout.markers, d_ref=layout.d_ref + 1.0)


def test_step_dispatch_dual_single_dual():
    rng = np.random.default_rng(9)
    layout, M = random_layout(rng), random_rigid(rng)
    poses = {i: M.compose(layout[i]) for i in layout.ids}
    both = {i: TrackedObject(i, poses[i], True, 0) for i in layout.ids}
    one = {1: both[1], 2: TrackedObject(2, poses[2], False, 5)}
    modes = [overlay_step(r, layout) for r in (both, one, both)]
    assert [o.mode for o in modes] == [OverlayMode.DUAL, OverlayMode.SINGLE, OverlayMode.DUAL]
    assert close(modes[0].transform, dual_marker_overlay(poses[1], poses[2], layout).transform, 0)
    assert close(modes[1].transform, single_marker_overlay(poses[1], 1, layout).transform, 0)
    assert overlay_step({}, layout).mode is OverlayMode.NONE
