import math

import numpy as np
import pytest

from spinenav.simulator import (
    BLIND_SIGMA_MM,
    REFERENCE_COLUMNS,
    DetectorRings,
    Guidance,
    Scenario,
    classify_insertion,
    compare_report,
    default_scenario,
    run_trials,
    summarize,
    summarize_counts,
)


@pytest.mark.parametrize("r, ring", [(0.3, 1), (1.0, 2), (4.999, 2), (5.0, 3), (19.99, 4), (20.0, None), (25.0, None)])
def test_ring_boundaries(r, ring):
    assert classify_insertion([r, 0.0]) == ring
    assert classify_insertion([0.0, -r]) == ring


def test_summarize_smoothed_dual_column():
    rep = summarize_counts((30, 15, 5, 0))
    assert rep.high_accuracy_rate == 60.0
    assert rep.average_deviation == pytest.approx((30 * 0.5 + 15 * 3 + 5 * 7.5) / 50)
    assert rep.average_deviation == pytest.approx(1.95)


def test_summarize_blind_and_perfect():
    assert summarize_counts((10, 18, 12, 10)).high_accuracy_rate == 20.0
    rep = summarize_counts((50, 0, 0, 0))
    assert (rep.high_accuracy_rate, rep.average_deviation) == (100.0, 0.5)


def test_miss_contributes_twenty():
    rep = summarize_counts((1, 0, 0, 0), misses=1)
    assert rep.trials == 2 and rep.average_deviation == pytest.approx(10.25)


def test_compare_report():
    counts = REFERENCE_COLUMNS["single_smoothed_mri"][0]
    d = compare_report(summarize_counts(counts), counts)
    assert d == {"ring_count_deltas": [0, 0, 0, 0], "misses_delta": 0, "rate_delta_pct": 0.0,
                 "deviation_delta_mm": 0.0}
    d = compare_report(summarize_counts((31, 14, 5, 0)), REFERENCE_COLUMNS["dual_smoothed_mri"][0],
                       reference_deviation=1.9)
    assert d["ring_count_deltas"] == [1, -1, 0, 0]
    assert d["rate_delta_pct"] == pytest.approx(2.0)
    assert d["deviation_delta_mm"] == pytest.approx((31 * 0.5 + 14 * 3 + 5 * 7.5) / 50 - 1.9)


def test_report_json_keys():
    rep = summarize_counts((1, 2, 3, 4), mode="Baseline", seed=3)
    assert set(rep.to_dict()) == {"ring_counts", "misses", "high_accuracy_rate_pct",
                                  "average_deviation_mm", "mode", "trials", "seed"}


def test_blind_sigma_calibration():
    assert 1 - math.exp(-1 / (2 * BLIND_SIGMA_MM ** 2)) == pytest.approx(0.2)


@pytest.mark.parametrize("guidance", ["SingleMarker", "DualMarker"])
def test_noiseless_guided_chain_is_exact(guidance):
    sc = default_scenario(guidance, trials=10)
    results = run_trials(sc)
    assert all(r.ring == 1 for r in results)
    assert max(np.hypot(*r.offset) for r in results) < 1e-9
    rep = summarize(results)
    assert (rep.high_accuracy_rate, rep.average_deviation) == (100.0, 0.5)


def test_same_seed_same_results():
    sc = default_scenario("DualMarker", sigma_px=0.5, sigma_place_mm=1.0, sigma_hand_mm=1.0, trials=8, seed=11)
    a, b = run_trials(sc), run_trials(sc)
    assert [(r.trial, r.ring, r.mode) for r in a] == [(r.trial, r.ring, r.mode) for r in b]
    assert all(np.array_equal(x.offset, y.offset) for x, y in zip(a, b))
    assert summarize(a, seed=11).to_json() == summarize(b, seed=11).to_json()


def test_trials_are_order_independent():
    sc = default_scenario("SingleMarker", sigma_px=0.5, sigma_place_mm=1.0, trials=6, seed=2)
    fwd = run_trials(sc)
    rev = run_trials(sc, trials=reversed(range(6)))
    for r in rev:
        assert np.array_equal(r.offset, fwd[r.trial].offset)


def test_rayleigh_ring_one_fraction():
    sc = default_scenario("DualMarker", sigma_hand_mm=2.0, trials=100_000)
    frac = np.mean([r.ring == 1 for r in run_trials(sc)])
    assert abs(frac - (1 - math.exp(-1 / 8))) < 0.01


def test_hand_noise_scales_offsets():
    base = default_scenario("SingleMarker", trials=200, seed=5)
    means = [np.mean([np.hypot(*r.offset) for r in run_trials(base.with_(sigma_hand_mm=s))])
             for s in (0.5, 1.0, 2.0, 4.0)]
    assert means == sorted(means)


def test_model_error_is_a_fixed_length_bias():
    sc = default_scenario("DualMarker", model_error_mm=2.5, trials=20)
    assert all(abs(np.hypot(*r.offset) - 2.5) < 1e-9 for r in run_trials(sc))


def test_occlusion_falls_back_to_single():
    sc = default_scenario("DualMarker", trials=2, occlusion={f: {2} for f in range(5)})
    assert {r.mode for r in run_trials(sc)} == {"Single"}


def test_fully_occluded_is_a_miss():
    sc = default_scenario("SingleMarker", trials=3, occlusion={f: {1} for f in range(5)})
    results = run_trials(sc)
    assert all(r.ring is None for r in results)
    assert summarize(results).misses == 3


def test_blind_reference_scenario_near_reference_rate():
    rep = summarize(run_trials(default_scenario("Baseline", trials=50, seed=0)))
    assert abs(rep.high_accuracy_rate - 20.0) <= 6.0


def test_scenario_json_round_trip():
    sc = default_scenario("SingleMarker", sigma_px=0.3, occlusion={2: {1}}, seed=4)
    back = Scenario.from_json(sc.to_json())
    assert back.to_json() == sc.to_json()
    assert back.guidance is Guidance.SINGLE


@pytest.mark.parametrize("bad", [dict(trials=0), dict(sigma_px=-1.0), dict(frames=0)])
def test_scenario_validation(bad):
    with pytest.raises(ValueError):
        default_scenario("DualMarker", **bad)


def test_custom_rings():
    rings = DetectorRings((2.0, 4.0), (1.0, 3.0), 6.0)
    assert classify_insertion([1.5, 0], rings) == 1
    assert summarize_counts((1, 1), 0, rings).average_deviation == 2.0
