"""Simulated needle insertions scored by the detector rings.

Runs blind, single-marker and dual-marker guidance on shared noise and
compares the simulated ring counts with the reference phantom columns.

    python3 demos/insertion_trials.py [trials]
"""

import sys

import numpy as np

from spinenav.simulator import REFERENCE_COLUMNS, compare_report, default_scenario, run_trials, summarize

trials = int(sys.argv[1]) if len(sys.argv) > 1 else 500
noise = dict(sigma_place_mm=1.0, sigma_px=0.5, sigma_hand_mm=1.0, trials=trials, seed=7)

print("reference columns (rings 1-4, rate, deviation):")
for name, (counts, rate, dev) in REFERENCE_COLUMNS.items():
    print(f"  {name:20s} {counts}  {rate:4.0f}%  {dev} mm")

print(f"\nsimulated, {trials} trials per mode:")
reports = {}
for guidance in ("Baseline", "SingleMarker", "DualMarker"):
    results = run_trials(default_scenario(guidance, **noise))
    rep = summarize(results, mode=guidance, seed=7)
    reports[guidance] = rep
    mean = np.mean([np.hypot(*r.offset) for r in results])
    print(f"  {guidance:13s} rings {rep.ring_counts} misses {rep.misses}  "
          f"rate {rep.high_accuracy_rate:5.1f}%  deviation {rep.average_deviation:.2f} mm  "
          f"mean |offset| {mean:.2f} mm")

if trials == 50:
    print("\ndual vs reference dual smoothed-MRI column:")
    print(" ", compare_report(reports["DualMarker"], REFERENCE_COLUMNS["dual_smoothed_mri"][0],
                              reference_deviation=REFERENCE_COLUMNS["dual_smoothed_mri"][2]))
