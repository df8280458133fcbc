"""Grid search over (k, iterations, alpha) and export of the best meshes.

Runs a reduced grid so it finishes in seconds; swap in ``DEFAULT_GRID`` for
the full 125-triplet search (a couple of minutes on a 10k-vertex mesh).

    python3 demos/grid_search.py [out_dir]
"""

import sys
import tempfile
from pathlib import Path

from spinenav.optimizer import GridSpec, export_best, optimize
from spinenav.synthetic import icosphere, quantize

out_dir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="spinenav-grid-"))

truth = icosphere(4, radius=25.0)
stepped = quantize(truth, 1.0)
spec = GridSpec(k=(8, 16, 32), iterations=(1, 5), alpha=(0.3, 0.5, 1.0), top_n=3)

results = optimize(truth, stepped, spec)
print(f"{len(results)} triplets scored")
for r in results[:5]:
    print(f"  Dice {r.dice:.4f}  k={r.k} iterations={r.iterations} alpha={r.alpha}")
print(f"  ... worst: Dice {results[-1].dice:.4f}  k={results[-1].k} "
      f"iterations={results[-1].iterations} alpha={results[-1].alpha}")

for p in export_best(results, out_dir):
    print("wrote", p)
print("wrote", out_dir / "summary.json")
