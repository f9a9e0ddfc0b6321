"""Reconstruct a drift and potential from an Ornstein-Uhlenbeck path.

The drift comes from kernel-weighted conditional increments and the potential
is its negative integral. For a linear drift the estimate should be a
parabola whose vertex sits at the process level.

    python demos/potentials.py [out_dir]
"""
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from quasistates import langevin as lv  # noqa: E402

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)

params = lv.OUParams(gamma=0.05, level=1.5, noise=0.01, x0=1.5, n_points=50_000, seed=3)
path = lv.simulate_ou(params)
curve = lv.potential(path)
deepest = curve.deepest()
print(f"bandwidth {lv.silverman_bandwidth(path):.4f}")
print(f"deepest minimum at {deepest.x:.4f} (level {params.level})")

# the same path seen through sliding windows
curves = lv.sliding_potentials(path, window=5000, shift=2500)
found = [c.deepest().x for c in curves if not c.failed and c.minima]
print(f"{len(found)} of {len(curves)} windows report a minimum; "
      f"range {min(found):.3f} .. {max(found):.3f}")

fig, (left, right) = plt.subplots(1, 2, figsize=(10, 4))
left.plot(curve.grid, curve.d1, label="estimated D1")
left.plot(curve.grid, -params.gamma * (curve.grid - params.level), "--", label="true D1")
left.legend()
right.plot(curve.grid, curve.phi)
right.axvline(deepest.x, color="k", lw=0.8)
right.set_title("potential")
fig.tight_layout()
fig.savefig(out / "potentials.png", dpi=120)
print(f"wrote {out / 'potentials.png'}")
