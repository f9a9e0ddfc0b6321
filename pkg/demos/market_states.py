"""Walk through state detection on the bundled three-regime market.

Prices are simulated, turned into locally normalized returns, and summarized
as sector-averaged correlation matrices over a 42-day window. Bisecting
k-means then groups those matrices into market states, which are compared
with the regime labels used to generate the data.

    python demos/market_states.py [out_dir]
"""
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from quasistates import clustering as cl  # noqa: E402
from quasistates import correlation as corr  # noqa: E402
from quasistates import ingest, synth  # noqa: E402

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)

scenario = synth.three_regime(seed=0)
data = synth.generate(scenario)
returns = ingest.local_normalize(ingest.compute_returns(data.prices, 1), 13)
states = corr.state_points(returns, data.sectors, 42, 1)
print(f"{len(states.coords)} state points in {states.coords.shape[1]} dimensions")

model = cl.bisecting_kmeans(states, threshold=0.3, seed=0)
timeline = cl.assign_states(states, model)
print(cl.tree_text(model))

# majority regime behind each state, and how pure that state is
truth = synth.window_truth(data.labels, states.t_start, states.t_end)
for state in model.leaves:
    members = truth[timeline.states == state]
    regime = np.bincount(members).argmax()
    print(f"state {state}: {len(members)} windows, "
          f"{np.mean(members == regime):.0%} from regime {scenario.regimes[regime].name}")

fig, (top, bottom) = plt.subplots(2, 1, figsize=(9, 5), sharex=True)
top.plot(states.t_end, truth, drawstyle="steps-post")
top.set_ylabel("regime")
bottom.plot(states.t_end, timeline.states, ".", markersize=2)
bottom.set_ylabel("state")
bottom.set_xlabel("day")
fig.tight_layout()
fig.savefig(out / "market_states.png", dpi=120)
print(f"wrote {out / 'market_states.png'}")
