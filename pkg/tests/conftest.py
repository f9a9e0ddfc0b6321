import json
import time
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from quasistates import clustering as cl
from quasistates import correlation as corr
from quasistates import ingest, synth

settings.register_profile(
    "repo", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("repo")

ROOT = Path(__file__).resolve().parents[1]
ORACLES = Path(__file__).with_name("oracles") / "frozen.json"
SEEDS = tuple(range(20))

# filled by tests/test_acceptance.py, printed at the end of the session
ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def frozen():
    return json.loads(ORACLES.read_text(encoding="utf-8"))


def pipeline_points(scenario):
    data = synth.generate(scenario)
    returns = ingest.compute_returns(data.prices, 1)
    normalized = ingest.local_normalize(returns, 13)
    states = corr.state_points(normalized, data.sectors, 42, 1)
    truth = synth.window_truth(data.labels, states.t_start, states.t_end)
    return data, states, truth


class Run:
    """One seeded synthetic dataset pushed through ingest -> correlate -> cluster."""

    def __init__(self, scenario):
        self.scenario = scenario
        self.data, self.states, self.truth = pipeline_points(scenario)
        self.model = cl.bisecting_kmeans(self.states, scenario.extra["threshold"],
                                         seed=scenario.seed)
        # leaf holding most of each regime's points
        self.regime_leaf = {
            k: int(np.bincount(self.model.labels[self.truth == k]).argmax())
            for k in range(len(scenario.regimes))
        }

    def regime_mean(self, k):
        return self.states.coords[self.truth == k].mean(axis=0)

    def separation(self):
        n = len(self.scenario.regimes)
        means = [self.regime_mean(k) for k in range(n)]
        return min(np.linalg.norm(means[a] - means[b]) for a in range(n) for b in range(a + 1, n))

    def spread(self):
        return max(
            np.linalg.norm(self.states.coords[self.truth == k] - self.regime_mean(k), axis=1).mean()
            for k in range(len(self.scenario.regimes))
        )


class RunSet(dict):
    elapsed = 0.0  # wall time of building every run


@pytest.fixture(scope="session")
def three_regime_runs():
    start = time.perf_counter()
    runs = RunSet((seed, Run(synth.three_regime(seed))) for seed in SEEDS)
    runs.elapsed = time.perf_counter() - start
    return runs


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
