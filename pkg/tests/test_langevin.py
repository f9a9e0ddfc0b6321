import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quasistates import langevin as lv
from quasistates.errors import ConfigurationError, EstimationError, InsufficientDataError


def ou(n=100_000, seed=0, gamma=0.5, level=1.9, noise=0.1, dt=1.0):
    return lv.simulate_ou(lv.OUParams(gamma, level, noise, level, dt, n, seed))


def curve_of(grid, phi):
    grid = np.asarray(grid, dtype=float)
    z = np.zeros_like(grid)
    return lv.PotentialCurve(grid, np.asarray(phi, dtype=float), z, z, z)


def drift_of(grid, d1, valid=None, counts=None):
    grid = np.asarray(grid, dtype=float)
    valid = np.ones(len(grid), bool) if valid is None else np.asarray(valid)
    counts = np.full(len(grid), 100.0) if counts is None else np.asarray(counts, float)
    return lv.DriftEstimate(grid, np.asarray(d1, float), np.zeros(len(grid)), counts, valid, 0.1)


class TestConditionalMoments:
    def test_constant_series(self):
        mg = lv.conditional_moments(np.full(50, 0.7), (1, 2), (1,), [0.6, 0.7, 0.8], 0.5)
        assert np.all(mg.moment(1, 1) == 0) and np.all(mg.moment(2, 1) == 0)

    def test_decay_map(self):
        x = 10.0 * 0.9 ** np.arange(300)
        grid = np.linspace(1.0, 8.0, 15)
        h = 0.3
        m1 = lv.conditional_moments(x, 1, 1, grid, h).moment(1, 1)
        # M1 is -0.1 times a kernel average of visited states, all within h of x
        assert np.all(np.abs(m1 + 0.1 * grid) <= 0.1 * h)

    def test_wide_kernel_is_plain_average(self, frozen):
        case = frozen["moments"]
        x = np.array(case["series"])
        mg = lv.conditional_moments(x, (1, 2), 1, case["grid"], 1e6 * np.ptp(x))
        np.testing.assert_allclose(mg.moment(1, 1), case["m1"], atol=1e-10)
        np.testing.assert_allclose(mg.moment(2, 1), case["m2"], atol=1e-10)
        np.testing.assert_allclose(mg.moment(1, 1), case["binned_m1"], atol=1e-10)

    @given(st.integers(0, 10_000))
    @settings(max_examples=20)
    def test_infinite_bandwidth_limit(self, seed):
        x = np.random.default_rng(seed).normal(size=300)
        mg = lv.conditional_moments(x, (1, 2), (1, 2), lv.default_grid(x, 11), 1e8 * np.ptp(x))
        for tau in (1, 2):
            inc = x[tau:len(x) - 2 + tau] - x[:len(x) - 2]
            np.testing.assert_allclose(mg.moment(1, tau), inc.mean(), rtol=1e-6, atol=1e-12)
            np.testing.assert_allclose(mg.moment(2, tau), (inc ** 2).mean(), rtol=1e-6)

    def test_unsupported_grid_point_is_masked(self):
        x = np.random.default_rng(0).uniform(0, 1, 200)
        mg = lv.conditional_moments(x, 1, 1, [0.5, 5.0], 0.1)
        assert mg.counts[1] == 0 and np.isnan(mg.moment(1, 1)[1])
        assert np.isfinite(mg.moment(1, 1)[0])

    def test_argument_checks(self):
        x = np.arange(10.0)
        with pytest.raises(ConfigurationError):
            lv.conditional_moments(x, 3, 1, [1.0], 1.0)
        with pytest.raises(InsufficientDataError):
            lv.conditional_moments(x, 1, 10, [1.0], 1.0)
        with pytest.raises(ConfigurationError):
            lv.conditional_moments(x, 1, 1, [2.0, 1.0], 1.0)
        with pytest.raises(ConfigurationError):
            lv.conditional_moments(x, 1, 1, [1.0], 0.0)


class TestEstimateDrift:
    def test_ou_single_seed(self):
        est = lv.estimate_drift(ou(seed=3))
        g = est.grid
        central = est.valid & (g >= np.quantile(g, 0.25)) & (g <= np.quantile(g, 0.75))
        slope, icpt = np.polyfit(g[central], est.d1[central], 1)
        assert slope == pytest.approx(-0.5, rel=0.1)
        assert -icpt / slope == pytest.approx(1.9, abs=0.05)
        assert np.median(est.d2[central]) == pytest.approx(0.1, rel=0.15)

    def test_extrapolate_policy_runs(self):
        est = lv.estimate_drift(ou(20_000, seed=1), tau_policy="extrapolate")
        assert est.valid.any() and np.all(np.isfinite(est.d1[est.valid]))

    def test_white_noise_has_no_drift(self):
        # pooled over 20 random walks; a Gaussian estimate lands within 2 SE 95.4% of the time
        inside, total = 0, 0
        for seed in range(20):
            x = np.cumsum(np.random.default_rng(seed).standard_normal(10_000))
            est = lv.estimate_drift(x)
            start, inc = x[:-1], np.diff(x)
            w = lv.epanechnikov(est.grid[:, None] - start[None, :], est.bandwidth)
            n_eff = w.sum(axis=1) ** 2 / (w ** 2).sum(axis=1)
            se = inc.std() / np.sqrt(n_eff)
            inside += int(np.sum(np.abs(est.d1[est.valid]) <= 2 * se[est.valid]))
            total += int(est.valid.sum())
        assert inside / total >= 0.9

    def test_short_series(self):
        with pytest.raises(InsufficientDataError):
            lv.estimate_drift(np.arange(50.0))

    def test_grid_outside_data(self):
        with pytest.raises(ConfigurationError):
            lv.estimate_drift(ou(1000), grid=np.linspace(0, 10, 11))

    def test_unknown_policy(self):
        with pytest.raises(ConfigurationError):
            lv.estimate_drift(ou(1000), tau_policy="tau0")

    def test_no_support_anywhere(self):
        with pytest.raises(EstimationError):
            lv.estimate_drift(ou(1000), count_min=1e9)

    @given(st.floats(0.2, 20.0), st.floats(-5.0, 5.0))
    @settings(max_examples=25)
    def test_affine_equivariance(self, a, b):
        x = ou(5000, seed=7)
        grid = lv.default_grid(x)
        h = lv.silverman_bandwidth(x)
        ex = lv.estimate_drift(x, grid, h)
        ey = lv.estimate_drift(a * x + b, a * grid + b, a * h)
        assert np.array_equal(ex.valid, ey.valid)
        v = ex.valid
        np.testing.assert_allclose(ey.d1[v], a * ex.d1[v], rtol=1e-8, atol=1e-8 * a)
        np.testing.assert_allclose(ey.d2[v], a * a * ex.d2[v], rtol=1e-8, atol=1e-8 * a * a)

    @given(st.floats(0.2, 20.0), st.floats(-5.0, 5.0))
    @settings(max_examples=15)
    def test_minima_follow_affine_map(self, a, b):
        x = ou(5000, seed=8)
        px = lv.potential(x)
        py = lv.potential(a * x + b)
        assert len(px.minima) == len(py.minima)
        for mx, my in zip(px.minima, py.minima):
            assert my.x == pytest.approx(a * mx.x + b, rel=1e-8, abs=1e-8 * a)


class TestIntegratePotential:
    def test_parabola(self):
        grid = np.linspace(0.5, 3.0, 101)
        curve = lv.integrate_potential(drift_of(grid, -0.5 * (grid - 1.9)))
        exact = 0.25 * (grid - 1.9) ** 2
        np.testing.assert_allclose(curve.phi, exact - exact[0], atol=1e-12)
        assert curve.phi[0] == 0.0

    def test_zero_drift(self):
        grid = np.linspace(0, 1, 101)
        assert np.all(lv.integrate_potential(drift_of(grid, np.zeros(101))).phi == 0)

    @given(st.integers(0, 10_000))
    def test_random_drift_round_trip(self, seed):
        rng = np.random.default_rng(seed)
        grid = np.linspace(0, rng.uniform(0.1, 5), 101)
        d1 = rng.normal(size=101)
        phi = lv.integrate_potential(drift_of(grid, d1)).phi
        slope = np.diff(phi) / np.diff(grid)
        np.testing.assert_allclose(slope, -(d1[1:] + d1[:-1]) / 2, atol=1e-10)
        # undo the trapezoid rule point by point: every interior D1 comes back
        back = np.empty(101)
        back[0] = d1[0]
        for i in range(100):
            back[i + 1] = -2 * slope[i] - back[i]
        np.testing.assert_allclose(back[1:-1], d1[1:-1], atol=1e-10)

    def test_heaviest_block_is_used(self):
        grid = np.linspace(0, 1, 30)
        valid = np.r_[np.ones(12, bool), np.zeros(3, bool), np.ones(15, bool)]
        counts = np.r_[np.full(12, 500.0), np.zeros(3), np.full(15, 20.0)]
        curve = lv.integrate_potential(drift_of(grid, np.zeros(30), valid, counts))
        assert len(curve.grid) == 12 and curve.discarded == ((15, 29),)

    def test_short_block(self):
        valid = np.r_[np.ones(4, bool), np.zeros(6, bool)]
        with pytest.raises(EstimationError):
            lv.integrate_potential(drift_of(np.arange(10.0), np.zeros(10), valid))


class TestFindMinima:
    def test_parabola_vertex(self):
        grid = np.linspace(-1, 2, 31)
        minima = lv.find_minima(curve_of(grid, (grid - 0.4) ** 2))
        assert len(minima) == 1 and minima[0].x == pytest.approx(0.4)

    def test_double_well(self):
        grid = np.linspace(-2, 2, 101)
        minima = lv.find_minima(curve_of(grid, (grid ** 2 - 1) ** 2))
        assert [round(m.x, 6) for m in minima] == [-1.0, 1.0]

    def test_plateau_with_ripple(self):
        grid = np.linspace(0, 1, 101)
        for seed in range(20):
            ripple = 1e-3 * np.random.default_rng(seed).standard_normal(101)
            walls = 50 * np.clip(np.abs(grid - 0.5) - 0.3, 0, None) ** 2
            minima = lv.find_minima(curve_of(grid, walls + ripple), prominence_min=0.05)
            assert len(minima) <= 1

    def test_flat_curve(self):
        assert lv.find_minima(curve_of(np.arange(5.0), np.zeros(5))) == []

    def test_deepest_is_most_prominent(self):
        grid = np.linspace(-2, 2, 101)
        phi = (grid ** 2 - 1) ** 2 + 0.3 * grid
        curve = lv.PotentialCurve(grid, phi, grid, grid, grid,
                                  minima=tuple(lv.find_minima(curve_of(grid, phi))))
        assert curve.deepest().x < 0


class TestSlidingPotentials:
    def test_window_count(self, frozen):
        x = ou(5135, seed=2)
        curves = lv.sliding_potentials(x, 1000, 21)
        assert len(curves) == frozen["counts"]["potential_windows"] == 197
        assert curves[0].window == (0, 999) and curves[-1].window == (4116, 5115)

    def test_single_window(self):
        assert len(lv.sliding_potentials(ou(1000), 1000, 21)) == 1

    def test_level_switch(self):
        first = lv.simulate_ou(lv.OUParams(0.5, 1.0, 0.01, 1.0, 1.0, 2000, 4))
        second = lv.simulate_ou(lv.OUParams(0.5, 2.0, 0.01, 2.0, 1.0, 2000, 5))
        curves = lv.sliding_potentials(np.r_[first, second], 1000, 21)
        starts = np.arange(0, 3001, 21)
        for s, c in zip(starts, curves):
            if s + 1000 <= 2000:
                assert c.deepest().x == pytest.approx(1.0, abs=0.1)
            elif s >= 2000:
                assert c.deepest().x == pytest.approx(2.0, abs=0.1)

    def test_failed_window_is_flagged(self):
        x = np.r_[ou(1200, seed=6), np.full(1000, 3.0)]
        curves = lv.sliding_potentials(x, 1000, 100)
        assert not curves[0].failed
        assert curves[-1].failed and curves[-1].message and len(curves[-1].phi) == 0
        assert len(curves) == (2200 - 1000) // 100 + 1

    def test_too_short(self):
        with pytest.raises(InsufficientDataError):
            lv.sliding_potentials(np.arange(10.0), 1000, 21)

    def test_convergence_with_length(self):
        errors = {}
        for n in (10_000, 100_000):
            errors[n] = np.median([abs(lv.potential(ou(n, seed=s)).deepest().x - 1.9)
                                   for s in range(20)])
        assert errors[100_000] <= 0.5 * errors[10_000]


class TestSimulateOU:
    def test_no_noise_at_level(self):
        x = lv.simulate_ou(lv.OUParams(0.5, 1.9, 0.0, 1.9, 1.0, 50, 0))
        assert np.all(x == 1.9)

    def test_deterministic_decay(self):
        gamma, dt, n = 0.5, 0.01, 1001
        x = lv.simulate_ou(lv.OUParams(gamma, 1.0, 0.0, 2.0, dt, n, 0))
        t = dt * np.arange(n)
        # one Euler step is off by (gamma dt)^2 / 2; errors add up over the path
        bound = np.arange(n) * (gamma * dt) ** 2 / 2
        assert np.all(np.abs(x - 1.0 - np.exp(-gamma * t)) <= bound + 1e-15)

    def test_stationary_variance(self):
        gamma, noise = 0.5, 0.1
        for seed in range(20):
            x = lv.simulate_ou(lv.OUParams(gamma, 0.0, noise, 0.0, 0.01, 1_000_000, seed))
            assert x[10_000:].var() == pytest.approx(noise / gamma, rel=0.1)

    def test_seeded(self):
        p = lv.OUParams(0.5, 1.0, 0.1, 1.0, 1.0, 100, 9)
        assert np.array_equal(lv.simulate_ou(p), lv.simulate_ou(p))

    @pytest.mark.parametrize("kw", [dict(gamma=0.0), dict(dt=0.0), dict(noise=-1.0)])
    def test_invalid(self, kw):
        base = dict(gamma=0.5, level=1.0, noise=0.1, x0=1.0)
        with pytest.raises(ConfigurationError):
            lv.OUParams(**{**base, **kw})


def test_silverman_rule():
    x = np.random.default_rng(0).normal(size=1000)
    assert lv.silverman_bandwidth(x) == pytest.approx(1.06 * x.std(ddof=1) * 1000 ** -0.2)
    assert math.isclose(float(lv.epanechnikov(0.0, 2.0)), 0.375)
