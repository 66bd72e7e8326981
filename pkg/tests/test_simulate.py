import math

import numpy as np
import pytest

from tckls.model import ModelError, RegimeParams, ThresholdModel
from tckls.simulate import (
    Trajectory,
    euler_step,
    read_trajectory_csv,
    simulate_on_grid,
    simulate_path,
    subsample,
    warm_start,
    write_trajectory_csv,
)
from tckls.stationary import build_stationary, stationary_moment

from conftest import make_cir_model, make_ou_model, make_table1_model


class TestEulerStep:
    def test_hand_value(self, cir_model):
        # drift 0.01*(0.3 - 0.2) = 0.001, noise 0.1*0.2*1 = 0.02
        assert euler_step(cir_model, 1.0, 0.01, 1.0) == pytest.approx(1.021, abs=1e-12)

    def test_zero_noise_is_drift_only(self, table1_model):
        x, h = 0.7, 0.05
        assert euler_step(table1_model, x, h, 0.0) == pytest.approx(
            x + h * (0.3 - 0.2 * x), abs=1e-15
        )

    def test_boundary_uses_upper_regime(self, table1_model):
        # x = 1.5 sits exactly on the second threshold: regime 2 coefficients
        x, h, g = 1.5, 0.01, 0.5
        want = x + h * (0.3 - 0.2 * x) + 0.2 * math.sqrt(x) * math.sqrt(h) * g
        assert euler_step(table1_model, x, h, g) == pytest.approx(want, abs=1e-15)

    def test_reflection(self, cir_model):
        out = euler_step(cir_model, 0.01, 0.01, -50.0)
        assert out > 0

    def test_no_reflection_on_whole_line(self, ou_model):
        out = euler_step(ou_model, 0.01, 0.01, -50.0)
        assert out < 0


class TestSimulatePath:
    def test_grid_arithmetic(self, cir_model, rng):
        traj = simulate_path(cir_model, 1.0, 10, 1.0, rng)
        assert traj.times.size == 11
        np.testing.assert_allclose(traj.times, np.arange(11) / 10.0, atol=1e-15)

    def test_deterministic_given_seed(self, table1_model):
        a = simulate_path(table1_model, 1.0, 100, 5.0, np.random.default_rng(7))
        b = simulate_path(table1_model, 1.0, 100, 5.0, np.random.default_rng(7))
        assert np.array_equal(a.values, b.values)

    def test_matches_scalar_step_bitwise(self, table1_model):
        # the jitted kernel must replicate euler_step float for float
        seed = 123
        n, T = 50, 20.0
        traj = simulate_path(table1_model, 1.0, n, T, np.random.default_rng(seed))
        noise = np.random.default_rng(seed).standard_normal(traj.times.size - 1)
        x = 1.0
        for i, g in enumerate(noise):
            x = euler_step(table1_model, x, 1.0 / n, g)
            assert x == traj.values[i + 1]

    def test_ode_limit(self):
        # vanishing volatility: Euler tracks the exact mean-reversion ODE
        m = ThresholdModel(regimes=(RegimeParams(a=0.3, b=0.2, sigma=1e-12, gamma=0.0),))
        T, n = 1.0, 10_000
        traj = simulate_path(m, 2.0, n, T, np.random.default_rng(0))
        want = 2.0 * math.exp(-0.2 * T) + (0.3 / 0.2) * (1 - math.exp(-0.2 * T))
        assert abs(traj.values[-1] - want) < 1e-3

    def test_nonnegative_for_sqrt_diffusion(self, table1_model, rng):
        traj = simulate_path(table1_model, 0.05, 200, 50.0, rng)
        assert traj.values.min() >= 0

    def test_x0_validation(self, cir_model, rng):
        with pytest.raises(ModelError):
            simulate_path(cir_model, -1.0, 10, 1.0, rng)

    def test_weak_stationarity(self, table1_model):
        rng = np.random.default_rng(42)
        dist = build_stationary(table1_model)
        x0 = warm_start(table1_model, rng, method="exact-mu", dist=dist)
        traj = simulate_path(table1_model, x0, 1000, 1000.0, rng)
        mean_t = traj.values.mean()
        sq_t = (traj.values**2).mean()
        assert abs(mean_t - stationary_moment(dist, 1.0)) / stationary_moment(dist, 1.0) < 0.05
        assert abs(sq_t - stationary_moment(dist, 2.0)) / stationary_moment(dist, 2.0) < 0.05


class TestSimulateOnGrid:
    def test_substep_refinement_consistency(self, cir_model):
        times = np.linspace(0.0, 2.0, 21)
        vals = simulate_on_grid(cir_model, 1.0, times, np.random.default_rng(5), substeps=10)
        assert vals.size == times.size
        assert vals[0] == 1.0

    def test_nonuniform_grid(self, cir_model, rng):
        times = np.array([0.0, 0.1, 0.3, 1.0])
        vals = simulate_on_grid(cir_model, 1.0, times, rng, substeps=3)
        assert vals.size == 4


class TestWarmStart:
    def test_degenerate_burn_in(self, table1_model, rng):
        assert warm_start(table1_model, rng, method="burn-in", horizon=0.0) == 1.0

    def test_burn_in_lands_in_state_space(self, table1_model, rng):
        x0 = warm_start(table1_model, rng, method="burn-in", horizon=100.0, n_per_unit=100)
        assert 0 < x0 < math.inf

    def test_exact_mu_mean_band(self, ou_model):
        rng = np.random.default_rng(11)
        dist = build_stationary(ou_model)
        draws = [
            warm_start(ou_model, rng, method="exact-mu", dist=dist) for _ in range(10_000)
        ]
        se = math.sqrt(0.1 / len(draws))
        assert abs(np.mean(draws) - 1.5) < 4 * se

    def test_requires_ergodic(self, rng):
        m = ThresholdModel(regimes=(RegimeParams(0.1, 0.0, 0.2, 0.5),))
        with pytest.raises(ModelError):
            warm_start(m, rng, method="burn-in", horizon=1.0)


class TestSubsample:
    def test_stride_identity(self, cir_model, rng):
        traj = simulate_path(cir_model, 1.0, 10, 1.0, rng)
        obs = subsample(traj, stride=1)
        assert np.array_equal(obs.times, traj.times)
        assert np.array_equal(obs.values, traj.values)

    def test_stride_ten(self, cir_model, rng):
        traj = simulate_path(cir_model, 1.0, 100, 1.0, rng)  # 101 points
        obs = subsample(traj, stride=10)
        assert obs.times.size == 11

    def test_explicit_times(self, cir_model, rng):
        traj = simulate_path(cir_model, 1.0, 10, 1.0, rng)
        obs = subsample(traj, times=[0.0, 0.1, 0.3, 1.0])
        assert obs.times.size == 4
        assert obs.max_gap == pytest.approx(0.7)

    def test_absent_time_errors(self, cir_model, rng):
        traj = simulate_path(cir_model, 1.0, 10, 1.0, rng)
        with pytest.raises(ValueError):
            subsample(traj, times=[0.0, 0.05])


class TestCsv:
    def test_round_trip_exact(self, table1_model, rng, tmp_path):
        traj = simulate_path(table1_model, 1.0, 37, 3.0, rng)
        p = tmp_path / "traj.csv"
        write_trajectory_csv(traj, p)
        back = read_trajectory_csv(p)
        assert np.array_equal(back.values, traj.values)
        assert np.array_equal(back.times, traj.times)

    def test_header_check(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("a,b\n1,2\n")
        with pytest.raises(ValueError):
            read_trajectory_csv(p)


class TestTrajectory:
    def test_validation(self):
        with pytest.raises(ValueError):
            Trajectory(times=np.array([0.0, 0.0]), values=np.array([1.0, 1.0]))
        with pytest.raises(ValueError):
            Trajectory(times=np.array([0.5, 1.0]), values=np.array([1.0, 1.0]))
