import math

import numpy as np
import pytest

from tckls.estimators import (
    AsymptoticCovariance,
    DriftEstimate,
    EstimationResult,
    asymptotic_covariance,
    estimate_full,
    estimate_sigma,
    mle,
    qmle,
)
from tckls.model import EstimatorKind, RegimeGeometry, RegimeParams, ThresholdModel
from tckls.simulate import simulate_path, subsample
from tckls.statistics import (
    ModifiedIncrements,
    ObservationSet,
    PathStatistics,
    compute_QM,
    compute_brackets,
    compute_modified_M,
    full_q_exponents,
)

from conftest import make_cir_model, make_table1_model

TABLE1_GEO = RegimeGeometry(thresholds=(1.0, 1.5), gammas=(0.5, 0.0, 0.5))
SINGLE_CIR = RegimeGeometry(thresholds=(), gammas=(0.5,))


def stats_from(geometry, Q, M, horizon=1.0, x0=1.0, xT=1.0):
    return PathStatistics(
        geometry=geometry,
        Q=Q,
        M=M,
        horizon=horizon,
        n_increments=10,
        max_gap=horizon / 10,
        x_first=x0,
        x_last=xT,
    )


class TestQmle:
    def test_hand_solved_system(self):
        geo = RegimeGeometry(thresholds=(), gammas=(0.0,))
        stats = stats_from(
            geo,
            Q={0: {0.0: 2.0, 1.0: 1.0, 2.0: 1.0}},
            M={0: {0.0: 0.5, 1.0: 0.1}},
        )
        est = qmle(stats)
        fit = est.params(0)
        assert fit.a == pytest.approx(0.4)
        assert fit.b == pytest.approx(0.3)

    def test_unvisited_marker(self):
        stats = stats_from(
            TABLE1_GEO,
            Q={j: {0.0: 0.0, 1.0: 0.0, 2.0: 0.0} for j in range(3)},
            M={j: {0.0: 0.0, 1.0: 0.0} for j in range(3)},
        )
        est = qmle(stats)
        assert est.fits == (None, None, None)
        assert est.flags == ("unvisited",) * 3

    def test_degenerate_constant_path(self):
        obs = ObservationSet(times=np.linspace(0, 1, 4), values=np.full(4, 0.7))
        stats = compute_QM(obs, SINGLE_CIR, q_exponents=(0.0, 1.0, 2.0))
        est = qmle(stats)
        assert est.fits[0] is None
        assert est.flags[0] == "degenerate"


class TestMle:
    def test_hand_solved_system(self):
        geo = RegimeGeometry(thresholds=(1.0,), gammas=(0.5, 0.75))
        # regime 1 exponents: -1.5, -0.5, 0.5
        stats = stats_from(
            geo,
            Q={
                0: {0.0: 0.0},
                1: {0.0: 1.0, -1.5: 1.0, -0.5: 0.0, 0.5: 1.0},
            },
            M={0: {0.0: 0.0}, 1: {0.0: 0.0}},
        )
        mcal = ModifiedIncrements(values={1: {-1.5: 0.2, -0.5: 0.1}}, sigma=(0.1, 0.1))
        est = mle(stats, mcal)
        fit = est.params(1)
        assert fit.a == pytest.approx(0.2)
        assert fit.b == pytest.approx(-0.1)

    def test_gamma_zero_closed_forms_identical(self):
        # with gamma = 0 and M fed in place of Mcal the two formulas are the
        # same algebra, so the results must agree exactly
        geo = RegimeGeometry(thresholds=(2.0,), gammas=(0.0, 0.0))
        rng = np.random.default_rng(5)
        Q = {
            j: {0.0: float(rng.uniform(1, 2)), 1.0: float(rng.uniform(0.1, 0.5)), 2.0: float(rng.uniform(1, 2))}
            for j in range(2)
        }
        M = {j: {0.0: float(rng.normal()), 1.0: float(rng.normal())} for j in range(2)}
        stats = stats_from(geo, Q=Q, M=M)
        mcal = ModifiedIncrements(values={j: dict(M[j]) for j in range(2)}, sigma=(1.0, 1.0))
        est_m = mle(stats, mcal)
        est_q = qmle(stats)
        for j in range(2):
            assert est_m.params(j).a == est_q.params(j).a
            assert est_m.params(j).b == est_q.params(j).b

    def test_consistency_on_simulated_cir(self):
        model = make_cir_model()
        rng = np.random.default_rng(101)
        traj = simulate_path(model, 1.5, 200, 400.0, rng)
        obs = subsample(traj, stride=1)
        result = estimate_full(obs, SINGLE_CIR)
        fit = result.mle.params(0)
        cov = result.cov[EstimatorKind.MLE].matrices[0]
        for got, want, var in ((fit.a, 0.3, cov[0, 0]), (fit.b, 0.2, cov[1, 1])):
            assert abs(got - want) < 4.0 * math.sqrt(var / result.horizon)


class TestEstimateSigma:
    def test_constant_path_zero_with_flag(self):
        obs = ObservationSet(times=np.linspace(0, 1, 5), values=np.full(5, 0.7))
        stats = compute_QM(obs, SINGLE_CIR, q_exponents=(0.0, 1.0), m_exponents=(0.0, 1.0))
        vol = estimate_sigma(stats, compute_brackets(stats))
        assert vol.sigma[0] == 0.0

    def test_black_scholes_realized_variance_oracle(self):
        # gamma = 1, a = 0: sigma^2 = sum (dX)^2 / sum X^2 dt on the same grid
        model = ThresholdModel(regimes=(RegimeParams(0.0, -0.05, 0.3, 1.0),))
        geo = RegimeGeometry(thresholds=(), gammas=(1.0,))
        traj = simulate_path(model, 1.0, 500, 20.0, np.random.default_rng(8))
        obs = subsample(traj, stride=1)
        stats = compute_QM(obs, geo, q_exponents=(0.0, 1.0, 2.0), m_exponents=(0.0, 1.0))
        vol = estimate_sigma(stats, compute_brackets(stats))
        dx = np.diff(obs.values)
        dt = np.diff(obs.times)
        want = math.fsum(d * d for d in dx) / math.fsum(
            x * x * h for x, h in zip(obs.values[:-1], dt)
        )
        assert vol.sigma[0] ** 2 == pytest.approx(want, rel=1e-10)

    def test_table1_five_percent(self, table1_model):
        traj = simulate_path(table1_model, 1.0, 1000, 1000.0, np.random.default_rng(31))
        obs = subsample(traj, stride=1)
        result = estimate_full(obs, TABLE1_GEO)
        for got, want in zip(result.sigma.sigma, (0.2, 0.4, 0.2)):
            assert abs(got - want) / want < 0.05


class TestAsymptoticCovariance:
    def test_identity_example(self):
        geo = RegimeGeometry(thresholds=(), gammas=(0.0,))
        t = 7.0
        stats = stats_from(
            geo, Q={0: {0.0: t, 1.0: 0.0, 2.0: t}}, M={0: {0.0: 0.0, 1.0: 0.0}}, horizon=t
        )
        cov = asymptotic_covariance(stats, EstimatorKind.MLE, (1.0,))
        np.testing.assert_allclose(cov.matrices[0], np.eye(2), atol=1e-14)

    def test_gamma_zero_kinds_coincide(self):
        geo = RegimeGeometry(thresholds=(), gammas=(0.0,))
        stats = stats_from(
            geo, Q={0: {0.0: 3.0, 1.0: 1.2, 2.0: 2.5}}, M={0: {0.0: 0.0, 1.0: 0.0}}, horizon=3.0
        )
        m_cov = asymptotic_covariance(stats, EstimatorKind.MLE, (0.7,)).matrices[0]
        q_cov = asymptotic_covariance(stats, EstimatorKind.QMLE, (0.7,)).matrices[0]
        np.testing.assert_allclose(m_cov, q_cov, rtol=1e-12)

    def test_symmetric_psd(self, table1_model, rng):
        traj = simulate_path(table1_model, 1.0, 500, 200.0, rng)
        result = estimate_full(subsample(traj, stride=1), TABLE1_GEO)
        for kind in EstimatorKind:
            for mat in result.cov[kind].matrices:
                assert mat is not None
                np.testing.assert_allclose(mat, mat.T, atol=1e-14)
                assert np.linalg.eigvalsh(mat).min() > -1e-12

    def test_monte_carlo_variance_oracle(self):
        # empirical variance of a_hat vs the reported sigma^2 Gamma[0,0] / T
        model = make_cir_model()
        ss = np.random.SeedSequence(2024)
        a_hats, predicted = [], []
        for child in ss.spawn(300):
            rng = np.random.default_rng(child)
            traj = simulate_path(model, 1.5, 100, 150.0, rng)
            res = estimate_full(subsample(traj, stride=1), SINGLE_CIR)
            fit = res.qmle.params(0)
            if fit is None:
                continue
            a_hats.append(fit.a)
            predicted.append(res.cov[EstimatorKind.QMLE].matrices[0][0, 0] / res.horizon)
        emp = np.var(a_hats, ddof=1)
        assert emp == pytest.approx(np.mean(predicted), rel=0.25)


class TestEstimateFull:
    def test_two_point_input_no_crash(self):
        obs = ObservationSet(times=np.array([0.0, 0.5]), values=np.array([0.7, 0.9]))
        result = estimate_full(obs, TABLE1_GEO)
        assert result.qmle.fits[0] is None  # single increment: degenerate
        assert result.qmle.flags[0] in ("degenerate", "unvisited")

    def test_sigma_known_linear_response(self, table1_model, rng):
        # the MLE is affine in sigma^2, so the response to a sigma bump is
        # exactly proportional to (1+eps)^2 - 1; this pins continuity
        traj = simulate_path(table1_model, 1.0, 200, 300.0, rng)
        obs = subsample(traj, stride=1)
        sig = np.array([0.2, 0.4, 0.2])
        base = estimate_full(obs, TABLE1_GEO, sigma_known=sig)
        b1 = estimate_full(obs, TABLE1_GEO, sigma_known=sig * 1.01)
        b2 = estimate_full(obs, TABLE1_GEO, sigma_known=sig * 1.02)
        unchanged = estimate_full(obs, TABLE1_GEO, sigma_known=sig)
        ratio = (1.02**2 - 1.0) / (1.01**2 - 1.0)
        for j in range(3):
            fb = base.mle.params(j)
            assert fb.a == unchanged.mle.params(j).a  # deterministic pipeline
            d1 = b1.mle.params(j).a - fb.a
            d2 = b2.mle.params(j).a - fb.a
            if abs(d1) > 1e-12:
                assert d2 / d1 == pytest.approx(ratio, rel=1e-9)
            # QMLE ignores sigma entirely
            assert b1.qmle.params(j).a == base.qmle.params(j).a

    def test_drift_free_regime_clt_band(self, table1_model):
        # middle regime has a = b = 0; estimates stay inside 3-sigma bands
        ss = np.random.SeedSequence(99)
        inside = total = 0
        for child in ss.spawn(50):
            rng = np.random.default_rng(child)
            traj = simulate_path(table1_model, 1.2, 200, 150.0, rng)
            res = estimate_full(subsample(traj, stride=1), TABLE1_GEO)
            fit = res.qmle.params(1)
            mat = res.cov[EstimatorKind.QMLE].matrices[1]
            if fit is None or mat is None:
                continue
            total += 1
            band_a = 3.0 * math.sqrt(mat[0, 0] / res.horizon)
            band_b = 3.0 * math.sqrt(mat[1, 1] / res.horizon)
            if abs(fit.a) <= band_a and abs(fit.b) <= band_b:
                inside += 1
        assert total >= 45
        assert inside / total >= 0.9

    def test_locality_of_regime_estimates(self):
        rng = np.random.default_rng(12)
        times = np.linspace(0.0, 10.0, 101)
        values = rng.uniform(0.3, 2.5, 101)
        obs = ObservationSet(times=times, values=values)
        base = estimate_full(obs, TABLE1_GEO)
        idx = next(
            i for i in range(1, 100) if values[i] >= 1.6 and values[i - 1] >= 1.6 and values[i + 1] >= 1.6
        )
        tweaked = values.copy()
        tweaked[idx] += 0.2
        moved = estimate_full(ObservationSet(times=times, values=tweaked), TABLE1_GEO)
        for kind in EstimatorKind:
            assert moved.drift(kind).params(0).a == base.drift(kind).params(0).a
            assert moved.drift(kind).params(0).b == base.drift(kind).params(0).b

    def test_time_rescaling(self):
        # stretching time by c scales both drift parameters by 1/c
        geo = RegimeGeometry(thresholds=(), gammas=(0.0,))
        Q = {0: {0.0: 2.0, 1.0: 1.0, 2.0: 1.5}}
        M = {0: {0.0: 0.5, 1.0: 0.1}}
        c = 3.7
        scaled_Q = {0: {m: c * v for m, v in Q[0].items()}}
        est = qmle(stats_from(geo, Q=Q, M=M))
        est_scaled = qmle(stats_from(geo, Q=scaled_Q, M=M, horizon=c))
        assert est_scaled.params(0).a == pytest.approx(est.params(0).a / c, rel=1e-12)
        assert est_scaled.params(0).b == pytest.approx(est.params(0).b / c, rel=1e-12)

    def test_json_round_trip_schema(self, table1_model, rng):
        import json

        traj = simulate_path(table1_model, 1.0, 100, 50.0, rng)
        result = estimate_full(subsample(traj, stride=1), TABLE1_GEO)
        data = json.loads(json.dumps(result.to_dict()))
        assert set(data["estimates"]) == {"mle", "qmle"}
        rec = data["estimates"]["mle"][0]
        assert {"a", "b", "sigma", "cov", "ci", "kind"} <= set(rec)
        assert data["T_N"] == pytest.approx(50.0)
