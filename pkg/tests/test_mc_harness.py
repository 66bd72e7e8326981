import math

import numpy as np
import pytest

from tckls.mc_harness import (
    StudyConfig,
    run_clt_study,
    run_rmse_study,
    run_test_calibration,
    theoretical_gamma_matrices,
)
from tckls.model import RegimeParams, ThresholdModel

from conftest import make_cir_model, make_table1_model


def cir_cfg(**kw):
    base = dict(model=make_cir_model(), T=50.0, N=5000, n_rep=20, seed=7, which="rmse")
    base.update(kw)
    return StudyConfig(**base)


class TestConfig:
    def test_zero_replicates_rejected(self):
        with pytest.raises(ValueError):
            cir_cfg(n_rep=0)

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError):
            StudyConfig.from_dict(
                {
                    "model": make_cir_model().to_dict(),
                    "T": 10.0,
                    "N": 100,
                    "n_rep": 1,
                    "seed": 0,
                    "which": "rmse",
                    "bogus": 1,
                }
            )

    def test_round_trip_from_dict(self):
        cfg = StudyConfig.from_dict(
            {
                "model": make_cir_model().to_dict(),
                "T": 10.0,
                "N": 100,
                "n_rep": 2,
                "seed": 0,
                "which": "clt",
            }
        )
        assert cfg.model == make_cir_model()


class TestRmseStudy:
    def test_single_replicate_rmse_is_abs_error(self):
        cfg = cir_cfg(n_rep=1)
        rep = run_rmse_study(cfg)
        tbl = rep.tables["qmle"]["a"][0]
        errs = rep.raw["errors"]["qmle"]["a"][0]
        assert len(errs) == 1
        assert tbl["rmse"] == pytest.approx(abs(errs[0]) / 0.3)
        assert tbl["eb"] == pytest.approx(errs[0])

    def test_zero_truth_reported_absolute(self, table1_model):
        cfg = StudyConfig(
            model=table1_model, T=40.0, N=8000, n_rep=5, seed=3, which="rmse"
        )
        rep = run_rmse_study(cfg)
        mid_a = rep.tables["qmle"]["a"][1]
        assert mid_a["relative"] is False  # a_1 = 0: absolute error, flagged

    def test_desk_scale_sanity(self):
        cfg = cir_cfg(n_rep=30, T=100.0, N=10_000, seed=11)
        rep = run_rmse_study(cfg)
        assert rep.n_failures == 0
        assert rep.tables["sigma"][0]["rmse"] < 0.05
        assert rep.tables["mle"]["a"][0]["rmse"] < 2.0

    def test_jobs_invariance(self):
        cfg1 = cir_cfg(n_rep=6, T=20.0, N=2000, n_jobs=1)
        cfg2 = cir_cfg(n_rep=6, T=20.0, N=2000, n_jobs=3)
        assert run_rmse_study(cfg1).to_dict() == run_rmse_study(cfg2).to_dict()


class TestTheoreticalGamma:
    def test_cir_closed_form_oracle(self):
        # Gamma(15, rate 10) moments give the matrices in closed form
        model = make_cir_model()
        got = theoretical_gamma_matrices(model)
        np.testing.assert_allclose(
            got["mle"][0], np.array([[21.0, 14.0], [14.0, 10.0]]), rtol=1e-7
        )
        s, lam = 15.0, 10.0
        q = {
            -1.0: lam / (s - 1),
            0.0: 1.0,
            1.0: s / lam,
            2.0: s * (s + 1) / lam**2,
            3.0: s * (s + 1) * (s + 2) / lam**3,
        }
        a_mat = np.array([[q[0.0], -q[1.0]], [-q[1.0], q[2.0]]])
        b_mat = np.array([[q[1.0], -q[2.0]], [-q[2.0], q[3.0]]])
        want = np.linalg.inv(a_mat) @ b_mat @ np.linalg.inv(a_mat)
        np.testing.assert_allclose(got["qmle"][0], want, rtol=1e-7)

    def test_table1_all_regimes_defined(self, table1_model):
        got = theoretical_gamma_matrices(table1_model)
        for kind in ("mle", "qmle"):
            for mat in got[kind]:
                assert mat is not None
                assert np.linalg.eigvalsh(mat).min() > 0


class TestCltStudy:
    def test_structure_and_determinism(self):
        cfg = cir_cfg(n_rep=8, T=50.0, N=5000, which="clt")
        rep1 = run_clt_study(cfg)
        rep2 = run_clt_study(cfg)
        assert rep1.to_dict() == rep2.to_dict()
        row = rep1.tables["qmle"]["a"][0]
        assert row["n"] == 8
        assert 0.0 <= row["ks"] <= 1.0
        assert 0.0 <= row["coverage95"] <= 1.0

    def test_single_replicate_no_ks(self):
        cfg = cir_cfg(n_rep=1, which="clt")
        rep = run_clt_study(cfg)
        row = rep.tables["qmle"]["a"][0]
        assert row["n"] == 1 and "ks" not in row


class TestCalibrationStudy:
    def test_smoke_and_determinism(self):
        cfg = StudyConfig(
            model=make_cir_model(),
            T=30.0,
            N=652,
            n_rep=4,
            seed=5,
            which="test_size",
            n_boot=10,
            n_grid=50,
        )
        rep1 = run_test_calibration(cfg)
        rep2 = run_test_calibration(cfg)
        assert rep1.to_dict() == rep2.to_dict()
        assert rep1.tables["n_effective"] == 4
        assert 0.0 <= rep1.tables["rejection_rate"] <= 1.0

    def test_power_mode_counts_detections(self):
        alt = ThresholdModel(
            regimes=(
                RegimeParams(1.6434, 0.9410, 0.1616, 0.5),
                RegimeParams(0.1713, 0.0723, 0.1053, 0.5),
            ),
            thresholds=(2.0303,),
        )
        cfg = StudyConfig(
            model=alt,
            T=96.0,
            N=2086,
            n_rep=3,
            seed=9,
            which="test_power",
            n_boot=30,
            n_grid=200,
            gamma=0.5,
        )
        rep = run_test_calibration(cfg)
        assert rep.tables["rejection_rate"] >= 1 / 3
