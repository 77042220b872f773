import math

import numpy as np
import pytest

import rtsub


def test_normal_functions():
    assert rtsub.std_normal_cdf(0.0) == 0.5
    assert math.isclose(rtsub.std_normal_quantile(0.975), 1.959963984540054, rel_tol=1e-14)


def test_rank_transform_grid():
    H = np.random.default_rng(0).normal(size=(10, 4))
    Ht = rtsub.rank_transform(H)
    grid = sorted(rtsub.std_normal_quantile((r + 0.5) / 40) for r in range(40))
    assert np.array_equal(np.sort(Ht.ravel()), np.array(grid))


def test_python_statistic_runs_through_engine():
    x = np.random.default_rng(1).normal(size=120)

    def stat(rows, seed):
        rng = np.random.default_rng(seed)
        half = rng.permutation(rows)[: len(rows) // 2]
        return float(x[half].sum() / math.sqrt(len(half)))

    r1 = rtsub.aggregate_test(stat, len(x), L=5, J=4, seed=3)
    r2 = rtsub.aggregate_test(stat, len(x), L=5, J=4, seed=3, threads=2)
    assert r1["p_value"] == r2["p_value"]
    assert 0.0 <= r1["p_value"] <= 1.0
    assert r1["B"] == 4 * (120 // 25)
    ada = rtsub.aggregate_test(stat, len(x), aggregators=["mean", "max"], L=5, J=4, seed=3)
    assert [a["name"] for a in ada["per_aggregator"]] == ["mean", "max"]


def test_mean_test_detects_shift():
    X = np.random.default_rng(2).normal(size=(300, 3)) + 0.4
    r = rtsub.mean_test(X, L=10, J=5, seed=1)
    assert r["reject"]


def test_dip():
    assert math.isclose(rtsub.dip_statistic([0.0, 1.0]), 0.25)
    with pytest.raises(ValueError):
        rtsub.dip_statistic([1.0, 1.0])


def test_verma_and_dml():
    d = rtsub.gen_trial_data(300, 0.0, seed=4)
    r = rtsub.verma_test(d["A1"], d["L"], d["A2"], d["Y"], L=3, J=2, n_perm=99)
    assert 0.0 <= r["p_value"] <= 1.0
    plm = rtsub.gen_plm_data(300, 1.0, seed=5)
    out = rtsub.dml_rank_ci(plm["Y"], plm["D"], plm["X"], J=5)
    assert out["ci"][0] < out["ci"][1]


def test_merge_and_gauss():
    assert rtsub.merge.bonferroni([0.01, 0.5]) == pytest.approx(0.02)
    assert abs(rtsub.merge.gauss_power(0.0, 0.3, 200) - 0.05) < 1e-12


def test_run_experiment_and_config_error():
    csv = rtsub.run_experiment("experiment = gauss-location\ngrid = 0, 1\n")
    assert csv.startswith("# rtsub-csv/1 experiment=gauss-location")
    with pytest.raises(rtsub.ConfigError):
        rtsub.run_experiment("experiment = gauss-location\nalpha = 3\n")
