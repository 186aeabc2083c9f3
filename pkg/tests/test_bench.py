import math
from dataclasses import replace

import numpy as np
import pytest

from mirrorfdr import bench
from mirrorfdr.bench import RepRecord, Scenario
from mirrorfdr.datagen import CovarianceSpec, SignalSpec


def _gauss(**kw):
    base = dict(n=200, p=10, p1=3, method="DS", family="gaussian", signal=SignalSpec(3, 5.0), reps=3, seed=1)
    base.update(kw)
    return Scenario(**base)


def test_scenario_validation():
    with pytest.raises(ValueError):
        Scenario(100, 10, 2, method="GM", regime="high")
    with pytest.raises(ValueError):
        Scenario(100, 10, 2, method="BHq_debiased")
    with pytest.raises(ValueError):
        Scenario(50, 60, 2)
    with pytest.raises(ValueError):
        Scenario(100, 10, 11)
    with pytest.raises(ValueError):
        Scenario(100, 10, 2, q=1.5)
    assert Scenario(100, 10, 2).scale == "inv_n"
    assert Scenario(100, 200, 2, regime="high").scale == "unit"
    assert Scenario(100, 10, 2, signal=SignalSpec(0, 1.0)).signal.p1 == 2


def test_signal_units():
    sc = Scenario(400, 800, 3, regime="high", signal=SignalSpec(3, 6.0, "gaussian"), signal_units="sqrt_logp_n")
    assert sc.magnitude == pytest.approx(6 * math.sqrt(math.log(800) / 400))


def test_replication_is_deterministic():
    sc = _gauss()
    a, b = bench.run_replication(sc, 2), bench.run_replication(sc, 2)
    assert (a.fdp, a.power, a.n_selected) == (b.fdp, b.power, b.n_selected)
    d1, beta1, _ = bench.simulate_replication(sc, 2)
    d2, beta2, _ = bench.simulate_replication(sc, 2)
    assert np.array_equal(d1.X, d2.X) and np.array_equal(d1.y, d2.y) and np.array_equal(beta1, beta2)


def test_replications_use_distinct_streams():
    sc = _gauss()
    assert not np.array_equal(bench.simulate_replication(sc, 0)[0].y, bench.simulate_replication(sc, 1)[0].y)
    assert bench.method_seed(sc, 0) != bench.method_seed(sc, 1)


@pytest.mark.parametrize("method", ["DS", "MDS", "GM", "BHq_mle"])
def test_global_null_power_is_none(method):
    sc = _gauss(p1=0, signal=SignalSpec(0, 0.0), method=method, m=3, reps=1)
    rec = bench.run_replication(sc, 0)
    assert rec.power is None
    assert rec.fdp in (0.0, 1.0)
    res = bench.aggregate(sc, [rec])
    assert res.power is None and res.mc_se_power is None
    assert "none" in bench.format_csv([res])


def test_strong_signal_gaussian_ds_full_power():
    sc = _gauss(n=400, p=10, p1=4, signal=SignalSpec(4, 40.0), reps=5)
    (res,) = bench.run_bench([sc], threads=1)
    assert res.power == 1.0


def test_per_rep_length_and_fdr_consistency():
    (res,) = bench.run_bench([_gauss()], threads=1)
    assert len(res.per_rep) == 3 and res.completed == 3
    fdps = [r.fdp for r in res.per_rep]
    assert abs(res.fdr - np.mean(fdps)) <= 1e-15
    assert res.mc_se_fdr == pytest.approx(np.std(fdps, ddof=1) / math.sqrt(3))
    assert 0.0 <= res.fdr <= 1.0 and 0.0 <= res.power <= 1.0
    assert all(r.runtime >= 0 for r in res.per_rep)


def test_seed_changes_results():
    a, b = bench.run_bench([_gauss(seed=1, signal=SignalSpec(3, 0.5)), _gauss(seed=2, signal=SignalSpec(3, 0.5))], 1)
    assert [r.n_selected for r in a.per_rep] != [r.n_selected for r in b.per_rep] or a.fdr != b.fdr or (
        a.power != b.power
    )


def test_bench_is_pure_function_of_grid():
    grid = [_gauss(), _gauss(method="MDS", m=4)]
    assert bench.format_csv(bench.run_bench(grid, 1)) == bench.format_csv(bench.run_bench(grid, 1))


def test_parallel_matches_serial():
    grid = [_gauss(), _gauss(method="GM", seed=4)]
    assert bench.format_csv(bench.run_bench(grid, 1)) == bench.format_csv(bench.run_bench(grid, 2))


def test_empty_grid_rejected():
    with pytest.raises(ValueError):
        bench.run_bench([])


def test_skipped_reps_excluded_and_flagged():
    sc = _gauss(reps=5)
    recs = [RepRecord(0, 0.0, 1.0, 3, 0.1), RepRecord(1, 0.5, 0.5, 2, 0.1)]
    recs += [RepRecord(k, None, None, 0, 0.0, "mle_nonexistent") for k in (2, 3, 4)]
    res = bench.aggregate(sc, recs)
    assert res.skipped == 3 and res.completed == 2
    assert res.fdr == 0.25 and res.power == 0.75
    assert res.unreliable
    ok = bench.aggregate(sc, recs[:2] + [RepRecord(2, 0.0, 1.0, 3, 0.1)] * 3)
    assert not ok.unreliable


def test_separated_logistic_reps_are_skipped_not_raised():
    # a huge signal on a tiny sample separates the classes, so the MLE does not exist
    sc = Scenario(40, 5, 5, family="logistic", scale="unit", signal=SignalSpec(5, 50.0), reps=2)
    res = bench.run_bench([sc], 1)[0]
    assert res.skipped == 2 and res.unreliable and math.isnan(res.fdr)
    assert all(v in bench.format_csv([res]) for v in ("nan", "true"))


def test_csv_schema():
    res = bench.run_bench([_gauss(label="cell")], 1)
    lines = bench.format_csv(res).splitlines()
    assert lines[0].split(",") == list(bench.CSV_COLUMNS)
    assert {"fdr", "power", "mc_se_fdr", "mc_se_power", "skipped"} <= set(bench.CSV_COLUMNS)
    assert len(lines) == 2 and lines[1].startswith("cell,moderate,DS,")
    assert "cell" in bench.format_table(res)


@pytest.mark.slow
def test_mds_power_not_below_ds_across_correlations():
    base = Scenario(
        500, 60, 30, family="logistic", covariance=CovarianceSpec("toeplitz", 0.0), signal=SignalSpec(30, 6.5), seed=7
    )
    grid = []
    for r in (0.0, 0.2, 0.4):
        cell = replace(base, covariance=CovarianceSpec("toeplitz", r))
        grid += [replace(cell, method="DS"), replace(cell, method="MDS")]
    res = bench.run_bench(grid)
    for ds, md in zip(res[::2], res[1::2]):
        assert md.power >= ds.power, (ds.scenario.covariance.r, ds.power, md.power)
