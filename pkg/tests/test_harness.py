"""Population sampling, aggregation, and the determinism contract."""

import filecmp
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from softland.config import build_setup
from softland.harness import (METRICS, MonteCarloSpec, TrialLog,
                              aggregate_mode, percentiles,
                              run_montecarlo, run_uncontrolled_baseline,
                              sample_devices, write_percentile_plot,
                              write_run_directory)
from softland.r2r import CostMode
from softland.simulator import detect_impact, simulate_operation

ST = build_setup()


def test_sample_devices_zero_perturbation_is_nominal():
    for dev in sample_devices(3, 0.0, 99, ST.device):
        assert_allclose(dev.as_array(), ST.device.as_array(), rtol=0)


def test_sample_devices_bounds_and_determinism():
    a = sample_devices(20, 0.05, 12345, ST.device)
    b = sample_devices(20, 0.05, 12345, ST.device)
    c = sample_devices(20, 0.05, 54321, ST.device)
    nom = ST.device.as_array()
    for da, db in zip(a, b):
        assert np.array_equal(da.as_array(), db.as_array())
    assert any(not np.array_equal(da.as_array(), dc.as_array())
               for da, dc in zip(a, c))
    for dev in a:
        rel = dev.as_array() / nom - 1.0
        assert np.all(np.abs(rel) <= 0.05)


def test_sample_devices_population_prefix_stable():
    # trial k's device may not depend on how many trials are requested
    few = sample_devices(3, 0.05, 7, ST.device)
    many = sample_devices(10, 0.05, 7, ST.device)
    for da, db in zip(few, many):
        assert np.array_equal(da.as_array(), db.as_array())


def test_percentiles_linear_oracle():
    got = percentiles([1.0, 2.0, 3.0, 4.0, 5.0], (10, 50, 90))
    assert_allclose(got, [1.4, 3.0, 4.6], rtol=1.0e-12)
    with pytest.raises(ValueError):
        percentiles([], (50,))


def test_spec_validation():
    with pytest.raises(ValueError):
        MonteCarloSpec(n_trials=0)
    with pytest.raises(ValueError):
        MonteCarloSpec(eps_max=1.0)
    with pytest.raises(ValueError):
        MonteCarloSpec(n_workers=0)
    spec = MonteCarloSpec(modes=("im",))
    assert spec.modes == (CostMode.IM,)


def _fake_log(trial, cost, v_c):
    n = len(cost)
    return TrialLog(
        trial=trial, mode=CostMode.IM, r_hat=50.0,
        cost=np.asarray(cost, dtype=float),
        v_c=np.asarray(v_c, dtype=float),
        t_c_err=np.zeros(n), nrmse_z=np.full(n, 0.1),
        ratio=np.tile(np.arange(1.0, 7.0), (n, 1)) * (trial + 1),
        feasible=np.ones(n, dtype=bool), cost_state_reads=0)


def test_aggregate_excludes_nan_with_count():
    logs = [_fake_log(0, [4.0, 4.0], [0.2, math.nan]),
            _fake_log(1, [2.0, 8.0], [0.4, 0.6])]
    agg = aggregate_mode(logs, (0.0, 50.0, 100.0))
    assert list(agg.n["v_c"]) == [2, 1]
    assert_allclose(agg.series("v_c", 50.0), [0.3, 0.6])
    assert_allclose(agg.series("cost", 0.0), [2.0, 4.0])
    assert_allclose(agg.series("cost", 100.0), [4.0, 8.0])
    # ratio metrics are unpacked per component
    assert_allclose(agg.series("ratio3", 50.0), [4.5, 4.5])
    assert list(agg.n["ratio3"]) == [2, 2]


def test_aggregate_all_nan_row_stays_nan():
    logs = [_fake_log(0, [1.0], [math.nan]),
            _fake_log(1, [1.0], [math.nan])]
    agg = aggregate_mode(logs, (50.0,))
    assert agg.n["v_c"][0] == 0
    assert math.isnan(agg.series("v_c", 50.0)[0])


def test_uncontrolled_baseline_matches_direct_simulation():
    devices = sample_devices(2, 0.05, 3, ST.device)
    base = run_uncontrolled_baseline(devices, ST.geometry, ST.sim, 30.0)
    rec = simulate_operation(devices[0], ST.geometry, 30.0, ST.sim)
    v_c, _ = detect_impact(rec, ST.geometry)
    assert base[0] == v_c
    assert np.all(base > 0.1)


def _tiny_spec(n_workers):
    return MonteCarloSpec(n_trials=4, n_operations=4, eps_max=0.05,
                          seed=2024, n_workers=n_workers)


def _run_tiny(n_workers):
    return run_montecarlo(ST.device, ST.geometry, ST.reference, ST.sim,
                          ST.r2r, _tiny_spec(n_workers), t_pre=ST.t_pre,
                          x3_eps=ST.x3_eps, hold_boost=ST.hold_boost,
                          hold_ramp=ST.hold_ramp)


def test_montecarlo_byte_identical_across_workers(tmp_path):
    d1 = tmp_path / "serial"
    d2 = tmp_path / "forked"
    write_run_directory(d1, _run_tiny(1))
    write_run_directory(d2, _run_tiny(2))
    names = ["meta.json", "baseline.csv", "agg_im.csv", "agg_dm.csv"]
    match, mismatch, errors = filecmp.cmpfiles(d1, d2, names, shallow=False)
    assert mismatch == [] and errors == []
    for mode in ("im", "dm"):
        t1 = sorted((d1 / "trials" / mode).iterdir())
        t2 = sorted((d2 / "trials" / mode).iterdir())
        assert [p.name for p in t1] == [p.name for p in t2]
        for a, b in zip(t1, t2):
            assert a.read_bytes() == b.read_bytes()


def test_montecarlo_log_structure():
    res = _run_tiny(1)
    assert set(res.logs) == {CostMode.IM, CostMode.DM}
    for mode, logs in res.logs.items():
        assert [lg.trial for lg in logs] == [0, 1, 2, 3]
        for lg in logs:
            assert lg.cost.shape == (4,)
            assert lg.ratio.shape == (4, 6)
        if mode is CostMode.IM:
            assert all(lg.cost_state_reads == 0 for lg in logs)
    agg = res.aggregates[CostMode.IM]
    for metric in METRICS:
        assert agg.p[metric].shape == (4, 5)
    assert res.baseline_mean_v_c > 0.1


def test_percentile_plot_written(tmp_path):
    logs = [_fake_log(0, [4.0, 4.0], [0.2, 0.3]),
            _fake_log(1, [2.0, 8.0], [0.4, 0.6])]
    agg = aggregate_mode(logs, (10.0, 25.0, 50.0, 75.0, 90.0))
    path = tmp_path / "band.svg"
    assert write_percentile_plot(path, agg, "v_c") is True
    assert path.stat().st_size > 0
