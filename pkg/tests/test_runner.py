import math
from dataclasses import replace

import pytest

from nopo import NetworkConfig, NopoParams, RunPlan, run, sweep
from nopo.errors import ConfigError
from nopo.runner import point_seed

DIAG_KEYS = {"n_diverged", "n_negative_floor", "trace_drift", "imag_residue", "top_population"}


@pytest.fixture
def pair_plan():
    par = NopoParams.from_pump(50.0, 0.05, 1.0)
    return RunPlan("twsde", NetworkConfig.pair(par, 1.0), 1.5, dt=1e-2, ramp_time=2.0,
                   average_window=2.0, n_traj=40, master_seed=3, checkpoint_times=(1.0, 3.0))


def test_records_and_diagnostics(pair_plan):
    recs = run(pair_plan)
    assert [r.time for r in recs] == [1.0, 3.0, "steady"]
    for r in recs:
        assert set(r.diagnostics) == DIAG_KEYS
        assert {"n_mean", "g2", "mandel_q", "hz1", "hz1_normalized"} <= set(r.stats)


def test_worker_count_does_not_change_results(pair_plan):
    a = run(pair_plan)
    b = run(replace(pair_plan, workers=2))
    assert [r.row() for r in a] == [r.row() for r in b]


def test_plan_drive_is_set_by_target_pump(pair_plan):
    assert pair_plan.driven_network().nodes[0].p == pytest.approx(1.5)


@pytest.mark.parametrize("kw", [
    {"engine": "euler"},
    {"target_p": -1.0},
    {"dt": 0.0},
    {"n_traj": 1},
    {"engine": "fock-single"},
    {"cutoff_signal": 0},
])
def test_plan_validation(pair_plan, kw):
    with pytest.raises(ConfigError):
        replace(pair_plan, **kw)


def test_fock_single_record_is_exact(small_g):
    plan = RunPlan("fock-single", NetworkConfig.solitary(small_g(1.0)), 0.5, dt=1e-3,
                   ramp_time=1.0, average_window=1.0, cutoff_signal=25, snapshot_stride=500)
    recs = run(plan)
    assert recs[-1].time == "steady" and recs[-2].time == pytest.approx(2.0)
    assert recs[-1].stats["n_mean_err"] == 0.0
    assert recs[-1].diagnostics["trace_drift"] < 1e-9
    assert [r.time for r in recs[:-1]] == pytest.approx([0.0, 0.5, 1.0, 1.5, 2.0])


def test_point_seeds_are_distinct_and_stable():
    seeds = [point_seed(0, i) for i in range(100)]
    assert len(set(seeds)) == 100 and all(0 <= s < 2**63 for s in seeds)
    assert point_seed(0, 5) == seeds[5] and point_seed(1, 5) != seeds[5]


def test_sweep_records_failures_and_continues(small_g):
    base = RunPlan("fock-single", NetworkConfig.solitary(small_g(1.0)), 0.2, dt=1e-3,
                   ramp_time=1.0, average_window=1.0, cutoff_signal=10)
    rows = sweep(base, "p", [0.2, 40.0])
    assert rows[0].error is None and rows[0].record is not None
    assert rows[1].record is None and "TraceDrift" in rows[1].error


def test_sweep_along_coupling(pair_plan):
    rows = sweep(pair_plan, "j", [0.5, 2.0])
    assert [r.value for r in rows] == [0.5, 2.0]
    assert all(math.isfinite(r.record.stats["n_mean"]) for r in rows)


def test_sweep_values_must_be_sorted(pair_plan):
    with pytest.raises(ConfigError):
        sweep(pair_plan, "p", [2.0, 1.0])
    with pytest.raises(ConfigError):
        sweep(pair_plan, "p", [])
