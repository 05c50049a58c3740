import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from orbitalprobe.montecarlo import (
    ExperimentPoint,
    PointResult,
    ThresholdError,
    default_workers,
    estimate_threshold,
    run_point,
    wilson_interval,
)
from orbitalprobe.noise import NoiseParams, default_params


def test_zero_everything_zero_failures():
    r = run_point(ExperimentPoint(3, 0.0, noise=NoiseParams(), n_trials=2000))
    assert r.failures == 0 and r.p_L == 0 and r.ci_low == 0


def test_sub_threshold_ordering():
    noise = default_params("circular")
    r3 = run_point(ExperimentPoint(3, 0.0, noise=noise, n_trials=10000, master_seed=5))
    r5 = run_point(ExperimentPoint(5, 0.0, noise=noise, n_trials=10000, master_seed=5))
    assert (r3.p_L - r5.p_L) / math.hypot(r3.sigma, r5.sigma) > 4


def test_same_seed_same_result():
    p = ExperimentPoint(3, 0.25, noise=default_params("circular"), n_trials=700, master_seed=42, block_size=256)
    assert run_point(p) == run_point(p)


def test_different_seed_differs():
    p = ExperimentPoint(3, 0.4, noise=default_params("circular"), n_trials=2000, master_seed=1)
    assert run_point(p) != run_point(p.replace(master_seed=2))


def test_parallel_equals_serial():
    p = ExperimentPoint(3, 0.3, dist_kind="pillbox", noise=default_params("circular"), n_trials=600,
                        master_seed=7, block_size=150)
    assert run_point(p, workers=1) == run_point(p, workers=3)


def test_block_partition_matters_only_through_blocks():
    # the last block may be short; totals still add up
    p = ExperimentPoint(3, 0.0, noise=default_params(), n_trials=1030, block_size=256)
    assert run_point(p).trials == 1030


def test_progress_callback():
    seen = []
    p = ExperimentPoint(3, 0.0, noise=NoiseParams(), n_trials=300, block_size=100)
    run_point(p, progress=lambda i, n: seen.append((i, n)))
    assert seen == [(1, 3), (2, 3), (3, 3)]


def test_score_both_superset():
    base = ExperimentPoint(3, 0.3, orbit_mode="abrupt", noise=default_params(), n_trials=1500, master_seed=3)
    z_only = run_point(base).failures
    both = run_point(base.replace(score_both=True)).failures
    assert both >= z_only and both > 0


def test_fixed_device_runs():
    p = ExperimentPoint(3, 0.3, noise=default_params("circular"), n_trials=500, fixed_device=True, block_size=100)
    assert run_point(p) == run_point(p)


def test_point_validation():
    with pytest.raises(ValueError):
        ExperimentPoint(4, 0.1)
    with pytest.raises(ValueError):
        ExperimentPoint(3, -0.1)
    with pytest.raises(ValueError):
        ExperimentPoint(3, 0.1, n_trials=0)
    assert ExperimentPoint(5, 0.25).R_nm_at_40nm == 10.0
    assert ExperimentPoint(5, 0.25).rounds == 5


def test_default_workers_env(monkeypatch):
    monkeypatch.setenv("ORBITALPROBE_THREADS", "3")
    assert default_workers() == 3
    monkeypatch.delenv("ORBITALPROBE_THREADS")
    assert default_workers() == 1


# --- intervals ------------------------------------------------------------------------

@given(st.integers(1, 5000), st.data())
def test_point_result_invariants(n, data):
    k = data.draw(st.integers(0, n))
    r = PointResult.from_counts(k, n)
    assert 0 <= r.ci_low <= r.p_L <= r.ci_high <= 1


def test_wilson_reference_value():
    # closed form for k = 10, n = 100, z = 1.959964
    z = stats.norm.ppf(0.975)
    p, n = 0.1, 100
    centre = (p + z * z / (2 * n)) / (1 + z * z / n)
    half = z / (1 + z * z / n) * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    lo, hi = wilson_interval(10, 100)
    assert lo == pytest.approx(centre - half, rel=1e-9) and hi == pytest.approx(centre + half, rel=1e-9)


def test_wilson_coverage():
    n, p = 400, 0.15
    table = [wilson_interval(k, n) for k in range(n + 1)]
    ks = np.random.default_rng(0).binomial(n, p, size=10000)
    covered = np.mean([table[k][0] <= p <= table[k][1] for k in ks])
    assert 0.93 <= covered <= 0.97


# --- threshold -------------------------------------------------------------------------

def _synthetic(r_star=0.25, n=10**6, grid=(0.15, 0.19, 0.23, 0.27, 0.31, 0.35), dists=(5, 7, 9), seed=None):
    rng = None if seed is None else np.random.default_rng(seed)
    out = {}
    for d in dists:
        out[d] = {}
        for r in grid:
            p = min(0.5, 0.02 * (r / r_star) ** ((d + 1) / 2))
            k = round(p * n) if rng is None else int(rng.binomial(n, p))
            out[d][r] = PointResult.from_counts(k, n)
    return out


def test_synthetic_crossing_exact_counts():
    est = estimate_threshold(_synthetic())
    assert abs(est.R_star - 0.25) < max(3 * est.sigma, 2e-3)
    assert len(est.pairwise) == 3


def test_synthetic_crossing_sampled():
    est = estimate_threshold(_synthetic(n=20000, seed=1))
    assert abs(est.R_star - 0.25) < 4 * est.sigma + 0.005
    assert est.sigma < 0.02


def test_synthetic_crossing_near_grid_edge():
    est = estimate_threshold(_synthetic(r_star=0.32))
    assert est.R_star == pytest.approx(0.32, abs=0.005)


def test_no_crossing_raises():
    res = {3: {}, 5: {}}
    for r in (0.1, 0.2, 0.3, 0.4):
        res[3][r] = PointResult.from_counts(int(1000 * r), 10000)
        res[5][r] = PointResult.from_counts(int(500 * r), 10000)
    with pytest.raises(ThresholdError, match="no bracketed crossing"):
        estimate_threshold(res)


def test_degenerate_inputs():
    one = {5: _synthetic()[5]}
    with pytest.raises(ThresholdError):
        estimate_threshold(one)
    syn = _synthetic()
    with pytest.raises(ThresholdError):
        estimate_threshold({5: syn[5], 7: dict(list(syn[7].items())[:5])})
    short = {d: dict(list(v.items())[:3]) for d, v in syn.items()}
    with pytest.raises(ThresholdError):
        estimate_threshold(short)


def test_threshold_to_dict():
    d = estimate_threshold(_synthetic()).to_dict()
    assert set(d) == {"R_star", "sigma", "pairwise"}
    assert {"d_a", "d_b", "root", "sigma"} == set(d["pairwise"][0])
