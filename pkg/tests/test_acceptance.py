"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is echoed in the pytest terminal
summary.  The Monte Carlo scans (7, 9, 10) take tens of minutes on one core
and carry the ``slow`` marker.
"""

import math
import time

import numpy as np
import pytest

from orbitalprobe.decoder import DefectGraph, exhaustive_matching, mwpm
from orbitalprobe.montecarlo import ExperimentPoint, ThresholdError, estimate_threshold, run_point
from orbitalprobe.noise import NoiseParams, default_params, dipolar_pair_strength
from orbitalprobe.physics import SpinPairConfig, exact_two_spin_check
from orbitalprobe.superop import REPORT_FLIP, branch_probabilities, branch_table, branch_table_weight3, \
    brute_force_oracle, sample_outcomes

SEED = 20240601


def test_01_superop_oracle(acceptance_report):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        d = rng.uniform(-math.pi / 2, math.pi / 2, 4)
        worst = max(worst, branch_table(d).max_abs_diff(brute_force_oracle(d)))
    for _ in range(200):
        d = rng.uniform(-math.pi / 2, math.pi / 2, 3)
        worst = max(worst, branch_table_weight3(d).max_abs_diff(brute_force_oracle(d)))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-10 and dt <= 60
    acceptance_report(1, ok, f"max |analytic - oracle| = {worst:.2e} over 1200 draws in {dt:.1f}s")
    assert ok


def test_02_normalization(acceptance_report):
    rng = np.random.default_rng(2)
    p4 = branch_probabilities(rng.uniform(-math.pi, math.pi, (10000, 4)))
    p3 = branch_probabilities(rng.uniform(-math.pi, math.pi, (10000, 3)))
    worst = max(np.abs(p4.sum(-1) - 1).max(), np.abs(p3.sum(-1) - 1).max())
    ok = worst <= 1e-12
    acceptance_report(2, ok, f"max normalization error {worst:.2e} over 1e4 draws")
    assert ok


def test_03_jitter_discretization(acceptance_report):
    phi = 0.044 * math.pi / 2
    eps = phi**2 / 12
    rng = np.random.default_rng(3)
    n, chunk, wrong = 10**7, 10**6, 0
    for _ in range(n // chunk):
        d = np.zeros((chunk, 4))
        d[:, 0] = rng.uniform(-phi, phi, chunk)
        probs = branch_probabilities(d)[:, 0, :]  # even input
        wrong += int(REPORT_FLIP[sample_outcomes(probs, rng.random(chunk))].sum())
    rate = wrong / n
    ok = abs(rate / 4e-4 - 1) <= 0.10 and abs(rate / eps - 1) <= 0.10
    acceptance_report(3, ok, f"wrong-parity rate {rate:.3e} (phi_e^2/12 = {eps:.3e}) at 1e7 samples")
    assert ok


def test_04_secular_validity(acceptance_report):
    devs = [exact_two_spin_check(1e6, SpinPairConfig(v)) for v in ((0, 0, 1.0), (0.4, -0.3, 1.0))]
    ok = max(devs) <= 1e-3
    acceptance_report(4, ok, f"max deviation at detuning ratio 1e6: {max(devs):.2e}")
    assert ok


def test_05_dipolar_strength(acceptance_report):
    p = dipolar_pair_strength(2, 40, 400)
    ok = 1.5e-4 <= p <= 1.7e-4
    acceptance_report(5, ok, f"p_dip(kappa=2, 40 nm, 400 nm) = {p:.4e}")
    assert ok


def test_06_decoder_exactness(acceptance_report):
    rng = np.random.default_rng(6)
    bad = 0
    for _ in range(500):
        d = int(rng.choice([3, 5, 7]))
        n_faces = d * (d - 1)
        k = int(rng.integers(0, 11))
        cells = rng.choice(n_faces * (d + 1), size=k, replace=False)
        g = DefectGraph.from_defects(str(rng.choice(["Z", "X"])), d, [(c % n_faces, c // n_faces) for c in cells])
        bad += mwpm(g).weight != exhaustive_matching(g)
    acceptance_report(6, bad == 0, f"{bad} discrepancies over 500 graphs with <= 10 defects")
    assert bad == 0


# --- Monte Carlo criteria ---------------------------------------------------------------

def _scan(distances, grid, trials, **kw):
    out = {}
    for d in distances:
        out[d] = {}
        for r in grid:
            out[d][r] = run_point(ExperimentPoint(d, r, n_trials=trials, master_seed=SEED, **kw))
    return out


def _fmt(results):
    return "; ".join(f"d={d}: " + " ".join(f"{res.p_L:.2e}" for res in row.values()) for d, row in results.items())


@pytest.mark.slow
def test_07_threshold_reproduction(acceptance_report):
    circ_grid = (0.20, 0.25, 0.30, 0.35, 0.40, 0.45)
    abr_grid = (0.10, 0.15, 0.20, 0.25, 0.30, 0.35)
    circ = _scan((5, 7, 9), circ_grid, 20000, dist_kind="disk", orbit_mode="circular",
                 noise=default_params("circular"))
    abr = _scan((5, 7, 9), abr_grid, 20000, dist_kind="disk", orbit_mode="abrupt",
                noise=default_params("abrupt"))
    print("circular", _fmt(circ))
    print("abrupt", _fmt(abr))
    try:
        ec, ea = estimate_threshold(circ), estimate_threshold(abr)
    except ThresholdError as exc:
        acceptance_report(7, False, f"no crossing: {exc}")
        raise
    ok = 0.20 <= ec.R_star <= 0.40 and ec.R_star > ea.R_star
    acceptance_report(7, ok, f"R*(circular, disk) = {ec.R_star:.3f} +- {ec.sigma:.3f} d "
                             f"({40 * ec.R_star:.1f} nm at 40 nm); R*(abrupt, disk) = {ea.R_star:.3f} +- {ea.sigma:.3f} d")
    assert ok


def test_08_sub_threshold_scaling(acceptance_report):
    noise = default_params("circular")
    trials = {3: 40000, 5: 200000, 7: 200000}
    res = {d: run_point(ExperimentPoint(d, 0.0, noise=noise, n_trials=n, master_seed=SEED)) for d, n in trials.items()}
    seps = [(res[a].p_L - res[b].p_L) / math.hypot(res[a].sigma, res[b].sigma) for a, b in ((3, 5), (5, 7))]
    ok = min(seps) >= 4
    acceptance_report(8, ok, "p_L(R=0): " + ", ".join(f"d={d} {r.p_L:.2e} ({r.failures}/{r.trials})"
                                                        for d, r in res.items())
                      + f"; separations {seps[0]:.1f} and {seps[1]:.1f} sigma")
    assert ok


PILLBOX_GRID = (0.06, 0.09, 0.12, 0.15, 0.18, 0.21, 0.24)


@pytest.fixture(scope="module")
def pillbox_scans():
    base = default_params("circular")
    variants = {
        "baseline": base,
        "double_p_data": base.replace(p_data=2 * base.p_data),
        "double_phi_e": base.replace(phi_e=2 * base.phi_e),
        "p_dip": base.replace(p_dip=4e-4),
    }
    cache: dict = {}

    def get(name):
        if name not in cache:
            res = _scan((3, 5, 7), PILLBOX_GRID, 10000, dist_kind="pillbox", orbit_mode="circular",
                        noise=variants[name])
            print(name, _fmt(res))
            cache[name] = estimate_threshold(res)
        return cache[name]

    return get


@pytest.mark.slow
def test_09_data_decoherence_dominates(acceptance_report, pillbox_scans):
    b, pd, pe = (pillbox_scans(k) for k in ("baseline", "double_p_data", "double_phi_e"))
    drop_data, drop_jitter = b.R_star - pd.R_star, b.R_star - pe.R_star
    ok = drop_data > drop_jitter
    acceptance_report(9, ok, f"R* baseline {b.R_star:.3f}, 2x p_data {pd.R_star:.3f}, 2x phi_e {pe.R_star:.3f} "
                             f"(drops {drop_data:.3f} vs {drop_jitter:.3f})")
    assert ok


@pytest.mark.slow
def test_10_dipolar_robustness(acceptance_report, pillbox_scans):
    b, dip = pillbox_scans("baseline"), pillbox_scans("p_dip")
    reduction = 1 - dip.R_star / b.R_star
    ok = 0.0 <= reduction <= 0.25
    acceptance_report(10, ok, f"R* with p_dip = 0.04%: {dip.R_star:.3f} vs {b.R_star:.3f} "
                              f"(reduction {100 * reduction:.1f}%)")
    assert ok


def test_11_zero_noise_soundness(acceptance_report):
    res = run_point(ExperimentPoint(5, 0.0, noise=NoiseParams(), n_trials=100000, master_seed=SEED))
    ok = res.failures == 0
    acceptance_report(11, ok, f"{res.failures} failures in {res.trials} zero-noise trials at d=5")
    assert ok
