import numpy as np
import pytest

from orbitalprobe.geometry import PlacementDistribution, build_device
from orbitalprobe.noise import NoiseParams, default_params
from orbitalprobe.planar import (
    PauliFrame,
    SyndromeHistory,
    build_lattice,
    run_memory_experiment,
    run_round,
    simulate_batch,
)
from orbitalprobe.superop import branch_table


@pytest.mark.parametrize("d", [3, 5, 7, 11, 17])
def test_sizes(d):
    lat = build_lattice(d)
    assert lat.n_data == d * d + (d - 1) ** 2
    assert lat.n_stabs("Z") == lat.n_stabs("X") == d * (d - 1)


@pytest.mark.parametrize("d", [3, 5, 9])
def test_stabilizers_commute_and_logicals(d):
    lat = build_lattice(d)
    hz, hx = lat.check_matrix("Z"), lat.check_matrix("X")
    assert not ((hz.astype(int) @ hx.T.astype(int)) % 2).any()
    lz = np.zeros(lat.n_data, int)
    lz[lat.logical_z] = 1
    lx = np.zeros(lat.n_data, int)
    lx[lat.logical_x] = 1
    # logical Z (an X-error detector) commutes with X faces; likewise for logical X
    assert not ((hx @ lz) % 2).any()
    assert not ((hz @ lx) % 2).any()
    assert (lz @ lx) % 2 == 1
    assert len(lat.logical_z) == len(lat.logical_x) == d


def test_bad_distance():
    for d in (1, 4, 2.0):
        with pytest.raises(ValueError):
            build_lattice(d)


def test_json():
    import json
    data = json.loads(build_lattice(3).to_json())
    assert len(data["data"]) == 13


def test_frame_validation():
    with pytest.raises(ValueError):
        PauliFrame(np.zeros(3), np.zeros(4))
    f = PauliFrame.clean(3)
    g = f.copy()
    g.x_mask[0] = 1
    assert f.x_mask[0] == 0


def _zeros(lat, kind):
    return np.zeros((1, lat.n_stabs(kind), 4))


def test_noiseless_round_even():
    lat = build_lattice(5)
    f = PauliFrame.clean(lat.n_data)
    out = run_round(f, lat, [], NoiseParams(), np.random.default_rng(0))
    assert not out["Z"].any() and not out["X"].any()


def test_single_bulk_error_syndrome():
    lat = build_lattice(5)
    q = lat.index[(4, 4)]
    f = PauliFrame.clean(lat.n_data)
    f.x_mask[q] = 1
    out = run_round(f, lat, [], NoiseParams(), np.random.default_rng(0))
    odd = np.flatnonzero(out["Z"])
    assert len(odd) == 2
    assert all(q in lat.support_list("Z", s) for s in odd)
    assert not out["X"].any()


def test_wrong_report_matches_branch_marginals():
    lat = build_lattice(3)
    face = int(np.flatnonzero(lat.weights("Z") == 4)[0])
    dz = _zeros(lat, "Z")
    dz[0, face] = [0.3, -0.2, 0.25, 0.1]
    t = branch_table(dz[0, face])
    p_wrong = sum(v for k, v in t.as_dict().items() if k.startswith("zeta"))
    # one batch row per round on a clean frame: even input throughout
    n = 10**5
    zr, _, _, _ = simulate_batch(lat, np.repeat(dz, n, 0), _zeros(lat, "X"), NoiseParams(), 1,
                                 np.random.default_rng(2))
    count = int(zr[:, 0, face].sum())
    assert abs(count / n - p_wrong) <= 4 * np.sqrt(p_wrong * (1 - p_wrong) / n)
    others = np.delete(zr[:, 0], face, axis=1)
    assert others.sum() < 0.05 * n  # only injected Z patterns, invisible to Z faces


def test_counters():
    lat = build_lattice(3)
    counters = {}
    simulate_batch(lat, _zeros(lat, "Z"), _zeros(lat, "X"), NoiseParams(p_m0=1.0, even_bit=0), 2,
                   np.random.default_rng(0), x_mask=np.zeros((4, lat.n_data), np.uint8),
                   z_mask=np.zeros((4, lat.n_data), np.uint8), counters=counters)
    assert counters["meas_flip"].min() == 4  # two rounds, Z and X halves
    assert counters["wrong"].min() == 4


def test_readout_row_is_noiseless():
    lat = build_lattice(3)
    zr, xr, x, z = simulate_batch(lat, _zeros(lat, "Z"), _zeros(lat, "X"), NoiseParams(p_m0=1.0, p_m1=1.0), 3,
                                  np.random.default_rng(0))
    assert zr[0, :3].all() and not zr[0, 3].any()


def test_rounds_validated():
    lat = build_lattice(3)
    with pytest.raises(ValueError):
        simulate_batch(lat, _zeros(lat, "Z"), _zeros(lat, "X"), NoiseParams(), 0, np.random.default_rng())


def _device(d=3, R=0.0, seed=0):
    return build_device(d, 40, 400, PlacementDistribution("disk", R), "abrupt", seed)


def test_memory_zero_noise_empty_defects():
    hist, frame = run_memory_experiment(_device(), NoiseParams(), None, np.random.default_rng(0))
    assert hist.n_rounds == 4
    assert not hist.defects("Z").any() and not hist.defects("X").any()
    assert not frame.x_mask.any()


def test_memory_determinism():
    a = run_memory_experiment(_device(R=8.0), default_params(), 3, np.random.default_rng(9))
    b = run_memory_experiment(_device(R=8.0), default_params(), 3, np.random.default_rng(9))
    assert a[0].to_json() == b[0].to_json()
    assert np.array_equal(a[1].x_mask, b[1].x_mask)


def test_measurement_noise_gives_timelike_pairs():
    noise = NoiseParams(p_m1=0.5)  # even parity reads as bit 1
    rng = np.random.default_rng(3)
    total = 0
    for _ in range(200):
        hist, frame = run_memory_experiment(_device(), noise, 3, rng)
        det = hist.defects("Z").astype(int)
        # only readout errors: each face's defects pair up along time and no data error remains
        assert not (det.sum(axis=0) % 2).any()
        assert not frame.x_mask.any()
        total += det.sum()
    assert total > 200


def test_history_defects():
    r = np.array([[1, 0], [1, 1], [0, 1]], np.uint8)
    h = SyndromeHistory(r, r)
    assert h.defects("Z").tolist() == [[1, 0], [0, 1], [1, 0]]
