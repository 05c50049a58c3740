"""Monte Carlo estimation of logical error rates and threshold crossings.

Trials are simulated in fixed-size blocks.  Block ``b`` of a point draws
from ``SeedSequence(master_seed, spawn_key=(b,))``, so the result does not
depend on how blocks are spread over workers, and points sharing a seed use
common random numbers.
"""

from __future__ import annotations

import dataclasses
import itertools
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import stats

from .decoder import BatchDecoder, defects_from_reports
from .geometry import PlacementDistribution, calibrated_orbit, face_deltas, qubit_corner_deltas, sample_displacements
from .noise import NoiseParams
from .planar import build_lattice, simulate_batch

__all__ = [
    "ExperimentPoint",
    "PointResult",
    "ThresholdError",
    "ThresholdEstimate",
    "default_workers",
    "estimate_threshold",
    "run_point",
    "wilson_interval",
]

THREADS_ENV = "ORBITALPROBE_THREADS"
_FIXED_DEVICE_KEY = 2**32 - 1


@dataclass(frozen=True)
class ExperimentPoint:
    """One (distance, misplacement) grid point.

    ``R_frac`` is the misplacement scale as a fraction of the probe height
    ``d``; ``D_over_d`` the data pitch in the same unit.
    """

    distance: int
    R_frac: float
    dist_kind: str = "disk"
    orbit_mode: str = "circular"
    noise: NoiseParams = field(default_factory=NoiseParams)
    n_trials: int = 1000
    master_seed: int = 0
    D_over_d: float = 10.0
    n_rounds: int | None = None
    fixed_device: bool = False
    score_both: bool = False
    n_integration_steps: int = 512
    block_size: int = 1024

    def __post_init__(self):
        if self.n_trials < 1:
            raise ValueError("n_trials must be >= 1")
        if self.R_frac < 0:
            raise ValueError("R_frac must be >= 0")
        if self.block_size < 1:
            raise ValueError("block_size must be >= 1")
        build_lattice(self.distance)  # validates the distance

    @property
    def R_nm_at_40nm(self) -> float:
        return 40.0 * self.R_frac

    @property
    def rounds(self) -> int:
        return self.distance if self.n_rounds is None else self.n_rounds

    def replace(self, **changes) -> "ExperimentPoint":
        return dataclasses.replace(self, **changes)


def wilson_interval(failures: int, trials: int, confidence: float = 0.95) -> tuple[float, float]:
    ci = stats.binomtest(int(failures), int(trials)).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


@dataclass(frozen=True)
class PointResult:
    failures: int
    trials: int
    p_L: float
    ci_low: float
    ci_high: float

    @classmethod
    def from_counts(cls, failures: int, trials: int) -> "PointResult":
        lo, hi = wilson_interval(failures, trials)
        p = failures / trials
        # guard the invariant against last-ulp rounding in the interval
        return cls(int(failures), int(trials), p, min(lo, p), max(hi, p))

    @property
    def sigma(self) -> float:
        """Binomial standard error, floored so zero-failure points keep finite weight."""
        p = max(self.p_L, 1.0 / self.trials)
        return math.sqrt(p * (1 - p) / self.trials)


def _block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(block,)))


def _run_block(point: ExperimentPoint, block: int, size: int) -> int:
    """Failures in one block of ``size`` trials."""
    lat = build_lattice(point.distance)
    rng = _block_rng(point.master_seed, block)
    dist = PlacementDistribution(point.dist_kind, point.R_frac)
    n_faces = {k: lat.n_stabs(k) for k in ("Z", "X")}
    if point.R_frac == 0:
        dz = np.zeros((1, n_faces["Z"], 4))
        dx = np.zeros((1, n_faces["X"], 4))
    else:
        orbit = calibrated_orbit(point.orbit_mode, point.D_over_d, point.n_integration_steps)
        if point.fixed_device:
            disp = sample_displacements(dist, _block_rng(point.master_seed, _FIXED_DEVICE_KEY), (1, lat.n_data))
        else:
            disp = sample_displacements(dist, rng, (size, lat.n_data))
        faces = face_deltas(lat, qubit_corner_deltas(disp, orbit))
        dz, dx = faces["Z"], faces["X"]
    zr, xr, x, z = simulate_batch(lat, dz, dx, point.noise, point.rounds, rng,
                                  x_mask=np.zeros((size, lat.n_data), np.uint8),
                                  z_mask=np.zeros((size, lat.n_data), np.uint8))
    dec_z = _decoder(point.distance, "Z", point.rounds + 1)
    fail = dec_z.failures(defects_from_reports(zr), x)
    if point.score_both:
        dec_x = _decoder(point.distance, "X", point.rounds + 1)
        fail = fail | dec_x.failures(defects_from_reports(xr), z)
    return int(fail.sum())


_DECODERS: dict = {}


def _decoder(distance: int, kind: str, n_rounds: int) -> BatchDecoder:
    key = (distance, kind, n_rounds)
    if key not in _DECODERS:
        _DECODERS[key] = BatchDecoder(build_lattice(distance), kind, n_rounds)
    return _DECODERS[key]


def _blocks(point: ExperimentPoint) -> list[tuple[int, int]]:
    n_blocks = -(-point.n_trials // point.block_size)
    sizes = [point.block_size] * n_blocks
    sizes[-1] = point.n_trials - point.block_size * (n_blocks - 1)
    return list(enumerate(sizes))


def _run_block_args(args) -> int:
    return _run_block(*args)


def default_workers() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        return max(1, int(env))
    return 1


def run_point(point: ExperimentPoint, workers: int | None = None,
              progress: Callable[[int, int], None] | None = None) -> PointResult:
    """Simulate, decode and score ``point.n_trials`` memory experiments."""
    workers = default_workers() if workers is None else max(1, int(workers))
    jobs = [(point, b, size) for b, size in _blocks(point)]
    failures = 0
    if workers == 1 or len(jobs) == 1:
        for i, job in enumerate(jobs):
            failures += _run_block_args(job)
            if progress:
                progress(i + 1, len(jobs))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for i, f in enumerate(pool.map(_run_block_args, jobs)):
                failures += f
                if progress:
                    progress(i + 1, len(jobs))
    return PointResult.from_counts(failures, point.n_trials)


# --- threshold ----------------------------------------------------------------

class ThresholdError(ValueError):
    """No usable crossing in the supplied grid."""


@dataclass(frozen=True)
class ThresholdEstimate:
    R_star: float
    sigma: float
    pairwise: tuple  # (d_a, d_b, root, sigma)

    def to_dict(self) -> dict:
        return {"R_star": self.R_star, "sigma": self.sigma,
                "pairwise": [dict(zip(("d_a", "d_b", "root", "sigma"), p)) for p in self.pairwise]}


def _fit_quadratic(r: np.ndarray, p: np.ndarray, sig: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Weighted least squares for ``p = b0 + b1 r + b2 r^2``; returns coefficients and covariance."""
    a = np.stack([np.ones_like(r), r, r * r], axis=1)
    wa = a / sig[:, None]
    cov = np.linalg.pinv(wa.T @ wa)
    beta = cov @ (wa.T @ (p / sig))
    return beta, cov


def _log_rates(points: Sequence[PointResult]) -> tuple[np.ndarray, np.ndarray]:
    """Log failure rates and their delta-method errors.

    A half-count continuity correction keeps zero-failure points finite.
    """
    p = np.array([(x.failures + 0.5) / (x.trials + 1) for x in points])
    n = np.array([x.trials + 1 for x in points], dtype=float)
    return np.log(p), np.sqrt((1 - p) / (n * p))


def _pair_crossing(r: np.ndarray, a: Sequence[PointResult], b: Sequence[PointResult], window: int
                   ) -> tuple[float, float] | None:
    z = np.array([(x.p_L - y.p_L) / math.hypot(x.sigma, y.sigma) for x, y in zip(a, b)])
    la, sa = _log_rates(a)
    lb, sb = _log_rates(b)
    # consecutive grid points where the curves swap order; points where both
    # curves sit at zero carry no sign and never bracket a crossing
    brackets = [i for i in range(len(r) - 1) if z[i] * z[i + 1] < 0]
    if not brackets:
        return None
    i = max(brackets, key=lambda j: abs(z[j]) + abs(z[j + 1]))
    centre = i if abs(z[i]) <= abs(z[i + 1]) else i + 1
    lo = max(0, min(centre - window // 2, len(r) - window))
    sel = slice(lo, lo + window)
    rs = r[sel]
    # rescale the abscissa for conditioning
    scale = rs.max() - rs.min() or 1.0
    x = (rs - rs.min()) / scale
    ba, ca = _fit_quadratic(x, la[sel], sa[sel])
    bb, cb = _fit_quadratic(x, lb[sel], sb[sel])
    g = ba - bb
    roots = np.roots(g[::-1]) if abs(g[2]) > 1e-300 else np.array([-g[0] / g[1]])
    roots = roots[np.isreal(roots)].real
    inside = roots[(roots >= -0.25) & (roots <= 1.25)]
    if inside.size == 0:
        return None
    mid = ((r[i] + r[i + 1]) / 2 - rs.min()) / scale
    x0 = float(inside[np.argmin(np.abs(inside - mid))])
    slope = g[1] + 2 * g[2] * x0
    if slope == 0:
        return None
    grad = np.array([1.0, x0, x0 * x0])
    var = (grad @ ca @ grad + grad @ cb @ grad) / slope**2
    return float(rs.min() + x0 * scale), float(math.sqrt(var) * scale)


def estimate_threshold(results: Mapping[int, Mapping[float, PointResult]], window: int = 5) -> ThresholdEstimate:
    """Crossing point of the logical-error curves.

    ``results[distance][R]`` holds one :class:`PointResult` per grid point.
    For each pair of distances the grid interval where the curves swap
    order most significantly is located, both log-rate curves get a
    weighted local quadratic on the ``window`` grid points around its closer
    end, and the root of their difference is taken.  Pairwise roots are combined by
    inverse-variance weighting.
    """
    dists = list(results.keys())
    if len(dists) < 2:
        raise ThresholdError("need at least two distances")
    if len(set(dists)) != len(dists) or len({int(d) for d in dists}) != len(dists):
        raise ThresholdError("distances must be distinct")
    grids = [sorted(results[d].keys()) for d in dists]
    if any(g != grids[0] for g in grids):
        raise ThresholdError("all distances must share the same R grid")
    r = np.array(grids[0], dtype=float)
    if len(r) < 4:
        raise ThresholdError("need at least four R values")
    win = min(window, len(r))
    pairwise = []
    for da, db in itertools.combinations(sorted(dists), 2):
        res = _pair_crossing(r, [results[da][x] for x in grids[0]], [results[db][x] for x in grids[0]], win)
        if res is not None:
            pairwise.append((int(da), int(db), res[0], res[1]))
    if not pairwise:
        raise ThresholdError(f"no bracketed crossing among distances {sorted(dists)} over R in [{r.min()}, {r.max()}]")
    roots = np.array([p[2] for p in pairwise])
    sig = np.array([max(p[3], 1e-12) for p in pairwise])
    w = 1 / sig**2
    return ThresholdEstimate(float(np.sum(w * roots) / np.sum(w)), float(1 / math.sqrt(np.sum(w))), tuple(pairwise))
