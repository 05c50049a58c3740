"""Stochastic error channels acting on probes, measurements and data qubits.

Scalar functions act on a single frame or outcome; the ``*_batch`` and
``sample_*`` helpers are their vectorized counterparts used by the
simulator.  Both draw from an explicit :class:`numpy.random.Generator`.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "CorrelatedPairSpec",
    "NoiseParams",
    "PAIR_SPECS",
    "apply_data_errors",
    "apply_dipolar_background",
    "default_params",
    "dipolar_pair_strength",
    "measurement_flip",
    "probe_prep_and_control_flip",
]


@dataclass(frozen=True)
class NoiseParams:
    """Error rates for one simulation.

    ``n_rotations`` is the number of probe rotations per stabilizer cycle
    that can disturb the outcome; ``even_bit`` is the raw probe bit that
    signals even parity (it decides which of ``p_m0``/``p_m1`` applies).
    """

    p_prep: float = 0.0
    p_single: float = 0.0
    p_m0: float = 0.0
    p_m1: float = 0.0
    p_data: float = 0.0
    phi_e: float = 0.0
    kappa: float = 2.0
    p_dip: float = 0.0
    n_rotations: int = 4
    even_bit: int = 1

    def __post_init__(self):
        for name in ("p_prep", "p_single", "p_m0", "p_m1", "p_data", "p_dip"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if not 0.0 <= self.phi_e < math.pi / 2:
            raise ValueError("phi_e must lie in [0, pi/2)")
        if not 2.0 <= self.kappa <= 80.0:
            raise ValueError("kappa must lie in [2, 80]")
        if self.n_rotations < 0:
            raise ValueError("n_rotations must be >= 0")
        if self.even_bit not in (0, 1):
            raise ValueError("even_bit must be 0 or 1")

    def replace(self, **changes) -> "NoiseParams":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "NoiseParams":
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "NoiseParams":
        return cls.from_dict(json.loads(text))

    @property
    def probe_flip_rate(self) -> float:
        """Probability that preparation and rotation errors flip the outcome an odd number of times."""
        keep = (1 - 4 / 3 * self.p_prep) * (1 - 4 / 3 * self.p_single) ** self.n_rotations
        return 0.5 * (1 - keep)


def default_params(orbit_mode: str = "abrupt") -> NoiseParams:
    """Baseline rates; ``kappa`` follows the orbit mode.

    The dipolar background is off by default; see
    :func:`dipolar_pair_strength` to derive it from the geometry.
    """
    if orbit_mode not in ("abrupt", "circular"):
        raise ValueError(f"unknown orbit mode {orbit_mode!r}")
    return NoiseParams(
        p_prep=0.01,
        p_single=0.001,
        p_m0=0.09,
        p_m1=0.01,
        p_data=0.002,
        phi_e=0.044 * math.pi / 2,
        kappa=2.0 if orbit_mode == "abrupt" else 20.0,
    )


def probe_prep_and_control_flip(n_rotations: int, params: NoiseParams, rng: np.random.Generator) -> int:
    """Outcome flip from preparation and rotation errors.

    Each error is a uniformly random Pauli, and two of the three disturb the
    probe outcome.
    """
    if n_rotations < 0:
        raise ValueError("n_rotations must be >= 0")
    flip = rng.random() < 2 / 3 * params.p_prep
    for _ in range(n_rotations):
        flip ^= rng.random() < 2 / 3 * params.p_single
    return int(flip)


def measurement_flip(true_outcome: int, params: NoiseParams, rng: np.random.Generator) -> int:
    p = params.p_m0 if true_outcome == 0 else params.p_m1
    return int(true_outcome) ^ int(rng.random() < p)


def apply_data_errors(frame, params: NoiseParams, rng: np.random.Generator) -> None:
    """Independent X, Y or Z on each data qubit with total probability ``p_data``."""
    x = frame.x_mask[None, :]
    z = frame.z_mask[None, :]
    apply_data_errors_batch(x, z, params.p_data, rng)


def dipolar_pair_strength(kappa: float, d: float, D: float) -> float:
    """Error strength of the strongest always-on data-data coupling."""
    if d <= 0 or D <= 0:
        raise ValueError("d and D must be positive")
    return (kappa * 2 * math.pi) ** 2 * (d / D) ** 6


@dataclass(frozen=True)
class CorrelatedPairSpec:
    """Relative squared amplitudes of the two-qubit errors for one pair geometry."""

    pair_kind: str
    error_weights: dict

    def __post_init__(self):
        if any(w < 0 for w in self.error_weights.values()):
            raise ValueError("weights must be non-negative")

    def probabilities(self, p_dip: float) -> dict[str, float]:
        """Firing probability per error, scaled so the x-axis neighbour pair totals ``p_dip``."""
        return {k: p_dip * w / 6.0 for k, w in self.error_weights.items()}


_DIAG = 1 / 8  # (1 / (2 sqrt 2))^2
PAIR_SPECS = {
    "NN_x": CorrelatedPairSpec("NN_x", {"XX": 4.0, "YY": 1.0, "ZZ": 1.0}),
    "NN_y": CorrelatedPairSpec("NN_y", {"XX": 1.0, "YY": 4.0, "ZZ": 1.0}),
    "Diag": CorrelatedPairSpec("Diag", {
        "XX": 0.25 * _DIAG, "YY": 0.25 * _DIAG, "ZZ": 1.0 * _DIAG, "XY": 2.25 * _DIAG, "YX": 2.25 * _DIAG,
    }),
}


def apply_dipolar_background(frame, lattice, p_dip: float, rng: np.random.Generator) -> None:
    x = frame.x_mask[None, :]
    z = frame.z_mask[None, :]
    apply_dipolar_batch(x, z, lattice.dipolar_pairs(), p_dip, rng)


# --- vectorized helpers -------------------------------------------------------

def sample_probe_flip(params: NoiseParams, rng: np.random.Generator, shape) -> np.ndarray:
    p = params.probe_flip_rate
    if p == 0:
        return np.zeros(shape, dtype=np.uint8)
    return (rng.random(shape) < p).astype(np.uint8)


def sample_measurement_flips(true_bits: np.ndarray, params: NoiseParams, rng: np.random.Generator) -> np.ndarray:
    if params.p_m0 == 0 and params.p_m1 == 0:
        return np.zeros(true_bits.shape, dtype=np.uint8)
    p = np.where(true_bits == 0, params.p_m0, params.p_m1)
    return (rng.random(true_bits.shape) < p).astype(np.uint8)


def apply_data_errors_batch(x: np.ndarray, z: np.ndarray, p_data: float, rng: np.random.Generator) -> None:
    """In-place X/Y/Z errors on ``(B, n)`` masks; one uniform per qubit picks the type."""
    if p_data == 0:
        return
    u = rng.random(x.shape)
    x ^= (u < 2 * p_data / 3).astype(np.uint8)
    z ^= ((u >= p_data / 3) & (u < p_data)).astype(np.uint8)


_PAULI_BITS = {"X": (1, 0), "Y": (1, 1), "Z": (0, 1)}


@lru_cache(maxsize=64)
def _incidence(pairs_key: bytes, n_pairs: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    pairs = np.frombuffer(pairs_key, dtype=np.int64).reshape(n_pairs, 2)
    first = np.zeros((n_pairs, n), dtype=np.float32)
    second = np.zeros((n_pairs, n), dtype=np.float32)
    first[np.arange(n_pairs), pairs[:, 0]] = 1
    second[np.arange(n_pairs), pairs[:, 1]] = 1
    return first, second


def apply_dipolar_batch(x: np.ndarray, z: np.ndarray, pairs: dict, p_dip: float, rng: np.random.Generator) -> None:
    """In-place correlated two-qubit errors on ``(B, n)`` masks.

    Every candidate error of every pair fires independently.  Qubits shared
    between pairs accumulate parity through an incidence product.
    """
    if p_dip == 0:
        return
    batch, n = x.shape
    ax = np.zeros((batch, n), dtype=np.float32)
    az = np.zeros((batch, n), dtype=np.float32)
    for kind, spec in PAIR_SPECS.items():
        pp = np.ascontiguousarray(pairs[kind], dtype=np.int64)
        if pp.size == 0:
            continue
        first, second = _incidence(pp.tobytes(), len(pp), n)
        for label, prob in spec.probabilities(p_dip).items():
            fire = (rng.random((batch, len(pp))) < prob).astype(np.float32)
            for pauli, inc in zip(label, (first, second)):
                bx, bz = _PAULI_BITS[pauli]
                hit = fire @ inc
                if bx:
                    ax += hit
                if bz:
                    az += hit
    x ^= (ax.astype(np.int64) & 1).astype(np.uint8)
    z ^= (az.astype(np.int64) & 1).astype(np.uint8)
