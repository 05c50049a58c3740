"""Donor misplacement sampling and the systematic phase errors it causes.

Lengths here share one arbitrary unit (nanometres in configs); only the
ratios ``R/d`` and ``D/d`` matter once the orbit has been calibrated.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Literal

import numpy as np

from .physics import OrbitSpec, calibrate, phase_abrupt, phase_circular
from .planar import PlanarCodeLattice, build_lattice

__all__ = [
    "DeviceRealization",
    "PlacementDistribution",
    "StabilizerChannel",
    "build_device",
    "calibrated_orbit",
    "derive_channels",
    "face_deltas",
    "qubit_corner_deltas",
    "sample_displacement",
    "sample_displacements",
]

DistKind = Literal["disk", "pillbox", "normal"]
_Z_RATIO = {"disk": 0.1, "pillbox": 0.5, "normal": 0.5}


@dataclass(frozen=True)
class PlacementDistribution:
    """Misplacement law: lateral radius (or std) ``scale_R`` and a fixed vertical ratio."""

    kind: DistKind
    scale_R: float
    z_ratio: float | None = None

    def __post_init__(self):
        kind = str(self.kind).lower()
        if kind not in _Z_RATIO:
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if not self.scale_R >= 0:
            raise ValueError("scale_R must be >= 0")
        if self.z_ratio is None:
            object.__setattr__(self, "z_ratio", _Z_RATIO[kind])
        elif not math.isclose(self.z_ratio, _Z_RATIO[kind]):
            raise ValueError(f"z_ratio for {kind} is fixed at {_Z_RATIO[kind]}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "scale_R": self.scale_R, "z_ratio": self.z_ratio}


def sample_displacements(dist: PlacementDistribution, rng: np.random.Generator, size) -> np.ndarray:
    """Array of displacements with shape ``size + (3,)``."""
    size = (size,) if np.isscalar(size) else tuple(size)
    R = dist.scale_R
    if R == 0:
        return np.zeros(size + (3,))
    if dist.kind == "normal":
        out = rng.normal(size=size + (3,)) * R
        out[..., 2] *= dist.z_ratio
        return out
    # area-uniform disk by polar sampling
    r = R * np.sqrt(rng.random(size))
    phi = rng.uniform(0, 2 * np.pi, size)
    zmax = dist.z_ratio * R
    z = rng.uniform(-zmax, zmax, size)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)


def sample_displacement(dist: PlacementDistribution, rng: np.random.Generator) -> np.ndarray:
    return sample_displacements(dist, rng, ())


@dataclass(frozen=True, eq=False)
class DeviceRealization:
    """One fabricated device: a displacement per data qubit, fixed for its lifetime."""

    code_distance: int
    d: float
    D: float
    orbit_mode: str
    displacements: np.ndarray
    rng_seed: int | None
    dist: PlacementDistribution | None = None
    n_integration_steps: int = 512
    _lattice: PlanarCodeLattice = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        lat = build_lattice(self.code_distance)
        disp = np.array(self.displacements, dtype=float)
        if disp.shape != (lat.n_data, 3):
            raise ValueError(f"expected {lat.n_data} displacements, got shape {disp.shape}")
        disp.setflags(write=False)
        object.__setattr__(self, "displacements", disp)
        object.__setattr__(self, "_lattice", lat)
        if self.orbit_mode not in ("abrupt", "circular"):
            raise ValueError(f"unknown orbit mode {self.orbit_mode!r}")

    @property
    def lattice(self) -> PlanarCodeLattice:
        return self._lattice

    @property
    def n_data(self) -> int:
        return self._lattice.n_data

    def orbit(self) -> OrbitSpec:
        """Dimensionless orbit (probe height 1) with calibrated time scale."""
        return calibrated_orbit(self.orbit_mode, self.D / self.d, self.n_integration_steps)

    def to_dict(self) -> dict:
        return {
            "code_distance": self.code_distance,
            "d": self.d,
            "D": self.D,
            "orbit_mode": self.orbit_mode,
            "rng_seed": self.rng_seed,
            "dist": None if self.dist is None else self.dist.to_dict(),
            "n_integration_steps": self.n_integration_steps,
            # repr of floats round-trips exactly through JSON
            "displacements": self.displacements.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "DeviceRealization":
        data = json.loads(text)
        dist = data.pop("dist")
        return cls(dist=None if dist is None else PlacementDistribution(**dist), **data)


def build_device(distance: int, d: float, D: float, dist: PlacementDistribution, orbit_mode: str,
                 seed: int, n_integration_steps: int = 512) -> DeviceRealization:
    lat = build_lattice(distance)
    rng = np.random.default_rng(seed)
    disp = sample_displacements(dist, rng, lat.n_data)
    return DeviceRealization(distance, float(d), float(D), orbit_mode, disp, seed, dist, n_integration_steps)


@lru_cache(maxsize=64)
def calibrated_orbit(mode: str, pitch_ratio: float, n_steps: int = 512) -> OrbitSpec:
    orbit = OrbitSpec(mode=mode, height=1.0, pitch=pitch_ratio, n_integration_steps=n_steps)
    return orbit.with_time_scale(calibrate(orbit))


def qubit_corner_deltas(displacements: np.ndarray, orbit: OrbitSpec) -> np.ndarray:
    """Phase error of each data qubit in each corner role, shape ``(..., n, 4)``.

    ``displacements`` are in units of the probe height and ``orbit`` must
    carry a calibrated ``time_scale``.
    """
    if orbit.time_scale is None:
        raise ValueError("orbit must be calibrated")
    disp = np.asarray(displacements, dtype=float)
    out = np.empty(disp.shape[:-1] + (4,))
    for c in range(4):
        pos = orbit.corners[c] + disp
        if orbit.mode == "abrupt":
            theta = phase_abrupt(pos, orbit.hover_points[c], orbit.time_scale)
        else:
            theta = phase_circular(pos, orbit, corner=c, period=orbit.time_scale)
        out[..., c] = theta - np.pi / 2
    return out


def face_deltas(lattice: PlanarCodeLattice, corner_deltas: np.ndarray) -> dict[str, np.ndarray]:
    """Gather per-qubit corner deltas into per-face arrays ``(..., n_faces, 4)``.

    Absent corners of weight-3 faces are zero.
    """
    out = {}
    for kind in ("Z", "X"):
        sup = lattice.supports[kind]
        safe = np.where(sup >= 0, sup, 0)
        vals = corner_deltas[..., safe, np.arange(4)]
        out[kind] = np.where(sup >= 0, vals, 0.0)
    return out


@dataclass(frozen=True)
class StabilizerChannel:
    stabilizer_id: str
    kind: str
    index: int
    weight: int
    support: tuple
    deltas: tuple

    def __post_init__(self):
        if len(self.deltas) != self.weight or len(self.support) != self.weight:
            raise ValueError("deltas and support must match the weight")


def derive_channels(device: DeviceRealization) -> list[StabilizerChannel]:
    """Systematic phase errors for every face, Z faces first."""
    lat = device.lattice
    qd = qubit_corner_deltas(device.displacements / device.d, device.orbit())
    faces = face_deltas(lat, qd)
    channels = []
    for kind in ("Z", "X"):
        for s in range(lat.n_stabs(kind)):
            row = lat.supports[kind][s]
            cols = np.flatnonzero(row >= 0)
            channels.append(StabilizerChannel(
                stabilizer_id=lat.stab_id(kind, s),
                kind=kind,
                index=s,
                weight=len(cols),
                support=tuple(int(q) for q in row[cols]),
                deltas=tuple(float(x) for x in faces[kind][s, cols]),
            ))
    return channels
