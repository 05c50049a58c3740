"""Planar surface code: lattice, Pauli frames, and noisy stabilizer rounds.

Coordinates live on a ``(2d-1) x (2d-1)`` grid.  Data qubits sit where
``i + j`` is even, Z-type faces at (even i, odd j) and X-type faces at
(odd i, even j).  A face at ``(i, j)`` touches ``(i, j+1)``, ``(i-1, j)``,
``(i, j-1)``, ``(i+1, j)``: the corners at 45, 135, 225 and 315 degrees
around the face centre, which is also the order the probe visits them.
Z faces on the top and bottom rows and X faces on the left and right
columns have weight 3.

The logical Z operator runs down column ``j = 0``; logical X along row
``i = 0``.  X errors are detected by Z faces and terminate on the left and
right edges; Z errors mirror that on the top and bottom.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Literal

import numpy as np

from . import noise as _noise
from .superop import OUTCOME_PATTERNS, REPORT_FLIP, branch_probabilities, sample_outcomes

__all__ = [
    "PauliFrame",
    "PlanarCodeLattice",
    "SyndromeHistory",
    "build_lattice",
    "run_memory_experiment",
    "run_round",
    "simulate_batch",
]

StabType = Literal["X", "Z"]
_CORNER_OFFSETS = ((0, 1), (-1, 0), (0, -1), (1, 0))


@dataclass(frozen=True, eq=False)
class PlanarCodeLattice:
    """Immutable description of a distance-``d`` planar code.

    ``supports[t]`` is an ``(n_t, 4)`` array of data-qubit indices per
    corner with ``-1`` where the corner is absent; ``stab_coords[t]`` the
    grid coordinates of each face.
    """

    distance: int
    data_coords: np.ndarray
    stab_coords: dict
    supports: dict
    logical_z: np.ndarray
    logical_x: np.ndarray
    index: dict = field(repr=False)

    @property
    def n_data(self) -> int:
        return len(self.data_coords)

    def n_stabs(self, kind: StabType) -> int:
        return len(self.stab_coords[kind])

    def weights(self, kind: StabType) -> np.ndarray:
        return (self.supports[kind] >= 0).sum(axis=1)

    def support_list(self, kind: StabType, s: int) -> list[int]:
        """Qubits of face ``s`` in visit order."""
        return [int(q) for q in self.supports[kind][s] if q >= 0]

    def check_matrix(self, kind: StabType) -> np.ndarray:
        """Dense 0/1 incidence matrix, faces x data qubits."""
        h = np.zeros((self.n_stabs(kind), self.n_data), dtype=np.uint8)
        for s, row in enumerate(self.supports[kind]):
            h[s, row[row >= 0]] = 1
        return h

    def positions(self, pitch: float = 1.0) -> np.ndarray:
        """Nominal in-plane data positions for nearest-neighbour spacing ``pitch``."""
        i, j = self.data_coords.T
        return 0.5 * pitch * np.stack([i + j, j - i], axis=1).astype(float)

    def stab_id(self, kind: StabType, s: int) -> str:
        i, j = self.stab_coords[kind][s]
        return f"{kind}({i},{j})"

    def dipolar_pairs(self) -> dict[str, np.ndarray]:
        """Data-qubit pairs by geometry.

        ``NN_x`` and ``NN_y`` are nearest neighbours separated along the
        physical x and y axes; ``Diag`` are next-nearest neighbours.
        """
        out = {"NN_x": [], "NN_y": [], "Diag": []}
        for q, (i, j) in enumerate(self.data_coords):
            for kind, (di, dj) in (("NN_x", (1, 1)), ("NN_y", (1, -1)), ("Diag", (0, 2)), ("Diag", (2, 0))):
                other = self.index.get((i + di, j + dj))
                if other is not None:
                    out[kind].append((q, other))
        return {k: np.array(v, dtype=np.int64).reshape(-1, 2) for k, v in out.items()}

    def to_json(self) -> str:
        return json.dumps({
            "distance": self.distance,
            "data": self.data_coords.tolist(),
            "X": self.supports["X"].tolist(),
            "Z": self.supports["Z"].tolist(),
        })


@lru_cache(maxsize=32)
def build_lattice(distance: int) -> PlanarCodeLattice:
    if not isinstance(distance, (int, np.integer)) or distance < 3 or distance % 2 == 0:
        raise ValueError(f"distance must be an odd integer >= 3, got {distance!r}")
    size = 2 * distance - 1
    data = [(i, j) for i in range(size) for j in range(size) if (i + j) % 2 == 0]
    index = {c: q for q, c in enumerate(data)}
    coords = {
        "Z": [(i, j) for i in range(0, size, 2) for j in range(1, size, 2)],
        "X": [(i, j) for i in range(1, size, 2) for j in range(0, size, 2)],
    }
    supports = {}
    for kind, faces in coords.items():
        sup = np.full((len(faces), 4), -1, dtype=np.int64)
        for s, (i, j) in enumerate(faces):
            for c, (di, dj) in enumerate(_CORNER_OFFSETS):
                sup[s, c] = index.get((i + di, j + dj), -1)
        supports[kind] = sup
        supports[kind].setflags(write=False)
    lz = np.array([index[(i, 0)] for i in range(0, size, 2)], dtype=np.int64)
    lx = np.array([index[(0, j)] for j in range(0, size, 2)], dtype=np.int64)
    data_arr = np.array(data, dtype=np.int64)
    for arr in (lz, lx, data_arr):
        arr.setflags(write=False)
    return PlanarCodeLattice(
        distance=int(distance),
        data_coords=data_arr,
        stab_coords={k: np.array(v, dtype=np.int64) for k, v in coords.items()},
        supports=supports,
        logical_z=lz,
        logical_x=lx,
        index=index,
    )


# --- frames ------------------------------------------------------------------

@dataclass
class PauliFrame:
    """Accumulated X and Z errors, one bit per data qubit."""

    x_mask: np.ndarray
    z_mask: np.ndarray

    @classmethod
    def clean(cls, n: int) -> "PauliFrame":
        return cls(np.zeros(n, dtype=np.uint8), np.zeros(n, dtype=np.uint8))

    def __post_init__(self):
        self.x_mask = np.asarray(self.x_mask, dtype=np.uint8)
        self.z_mask = np.asarray(self.z_mask, dtype=np.uint8)
        if self.x_mask.shape != self.z_mask.shape or self.x_mask.ndim != 1:
            raise ValueError("x_mask and z_mask must be 1-D of equal length")

    def copy(self) -> "PauliFrame":
        return PauliFrame(self.x_mask.copy(), self.z_mask.copy())


@dataclass
class SyndromeHistory:
    """Reported parities per round; the last row is the noiseless readout."""

    z_reports: np.ndarray
    x_reports: np.ndarray

    @property
    def n_rounds(self) -> int:
        return self.z_reports.shape[0]

    def reports(self, kind: StabType) -> np.ndarray:
        return self.z_reports if kind == "Z" else self.x_reports

    def defects(self, kind: StabType) -> np.ndarray:
        """Changes between consecutive rounds, the first against all-even."""
        r = self.reports(kind)
        prev = np.vstack([np.zeros_like(r[:1]), r[:-1]])
        return r ^ prev

    def to_json(self) -> str:
        return json.dumps({"Z": self.z_reports.tolist(), "X": self.x_reports.tolist()})


# --- vectorized round engine ---------------------------------------------------

def _parities(mask: np.ndarray, sup: np.ndarray) -> np.ndarray:
    """Parity of ``mask[..., q]`` over each support row (padding ignored)."""
    safe = np.where(sup >= 0, sup, 0)
    vals = mask[..., safe] & (sup >= 0)
    return np.bitwise_xor.reduce(vals, axis=-1)


class _StabGroup:
    """Per-type bookkeeping: weight-4 and weight-3 faces handled separately."""

    def __init__(self, lattice: PlanarCodeLattice, kind: StabType):
        self.kind = kind
        self.sup = lattice.supports[kind]
        w = lattice.weights(kind)
        self.idx4 = np.flatnonzero(w == 4)
        self.idx3 = np.flatnonzero(w == 3)
        present = self.sup[self.idx3] >= 0
        # column positions of the three present corners, in visit order
        self.cols3 = np.array([np.flatnonzero(row) for row in present], dtype=np.int64).reshape(-1, 3)
        self.sup3 = np.take_along_axis(self.sup[self.idx3], self.cols3, axis=1)
        self.sup4 = self.sup[self.idx4]
        # the fancy-indexed XOR in _half_round needs distinct qubits per corner slot
        for sup in (self.sup3, self.sup4):
            for col in sup.T:
                if len(np.unique(col)) != len(col):
                    raise AssertionError(f"{kind} faces share a qubit in one corner slot")


@lru_cache(maxsize=32)
def _groups(distance: int) -> tuple[_StabGroup, _StabGroup]:
    lat = build_lattice(distance)
    return _StabGroup(lat, "Z"), _StabGroup(lat, "X")


def _half_round(group: _StabGroup, read_mask: np.ndarray, write_mask: np.ndarray, deltas: np.ndarray,
                noise: "_noise.NoiseParams", rng: np.random.Generator, counters: dict | None = None) -> np.ndarray:
    """Measure one face type for a batch of trials.

    ``read_mask`` supplies the true parities (X errors for Z faces),
    ``write_mask`` receives the sampled error patterns.  ``deltas`` has shape
    ``(B, n_faces, 4)`` aligned with the face supports.  Returns reported
    parity bits ``(B, n_faces)``.
    """
    batch = read_mask.shape[0]
    n_faces = group.sup.shape[0]
    true = _parities(read_mask, group.sup)
    flips = np.zeros((batch, n_faces), dtype=np.uint8)
    for idx, sup, k in ((group.idx4, group.sup4, 4), (group.idx3, group.sup3, 3)):
        if idx.size == 0:
            continue
        if k == 4:
            d = deltas[:, idx, :]
        else:
            d = np.take_along_axis(deltas[:, idx, :], np.broadcast_to(group.cols3, (batch,) + group.cols3.shape), axis=2)
        if noise.phi_e > 0:
            d = d + rng.uniform(-noise.phi_e, noise.phi_e, size=d.shape)
        probs = branch_probabilities(d)
        par = true[:, idx].astype(np.int64)
        probs = np.take_along_axis(probs, par[..., None, None], axis=-2)[..., 0, :]
        outcome = sample_outcomes(probs, rng.random(par.shape))
        flips[:, idx] = REPORT_FLIP[outcome]
        pats = OUTCOME_PATTERNS[k][outcome]
        for c in range(k):
            # within one corner slot every qubit appears at most once
            write_mask[:, sup[:, c]] ^= pats[:, :, c]
        if counters is not None:
            counters.setdefault("branch_flip", np.zeros((batch, n_faces), dtype=np.int64))[:, idx] += REPORT_FLIP[outcome]
    pflip = _noise.sample_probe_flip(noise, rng, (batch, n_faces))
    parity_after = true ^ flips ^ pflip
    probe_bit = parity_after ^ np.uint8(noise.even_bit)
    mflip = _noise.sample_measurement_flips(probe_bit, noise, rng)
    if counters is not None:
        counters.setdefault("probe_flip", np.zeros((batch, n_faces), dtype=np.int64))
        counters["probe_flip"] += pflip
        counters.setdefault("meas_flip", np.zeros((batch, n_faces), dtype=np.int64))
        counters["meas_flip"] += mflip
        counters.setdefault("wrong", np.zeros((batch, n_faces), dtype=np.int64))
        counters["wrong"] += (parity_after ^ mflip) != true
    return parity_after ^ mflip


def simulate_batch(lattice: PlanarCodeLattice, deltas_z: np.ndarray, deltas_x: np.ndarray,
                   noise: "_noise.NoiseParams", n_rounds: int, rng: np.random.Generator,
                   x_mask: np.ndarray | None = None, z_mask: np.ndarray | None = None,
                   counters: dict | None = None):
    """Run ``n_rounds`` noisy rounds plus the noiseless readout for a batch.

    ``deltas_z``/``deltas_x`` are ``(B, n_faces, 4)`` systematic phase
    errors, or broadcastable ``(1, n_faces, 4)``.  Returns
    ``(z_reports, x_reports, x_mask, z_mask)`` with reports shaped
    ``(B, n_rounds + 1, n_faces)``.
    """
    if n_rounds < 1:
        raise ValueError("n_rounds must be >= 1")
    batch = max(deltas_z.shape[0], deltas_x.shape[0]) if x_mask is None else x_mask.shape[0]
    n = lattice.n_data
    x = np.zeros((batch, n), dtype=np.uint8) if x_mask is None else x_mask
    z = np.zeros((batch, n), dtype=np.uint8) if z_mask is None else z_mask
    dz = np.broadcast_to(deltas_z, (batch,) + deltas_z.shape[1:])
    dx = np.broadcast_to(deltas_x, (batch,) + deltas_x.shape[1:])
    gz, gx = _groups(lattice.distance)
    pairs = lattice.dipolar_pairs() if noise.p_dip > 0 else None
    zr = np.zeros((batch, n_rounds + 1, gz.sup.shape[0]), dtype=np.uint8)
    xr = np.zeros((batch, n_rounds + 1, gx.sup.shape[0]), dtype=np.uint8)
    for t in range(n_rounds):
        zr[:, t] = _half_round(gz, x, z, dz, noise, rng, counters)
        xr[:, t] = _half_round(gx, z, x, dx, noise, rng, counters)
        _noise.apply_data_errors_batch(x, z, noise.p_data, rng)
        if pairs is not None:
            _noise.apply_dipolar_batch(x, z, pairs, noise.p_dip, rng)
    zr[:, -1] = _parities(x, gz.sup)
    xr[:, -1] = _parities(z, gx.sup)
    return zr, xr, x, z


def run_round(frame: PauliFrame, lattice: PlanarCodeLattice, channels, noise: "_noise.NoiseParams",
              rng: np.random.Generator) -> dict[str, np.ndarray]:
    """One noisy round on a single frame, updated in place.

    ``channels`` is the list returned by :func:`geometry.derive_channels`.
    Returns reported bits per face type.
    """
    dz, dx = channels_to_arrays(lattice, channels)
    x = frame.x_mask[None, :].copy()
    z = frame.z_mask[None, :].copy()
    gz, gx = _groups(lattice.distance)
    out = {"Z": _half_round(gz, x, z, dz, noise, rng)[0]}
    out["X"] = _half_round(gx, z, x, dx, noise, rng)[0]
    _noise.apply_data_errors_batch(x, z, noise.p_data, rng)
    if noise.p_dip > 0:
        _noise.apply_dipolar_batch(x, z, lattice.dipolar_pairs(), noise.p_dip, rng)
    frame.x_mask[:] = x[0]
    frame.z_mask[:] = z[0]
    return out


def channels_to_arrays(lattice: PlanarCodeLattice, channels) -> tuple[np.ndarray, np.ndarray]:
    """Scatter per-face deltas into ``(1, n_faces, 4)`` arrays aligned with supports."""
    out = {k: np.zeros((1, lattice.n_stabs(k), 4)) for k in ("Z", "X")}
    for ch in channels:
        kind, s = ch.kind, ch.index
        cols = np.flatnonzero(lattice.supports[kind][s] >= 0)
        out[kind][0, s, cols] = ch.deltas
    return out["Z"], out["X"]


def run_memory_experiment(device, noise: "_noise.NoiseParams", T_rounds: int | None, rng: np.random.Generator
                          ) -> tuple[SyndromeHistory, PauliFrame]:
    """Memory experiment on one device: ``T_rounds`` noisy rounds then readout.

    ``T_rounds=None`` uses the code distance.
    """
    from .geometry import derive_channels

    lattice = build_lattice(device.code_distance)
    T = lattice.distance if T_rounds is None else int(T_rounds)
    dz, dx = channels_to_arrays(lattice, derive_channels(device))
    zr, xr, x, z = simulate_batch(lattice, dz, dx, noise, T, rng)
    return SyndromeHistory(zr[0], xr[0]), PauliFrame(x[0], z[0])
