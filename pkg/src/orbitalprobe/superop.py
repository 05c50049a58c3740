"""Twirled parity-measurement channel: closed forms and a dense oracle.

A stabilizer measurement with systematic phase errors ``delta`` and random
twirling reduces to a probabilistic mixture of perfect parity projections
followed by Z patterns.  For each input parity there are eight outcomes,
listed in the fixed order of :data:`OUTCOME_NAMES`; the first four report the
true parity and the last four report the flipped one.

Weight-4 outcome probabilities have the form

    p(A, sign) = (prod_{i in A} S_i prod_{i not in A} C_i
                  + sign * prod_{i not in A} S_i prod_{i in A} C_i)^2

with ``C_i = cos(delta_i / 2)``, ``S_i = sin(delta_i / 2)`` and ``A`` the Z
pattern.  Weight 3 drops the second term.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "BranchTable",
    "OUTCOME_NAMES",
    "OUTCOME_PATTERNS",
    "OracleResidualError",
    "ProjectorWeights",
    "REPORT_FLIP",
    "branch_probabilities",
    "branch_table",
    "branch_table_weight3",
    "brute_force_oracle",
    "export_branch_csv",
    "projector_weights",
    "sample_branch",
    "sample_outcomes",
]


class OracleResidualError(ArithmeticError):
    """The dense channel is not a mixture of projection x Z-pattern operators."""


def _mask(labels: str) -> tuple[int, ...]:
    return tuple(int(ch == "Z") for ch in labels)


# Outcome order per input parity.  Index < 4 keeps the reported parity.
_PATTERNS = {
    4: ["1111", "1ZZ1", "1Z1Z", "11ZZ", "Z111", "1Z11", "11Z1", "111Z"],
    3: ["111", "1ZZ", "Z1Z", "ZZ1", "ZZZ", "Z11", "1Z1", "11Z"],
}
_EVEN_NAMES = {
    4: ["omega_even", "Gamma_1ZZ1", "Gamma_1Z1Z", "Gamma_11ZZ", "zeta_Z111", "zeta_1Z11", "zeta_11Z1", "zeta_111Z"],
    3: ["omega_even", "Gamma_1ZZ", "Gamma_Z1Z", "Gamma_ZZ1", "zeta_ZZZ", "zeta_Z11", "zeta_1Z1", "zeta_11Z"],
}
_ODD_NAMES = {
    4: ["omega_odd", "lambda_1ZZ1", "lambda_1Z1Z", "lambda_11ZZ", "Delta_Z111", "Delta_1Z11", "Delta_11Z1", "Delta_111Z"],
    3: ["omega_odd", "lambda_1ZZ", "lambda_Z1Z", "lambda_ZZ1", "Delta_ZZZ", "Delta_Z11", "Delta_1Z1", "Delta_11Z"],
}

#: ``OUTCOME_PATTERNS[k][j]`` is the Z mask (length k) of outcome ``j``.
OUTCOME_PATTERNS = {k: np.array([_mask(p) for p in pats], dtype=np.uint8) for k, pats in _PATTERNS.items()}
#: Whether outcome ``j`` reports the opposite of the true parity.
REPORT_FLIP = np.array([0, 0, 0, 0, 1, 1, 1, 1], dtype=bool)
#: Names of the outcomes per (weight, input parity).
OUTCOME_NAMES = {(k, 0): _EVEN_NAMES[k] for k in (3, 4)} | {(k, 1): _ODD_NAMES[k] for k in (3, 4)}

# sign of the cross term for each outcome, per input parity (weight 4 only)
_SIGNS4 = np.array([[1, 1, 1, 1, -1, -1, -1, -1], [-1, -1, -1, -1, 1, 1, 1, 1]], dtype=float)


@dataclass(frozen=True)
class ProjectorWeights:
    """Diagonal weights of the distorted even-parity projector.

    ``c[i]`` multiplies the even pair of basis states built on |0000>,
    |0011>, |0101>, |0110>; ``s[i]`` multiplies the odd pair built on |0001>,
    |0010>, |0100>, |0111>.
    """

    c: np.ndarray
    s: np.ndarray


_EVEN_REPS = np.array([[0, 0, 0, 0], [0, 0, 1, 1], [0, 1, 0, 1], [0, 1, 1, 0]])
_ODD_REPS = np.array([[0, 0, 0, 1], [0, 0, 1, 0], [0, 1, 0, 0], [0, 1, 1, 1]])


def projector_weights(deltas: Sequence[float]) -> ProjectorWeights:
    d = np.asarray(deltas, dtype=float)
    if d.shape != (4,):
        raise ValueError("projector_weights needs four phases")
    c = np.cos(((1 - 2 * _EVEN_REPS) @ d) / 2)
    s = np.sin(((1 - 2 * _ODD_REPS) @ d) / 2)
    return ProjectorWeights(c=c, s=s)


def branch_probabilities(deltas) -> np.ndarray:
    """Outcome probabilities with shape ``(..., 2, 8)``: [input parity, outcome].

    ``deltas`` has shape ``(..., k)`` with k in {3, 4}.
    """
    d = np.asarray(deltas, dtype=float)
    k = d.shape[-1]
    if k not in (3, 4):
        raise ValueError("weight must be 3 or 4")
    half = d / 2
    c = np.cos(half)[..., None, :]
    s = np.sin(half)[..., None, :]
    masks = OUTCOME_PATTERNS[k].astype(bool)
    t1 = np.prod(np.where(masks, s, c), axis=-1)
    if k == 3:
        p = t1**2
        return np.stack([p, p], axis=-2)
    t2 = np.prod(np.where(masks, c, s), axis=-1)
    return (t1[..., None, :] + _SIGNS4 * t2[..., None, :]) ** 2


@dataclass(frozen=True)
class BranchTable:
    """Outcome probabilities for one stabilizer.

    ``even_input[j]`` and ``odd_input[j]`` follow :data:`OUTCOME_NAMES`.
    """

    weight: int
    even_input: np.ndarray
    odd_input: np.ndarray

    @classmethod
    def from_array(cls, probs: np.ndarray, weight: int) -> "BranchTable":
        probs = np.asarray(probs, dtype=float)
        if probs.shape != (2, 8) or weight not in (3, 4):
            raise ValueError("expected a (2, 8) array and weight 3 or 4")
        return cls(weight=weight, even_input=probs[0].copy(), odd_input=probs[1].copy())

    def as_array(self) -> np.ndarray:
        return np.stack([self.even_input, self.odd_input])

    def as_dict(self) -> dict[str, float]:
        out = dict(zip(OUTCOME_NAMES[(self.weight, 0)], map(float, self.even_input)))
        out.update(zip(OUTCOME_NAMES[(self.weight, 1)], map(float, self.odd_input)))
        return out

    def __getitem__(self, name: str) -> float:
        return self.as_dict()[name]

    @property
    def even_report(self) -> dict[str, float]:
        """Entries whose Kraus operator is attached to an even probe result."""
        d = self.as_dict()
        names = OUTCOME_NAMES[(self.weight, 0)][:4] + OUTCOME_NAMES[(self.weight, 1)][4:]
        return {n: d[n] for n in names}

    @property
    def odd_report(self) -> dict[str, float]:
        d = self.as_dict()
        names = OUTCOME_NAMES[(self.weight, 1)][:4] + OUTCOME_NAMES[(self.weight, 0)][4:]
        return {n: d[n] for n in names}

    def max_abs_diff(self, other: "BranchTable") -> float:
        if self.weight != other.weight:
            raise ValueError("weights differ")
        return float(np.max(np.abs(self.as_array() - other.as_array())))


def _table(deltas, k: int) -> BranchTable:
    d = np.asarray(deltas, dtype=float)
    if d.shape != (k,):
        raise ValueError(f"expected {k} phases, got shape {d.shape}")
    p = branch_probabilities(d)
    return BranchTable(weight=k, even_input=p[0], odd_input=p[1])


def branch_table(deltas: Sequence[float]) -> BranchTable:
    """Closed-form weight-4 branch table."""
    return _table(deltas, 4)


def branch_table_weight3(deltas: Sequence[float]) -> BranchTable:
    """Closed-form weight-3 branch table."""
    return _table(deltas, 3)


# --- sampling ----------------------------------------------------------------

def sample_outcomes(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF sampling along the last axis of ``probs`` with uniforms ``u``.

    Probabilities are renormalized, which only absorbs rounding.
    """
    cdf = np.cumsum(probs, axis=-1)
    u = u * cdf[..., -1]
    idx = np.sum(cdf[..., :-1] <= u[..., None], axis=-1)
    return idx


def sample_branch(channel, jitter_phases: Sequence[float], true_parity: int, rng: np.random.Generator
                  ) -> tuple[int, np.ndarray]:
    """Draw one measurement outcome for a stabilizer.

    ``channel`` is a :class:`~orbitalprobe.geometry.StabilizerChannel` or any
    object with a ``deltas`` attribute.  Returns the reported parity and the
    Z mask applied to the stabilizer's qubits (in support order).
    """
    deltas = np.asarray(channel.deltas, dtype=float)
    jitter = np.asarray(jitter_phases, dtype=float)
    if jitter.shape != deltas.shape:
        raise ValueError("jitter length must equal stabilizer weight")
    probs = branch_probabilities(deltas + jitter)[int(true_parity)]
    j = int(sample_outcomes(probs, rng.random()))
    reported = int(true_parity) ^ int(REPORT_FLIP[j])
    return reported, OUTCOME_PATTERNS[deltas.size][j].copy()


def export_branch_csv(path, tables: Iterable[tuple[object, BranchTable]]) -> None:
    """Write ``stabilizer_id`` plus the 16 probabilities per row.

    Weight-3 rows use their own names; columns are ``p0..p15`` in
    even-input then odd-input order, with the names in a ``labels`` column.
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stabilizer_id", "weight"] + [f"p{i}" for i in range(16)] + ["labels"])
        for sid, t in tables:
            names = OUTCOME_NAMES[(t.weight, 0)] + OUTCOME_NAMES[(t.weight, 1)]
            w.writerow([sid, t.weight] + [repr(float(x)) for x in t.as_array().ravel()] + [" ".join(names)])


# --- dense oracle ------------------------------------------------------------

_TWIRL_FLIPS = {4: [(), (2, 3), (1, 3), (1, 2)], 3: [(), (1, 2), (0, 2), (0, 1)]}


def _bits(k: int) -> np.ndarray:
    """Rows of the data computational basis, qubit 0 most significant."""
    return np.array(list(itertools.product((0, 1), repeat=k)), dtype=np.int64)


def _measured_data_operator(deltas: np.ndarray, flips: tuple[int, ...], probe_flip: bool, outcome: int
                            ) -> np.ndarray:
    """Diagonal of the data operator conditioned on one probe result.

    The (k+1)-spin process starts with the probe in |+>, applies
    ``S(pi/2 + delta_i)`` between probe and data qubit ``i`` in order,
    projects the probe onto ``(|0> +- e^{i k pi/2} |1>)/sqrt(2)`` and undoes
    the unconditional single-qubit phases.  With ``probe_flip`` the twirl
    pattern is realized by flipping the probe around each flagged
    interaction instead of the data qubit; otherwise the data flips are
    applied here as a conjugation.
    """
    k = deltas.size
    bits = _bits(k)
    flip = np.zeros(k, dtype=bool)
    flip[list(flips)] = True
    theta = np.pi / 2 + deltas
    probe_slots = flip if probe_flip else np.zeros(k, dtype=bool)
    amps = []
    for p in (0, 1):
        # a flipped probe picks up the phase when its bit equals the data bit
        cond = np.where(probe_slots, bits == p, bits != p)
        amps.append(np.exp(1j * (cond * theta).sum(axis=1)) / np.sqrt(2))
    m = np.array([1.0, np.exp(1j * k * np.pi / 2) * (1 if outcome == 0 else -1)]) / np.sqrt(2)
    op = np.conj(m[0]) * amps[0] + np.conj(m[1]) * amps[1]
    # remove the unconditional phase exp(i pi/2 * b) each qubit carries; with
    # a flipped slot the phase attaches to the opposite data value
    corr_bits = np.where(probe_slots, 1 - bits, bits)
    op = op * np.exp(-1j * np.pi / 2 * corr_bits.sum(axis=1))
    if not probe_flip:
        # X conjugation of flagged data qubits permutes the diagonal
        op = op[_flip_index(bits, flip)]
    return op


def _flip_index(bits: np.ndarray, flip: np.ndarray) -> np.ndarray:
    flipped = np.where(flip, 1 - bits, bits)
    weights = 1 << np.arange(bits.shape[1] - 1, -1, -1)
    return flipped @ weights


def _channel_matrix(deltas: np.ndarray, outcome: int, probe_flip: bool, cross_term_layer: bool) -> np.ndarray:
    """``M[a, b]`` such that the twirled channel maps |a><b| to ``M[a, b] |a><b|``."""
    k = deltas.size
    bits = _bits(k)
    zall = (-1.0) ** bits.sum(axis=1)
    total = np.zeros((2**k, 2**k), dtype=complex)
    for flips in _TWIRL_FLIPS[k]:
        op = _measured_data_operator(deltas, flips, probe_flip, outcome)
        term = np.outer(op, np.conj(op))
        if cross_term_layer:
            zop = zall * op
            term = 0.5 * term + 0.5 * np.outer(zop, np.conj(zop))
        total += term / len(_TWIRL_FLIPS[k])
    return total


def _dictionary(k: int) -> tuple[list[tuple[int, tuple[int, ...]]], np.ndarray]:
    """Perfect projection x Z-pattern elements, one per class mod Z^k.

    Returns the (projection parity, pattern) labels and the stacked
    ``D[a, b]`` coefficient arrays, flattened.
    """
    bits = _bits(k)
    parity = bits.sum(axis=1) % 2
    labels, cols = [], []
    for proj in (0, 1):
        keep = (parity == proj).astype(float)
        for pat in itertools.product((0, 1), repeat=k):
            if pat[0]:
                continue  # first bit 0 picks one representative per class
            sign = (-1.0) ** (bits @ np.array(pat))
            diag = keep * sign
            labels.append((proj, pat))
            cols.append(np.outer(diag, diag).ravel())
    return labels, np.stack(cols, axis=1)


def _class_key(pattern: Sequence[int]) -> tuple[int, ...]:
    pat = tuple(int(x) for x in pattern)
    return tuple(1 - x for x in pat) if pat[0] else pat


def brute_force_oracle(deltas: Sequence[float], *, probe_flip: bool = False, cross_term_layer: bool = True,
                       residual_tol: float = 1e-9) -> BranchTable:
    """Branch table from the explicit (k+1)-spin process.

    The twirled channel for each probe result is decomposed over the
    dictionary of perfect projections times Z patterns by least squares.
    Raises :class:`OracleResidualError` if the decomposition leaves a
    residual above ``residual_tol``.
    """
    d = np.asarray(deltas, dtype=float)
    k = d.size
    if k not in (3, 4) or d.shape != (k,):
        raise ValueError("oracle supports 3 or 4 phases")
    labels, basis = _dictionary(k)
    coef = {}
    for outcome in (0, 1):
        m = _channel_matrix(d, outcome, probe_flip, cross_term_layer).ravel()
        x, *_ = np.linalg.lstsq(basis, m, rcond=None)
        resid = float(np.max(np.abs(basis @ x - m)))
        if resid > residual_tol:
            raise OracleResidualError(f"channel residual {resid:.3e} outside the projection dictionary")
        for (proj, pat), val in zip(labels, x):
            coef[(outcome, proj, pat)] = float(val.real)
    probs = np.zeros((2, 8))
    for parity in (0, 1):
        for j, pat in enumerate(OUTCOME_PATTERNS[k]):
            reported = parity ^ int(REPORT_FLIP[j])
            probs[parity, j] = coef[(reported, parity, _class_key(pat))]
    return BranchTable(weight=k, even_input=probs[0], odd_input=probs[1])
