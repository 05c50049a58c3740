"""Dipolar probe/data coupling and the phases it imprints along probe orbits.

Phases are measured in the orientation where a probe directly above a data
qubit accumulates a positive conditional phase; the device is calibrated so
that this ideal geometry yields exactly pi/2 per interaction.

Couplings use the phase convention: a probe at relative position ``r`` drives
the two-spin gate ``S(theta)`` at rate ``|c(r)|`` with
``c(r) = J (1 - 3 cos^2 Theta) / |r|^3``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Literal

import mpmath
import numpy as np
from scipy import constants, optimize

__all__ = [
    "ELECTRON_COUPLING",
    "CalibrationError",
    "OrbitSpec",
    "SpinPairConfig",
    "calibrate",
    "corner_angles",
    "exact_two_spin_check",
    "injected_state",
    "cycle_time",
    "injection_sequence_check",
    "phase_abrupt",
    "phase_circular",
    "secular_zz_rate",
    "two_spin_gate",
]

_G_E = abs(constants.physical_constants["electron g factor"][0])
_MU_B = constants.physical_constants["Bohr magneton"][0]

#: Coupling of two electron spins in phase convention (rad m^3 / s).  Half of
#: mu0 g^2 muB^2 / (4 pi hbar): the S = sigma/2 spin operators contribute 1/4
#: and S(theta) = exp(-i theta Z1 Z2 / 2) doubles the ZZ coefficient.
ELECTRON_COUPLING = constants.mu_0 * _G_E**2 * _MU_B**2 / (8 * math.pi * constants.hbar)

OrbitMode = Literal["abrupt", "circular"]


class CalibrationError(RuntimeError):
    """Root bracketing or step-size convergence failed."""


@dataclass(frozen=True)
class SpinPairConfig:
    rel_pos: tuple[float, float, float]
    coupling_const: float = 1.0
    detuning: float = 0.0

    def __post_init__(self):
        if not np.linalg.norm(self.rel_pos) > 0:
            raise ValueError("rel_pos must be non-zero")
        if not self.coupling_const > 0:
            raise ValueError("coupling_const must be positive")


def corner_angles() -> np.ndarray:
    """Angles of the four stabilizer corners seen from the face centre, in visit order."""
    return np.pi / 4 + np.arange(4) * np.pi / 2


@dataclass(frozen=True)
class OrbitSpec:
    """Probe trajectory around one stabilizer face.

    Lengths share one unit.  The face centre is the origin, data qubits sit
    nominally at ``z = 0`` on a circle of radius ``pitch / sqrt(2)``, and the
    probe moves in the plane ``z = height``.  ``time_scale`` is the dwell per
    corner (abrupt) or the period of one loop (circular); ``None`` means
    "calibrate on demand".
    """

    mode: OrbitMode = "abrupt"
    height: float = 1.0
    pitch: float = 10.0
    radius: float | None = None
    n_integration_steps: int = 512
    time_scale: float | None = None
    hover_points: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.mode not in ("abrupt", "circular"):
            raise ValueError(f"unknown orbit mode {self.mode!r}")
        if self.height <= 0:
            raise ValueError("height must be positive")
        if self.pitch < 10 * self.height * (1 - 1e-12):
            raise ValueError("pitch must be at least 10x the probe height")
        if self.n_integration_steps < 64 or self.n_integration_steps % 2:
            raise ValueError("n_integration_steps must be even and >= 64")
        if self.radius is None:
            object.__setattr__(self, "radius", self.pitch / math.sqrt(2))
        ang = corner_angles()
        pts = np.stack([self.radius * np.cos(ang), self.radius * np.sin(ang), np.full(4, self.height)], axis=1)
        object.__setattr__(self, "hover_points", pts)

    @property
    def corners(self) -> np.ndarray:
        """Nominal data-qubit sites (4, 3)."""
        pts = self.hover_points.copy()
        pts[:, 2] = 0.0
        return pts

    def with_time_scale(self, time_scale: float) -> "OrbitSpec":
        return OrbitSpec(self.mode, self.height, self.pitch, self.radius, self.n_integration_steps, time_scale)


def secular_zz_rate(pair: SpinPairConfig | np.ndarray, coupling: float | None = None) -> float | np.ndarray:
    """ZZ phase rate ``J (1 - 3 cos^2 Theta) / r^3``, sign retained.

    Accepts a :class:`SpinPairConfig` or a raw array of relative positions
    with shape ``(..., 3)`` (then ``coupling`` defaults to 1).
    """
    if isinstance(pair, SpinPairConfig):
        r = np.asarray(pair.rel_pos, dtype=float)
        coupling = pair.coupling_const
    else:
        r = np.asarray(pair, dtype=float)
        coupling = 1.0 if coupling is None else coupling
    r2 = np.sum(r * r, axis=-1)
    if np.any(r2 == 0):
        raise ValueError("zero-length separation")
    rate = coupling * (r2 - 3 * r[..., 2] ** 2) / r2**2.5
    return float(rate) if np.ndim(rate) == 0 else rate


def phase_abrupt(data_pos, hover_point, dwell_time: float, coupling: float = 1.0):
    """Phase acquired while the probe hovers at ``hover_point`` for ``dwell_time``.

    Broadcasts over leading axes of ``data_pos``.
    """
    if dwell_time <= 0:
        raise ValueError("dwell_time must be positive")
    rel = np.asarray(hover_point, dtype=float) - np.asarray(data_pos, dtype=float)
    return np.abs(secular_zz_rate(rel, coupling)) * dwell_time


def _simpson_weights(n: int) -> np.ndarray:
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w / 3.0


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(4)


def _abs_rate(r2: np.ndarray, dz2: np.ndarray) -> np.ndarray:
    """``|r2 - 3 dz2| / r2^(5/2)`` with few temporaries (this is the hot loop)."""
    den = np.sqrt(r2)
    den *= r2
    den *= r2
    num = r2 - 3 * dz2
    np.abs(num, out=num)
    num /= den
    return num


def _arc_integral(data_pos, orbit: OrbitSpec, corner: int, n_steps: int, coupling: float,
                  chunk: int = 512) -> np.ndarray:
    """Integral of |c| over the quarter arc centred on ``corner``, per radian.

    Composite Simpson on a grid shared by all positions.  Along the arc the
    squared separation is ``a + A cos(phi - phi0)`` for each data position,
    so the grid values come from one small matmul.  ``|c|`` has a kink
    wherever ``r^2 = 3 dz^2``; those (at most two) roots are found in closed
    form and the Simpson panels holding them are re-integrated piecewise
    with Gauss-Legendre, which keeps the fourth-order convergence.
    """
    data_pos = np.asarray(data_pos, dtype=float)
    centre = corner_angles()[corner]
    h = (np.pi / 2) / n_steps
    rel = np.linspace(-np.pi / 4, np.pi / 4, n_steps + 1)
    w = _simpson_weights(n_steps) * h
    trig = np.stack([np.ones_like(rel), np.cos(rel + centre), np.sin(rel + centre)])
    flat = data_pos.reshape(-1, 3)
    out = np.empty(len(flat))
    rad = orbit.radius
    n_panels = n_steps // 2
    for lo in range(0, len(flat), chunk):
        x, y, z = flat[lo:lo + chunk].T
        m = len(x)
        dz2 = (orbit.height - z) ** 2
        coef = np.stack([rad * rad + x * x + y * y + dz2, -2 * rad * x, -2 * rad * y], axis=1)
        r2 = coef @ trig
        if np.any(r2 <= 0):
            raise ValueError("zero-length separation")
        grid = _abs_rate(r2, dz2[:, None])
        total = grid @ w

        a = coef[:, 0]
        amp = np.hypot(coef[:, 1], coef[:, 2])
        # phase of the cosine, measured from the arc centre
        phi0 = np.arctan2(coef[:, 2], coef[:, 1]) - centre
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (3 * dz2 - a) / amp
        has = np.abs(t) < 1
        alpha = np.arccos(np.where(has, t, 0.0))
        roots = np.angle(np.exp(1j * (phi0[:, None] + np.array([-1.0, 1.0]) * alpha[:, None])))
        valid = has[:, None] & (np.abs(roots) < np.pi / 4)
        panel = np.clip(((roots + np.pi / 4) // (2 * h)).astype(np.int64), 0, n_panels - 1)
        panel = np.where(valid, panel, -1)
        # a panel holding both roots is redone once
        second = valid[:, 1] & (panel[:, 1] != panel[:, 0])
        rows = np.arange(m)
        for col, use in ((0, valid[:, 0]), (1, second)):
            if not use.any():
                continue
            p = np.where(use, panel[:, col], 0)
            left = rel[2 * p]
            right = rel[2 * p + 2]
            simpson = (h / 3) * (grid[rows, 2 * p] + 4 * grid[rows, 2 * p + 1] + grid[rows, 2 * p + 2])
            cuts = np.sort(np.clip(np.where(valid, roots, left[:, None]), left[:, None], right[:, None]), axis=1)
            edges = np.concatenate([left[:, None], cuts, right[:, None]], axis=1)  # (m, 4)
            mid = 0.5 * (edges[:, 1:] + edges[:, :-1])
            half = 0.5 * (edges[:, 1:] - edges[:, :-1])
            nodes = mid[..., None] + half[..., None] * _GL_NODES  # (m, 3, q)
            r2n = a[:, None, None] + amp[:, None, None] * np.cos(nodes - phi0[:, None, None])
            piece = np.sum(half * (_abs_rate(r2n, dz2[:, None, None]) @ _GL_WEIGHTS), axis=1)
            total += np.where(use, piece - simpson, 0.0)
        out[lo:lo + chunk] = coupling * total
    return out.reshape(data_pos.shape[:-1])


def phase_circular(data_pos, orbit: OrbitSpec, coupling: float = 1.0, corner: int | None = None,
                   period: float | None = None, n_steps: int | None = None):
    """Phase acquired from the quarter of a circular loop assigned to ``corner``.

    ``corner`` defaults to the corner nearest ``data_pos`` (single positions
    only).  The time integral uses composite Simpson quadrature in the orbit
    angle; the probe moves at constant angular speed ``2 pi / period``.
    """
    if orbit.mode != "circular":
        raise ValueError("orbit is not circular")
    period = period if period is not None else orbit.time_scale
    if period is None:
        period = calibrate(orbit, coupling)
    n_steps = n_steps or orbit.n_integration_steps
    if corner is None:
        p = np.asarray(data_pos, dtype=float)
        if p.ndim != 1:
            raise ValueError("corner is required for batched positions")
        corner = int(np.argmin(np.linalg.norm(orbit.corners[:, :2] - p[:2], axis=1)))
    integral = _arc_integral(data_pos, orbit, corner, n_steps, coupling)
    return period / (2 * np.pi) * integral


def _ideal_phase(orbit: OrbitSpec, coupling: float) -> Callable[[float], float]:
    corner = orbit.corners[0]
    if orbit.mode == "abrupt":
        return lambda t: float(phase_abrupt(corner, orbit.hover_points[0], t, coupling))
    return lambda t: float(phase_circular(corner, orbit, coupling, corner=0, period=t))


def calibrate(orbit: OrbitSpec, coupling: float = 1.0, rtol: float = 1e-13) -> float:
    """Dwell time (abrupt) or loop period (circular) giving pi/2 at ideal placement."""
    f = _ideal_phase(orbit, coupling)
    target = np.pi / 2
    lo, hi = 0.0, 1.0
    val = f(hi)
    if not np.isfinite(val) or val <= 0:
        raise CalibrationError("ideal phase is not positive; cannot calibrate")
    steps = 0
    while val < target:
        lo, hi = hi, hi * 2.0
        val = f(hi)
        steps += 1
        if steps > 2000:
            raise CalibrationError("failed to bracket calibration root")
    # guard against a vanishing lower bracket so bisection stays relative
    if lo == 0.0:
        lo = hi
        while f(lo) > target:
            lo /= 2.0
            steps += 1
            if steps > 4000:
                raise CalibrationError("failed to bracket calibration root")
    root = optimize.bisect(lambda t: f(t) - target, lo, hi, xtol=1e-300, rtol=rtol, maxiter=2000)
    # the phase is linear in the time scale, so one secant step from the
    # origin removes the bisection tolerance
    return float(root * target / f(root))


def cycle_time(orbit: OrbitSpec, coupling: float = 1.0) -> float:
    """Time for one stabilizer's four interactions."""
    t = orbit.time_scale if orbit.time_scale is not None else calibrate(orbit, coupling)
    return 4 * t if orbit.mode == "abrupt" else t


# --- dense two-spin checks -------------------------------------------------

_I2 = np.eye(2, dtype=complex)
_PX = np.array([[0, 1], [1, 0]], dtype=complex)
_PY = np.array([[0, -1j], [1j, 0]], dtype=complex)
_PZ = np.diag([1.0 + 0j, -1.0])


def two_spin_gate(theta: float) -> np.ndarray:
    """``S(theta) = diag(1, e^{i theta}, e^{i theta}, 1)`` on (probe, data)."""
    e = np.exp(1j * theta)
    return np.diag([1.0, e, e, 1.0])


def _dipolar_matrix(rhat: np.ndarray, secular_only: bool) -> np.ndarray:
    paulis = (_PX, _PY, _PZ)
    if secular_only:
        return (1 - 3 * rhat[2] ** 2) * np.kron(_PZ, _PZ)
    h = sum(np.kron(p, p) for p in paulis)
    r1 = sum(rhat[a] * paulis[a] for a in range(3))
    return h - 3 * np.kron(r1, r1)


def exact_two_spin_check(detuning_ratio: float, geometry: SpinPairConfig, duration: float | None = None,
                         secular_only: bool = False) -> float:
    """Deviation of exact two-spin evolution from the secular gate ``S(theta)``.

    The Zeeman terms put the probe at ``2 Delta`` and the data qubit at
    ``Delta`` so that single flips, flip-flops and flip-flips are all detuned
    by at least ``Delta = detuning_ratio * J / r^3``.  The dipolar term is
    ``(J / 2 r^3)(s1.s2 - 3 (r.s1)(r.s2))`` in Pauli matrices, whose ZZ part
    reproduces the secular rate.  Returns the max entry-wise deviation after
    moving to the Zeeman interaction frame and removing global and local Z
    phases.  ``duration`` defaults to the calibrated pi/2 gate.
    """
    if detuning_ratio < 1:
        raise ValueError("detuning_ratio must be >= 1")
    r = np.asarray(geometry.rel_pos, dtype=float)
    rn = float(np.linalg.norm(r))
    scale = geometry.coupling_const / rn**3
    c = secular_zz_rate(geometry)
    if duration is None:
        duration = (np.pi / 2) / abs(c)
    delta = detuning_ratio * scale
    zeeman = np.diag(delta * np.kron(_PZ, _I2) + 0.5 * delta * np.kron(_I2, _PZ)).real
    dip = 0.5 * scale * _dipolar_matrix(r / rn, secular_only)
    # Zeeman phases reach ~detuning_ratio radians; float64 would swamp the
    # dipolar term in the sum and lose ~1e-10 in the exponent
    with mpmath.workdps(40):
        h = mpmath.matrix(dip.tolist()) + mpmath.diag([mpmath.mpf(float(x)) for x in zeeman])
        u = mpmath.expm(h * mpmath.mpc(0, -duration))
        frame = mpmath.diag([mpmath.expj(mpmath.mpf(float(x)) * duration) for x in zeeman])
        u_int = np.array((frame * u).tolist(), dtype=complex)

    target = np.diag(np.exp(-0.5j * c * duration * np.array([1, -1, -1, 1])))
    ratio = np.angle(np.diag(u_int) / np.diag(target))
    z1 = np.array([1, 1, -1, -1])
    z2 = np.array([1, -1, 1, -1])
    glob = ratio.mean()
    a = (ratio * z1).mean()
    b = (ratio * z2).mean()
    correction = np.diag(np.exp(-1j * (glob + a * z1 + b * z2)))
    return float(np.max(np.abs(correction @ u_int - target)))


def _rot(pauli: np.ndarray, angle: float) -> np.ndarray:
    return math.cos(angle / 2) * _I2 - 1j * math.sin(angle / 2) * pauli


def _equal_up_to_phase(a: np.ndarray, b: np.ndarray, tol: float) -> bool:
    k = np.argmax(np.abs(b))
    if abs(a.flat[k]) < tol:
        return False
    phase = a.flat[k] / b.flat[k]
    if abs(abs(phase) - 1) > tol:
        return False
    return bool(np.max(np.abs(a - phase * b)) < tol)


def injection_sequence_check(interaction_phase: float = np.pi / 8, tol: float = 1e-12) -> bool:
    """Check the global-pulse magic-state injection sequence.

    Applies ``Y(pi/2)``, ``S(phi)``, ``Z(-pi/8)``, ``Y(-pi/2)`` in time order
    (rotations on the data qubit only) and reads off the net data map for
    each probe basis state.  True iff it is the identity for probe |0> and
    ``X(pi/4)`` for probe |1>, both up to global phase.
    """
    seq = (
        np.kron(_I2, _rot(_PY, -np.pi / 2))
        @ np.kron(_I2, _rot(_PZ, -np.pi / 8))
        @ two_spin_gate(interaction_phase)
        @ np.kron(_I2, _rot(_PY, np.pi / 2))
    )
    blocks = seq.reshape(2, 2, 2, 2)
    if np.max(np.abs(blocks[0, :, 1, :])) > tol or np.max(np.abs(blocks[1, :, 0, :])) > tol:
        return False
    on_zero = blocks[0, :, 0, :]
    on_one = blocks[1, :, 1, :]
    return _equal_up_to_phase(on_zero, _I2, tol) and _equal_up_to_phase(on_one, _rot(_PX, np.pi / 4), tol)


def injected_state(probe_bit: int) -> np.ndarray:
    """Data state produced from |0> by the injection sequence."""
    seq = (
        np.kron(_I2, _rot(_PY, -np.pi / 2))
        @ np.kron(_I2, _rot(_PZ, -np.pi / 8))
        @ two_spin_gate(np.pi / 8)
        @ np.kron(_I2, _rot(_PY, np.pi / 2))
    )
    psi = np.zeros(4, dtype=complex)
    psi[2 * probe_bit] = 1.0
    out = (seq @ psi).reshape(2, 2)[probe_bit]
    k = int(np.argmax(np.abs(out)))
    return out * (abs(out[k]) / out[k])
