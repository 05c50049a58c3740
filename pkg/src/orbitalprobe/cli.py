"""Command-line runner: ``orbitalprobe {simulate,threshold,validate,calibrate}``.

Configs are JSON.  Lengths are given in nanometres and converted to ratios
of the probe height once, here.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import math
import os
import sys
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import jsonschema
import numpy as np
from scipy import stats

from . import __version__
from .decoder import DefectGraph, exhaustive_matching, mwpm
from .geometry import PlacementDistribution, sample_displacements
from .montecarlo import ExperimentPoint, PointResult, ThresholdError, default_workers, estimate_threshold, run_point
from .noise import NoiseParams, default_params
from .physics import ELECTRON_COUPLING, OrbitSpec, SpinPairConfig, calibrate, cycle_time, exact_two_spin_check, \
    injection_sequence_check
from .planar import build_lattice
from .superop import branch_probabilities, branch_table, branch_table_weight3, brute_force_oracle

EXIT_OK, EXIT_VALIDATION, EXIT_CONFIG, EXIT_NO_CROSSING = 0, 1, 2, 3

CSV_HEADER = ["distance", "R_frac_of_d", "R_nm_at_40nm", "dist_kind", "orbit", "trials", "failures",
              "p_L", "ci_low", "ci_high", "seed"]

_NOISE_KEYS = {k: {"type": "number", "minimum": 0} for k in
               ("p_prep", "p_single", "p_m0", "p_m1", "p_data", "phi_e", "kappa", "p_dip")}
_NOISE_KEYS["n_rotations"] = {"type": "integer", "minimum": 0}
_NOISE_KEYS["even_bit"] = {"enum": [0, 1]}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["distances", "R_nm"],
    "properties": {
        "distances": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 3}},
        "R_nm": {"type": "array", "minItems": 1, "items": {"type": "number", "minimum": 0}},
        "d_nm": {"type": "number", "exclusiveMinimum": 0},
        "D_nm": {"type": "number", "exclusiveMinimum": 0},
        "distribution": {"enum": ["disk", "pillbox", "normal"]},
        "orbit": {"enum": ["abrupt", "circular"]},
        "noise": {"type": "object", "additionalProperties": False, "properties": _NOISE_KEYS},
        "trials": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "rounds": {"type": ["integer", "null"], "minimum": 1},
        "n_integration_steps": {"type": "integer", "minimum": 64},
        "fixed_device": {"type": "boolean"},
        "score_both": {"type": "boolean"},
        "threads": {"type": ["integer", "null"], "minimum": 1},
        "output": {"type": ["string", "null"]},
        "summary": {"type": ["string", "null"]},
    },
}

DEFAULTS = {
    "d_nm": 40.0,
    "D_nm": 400.0,
    "distribution": "disk",
    "orbit": "circular",
    "noise": {},
    "trials": 1000,
    "seed": 0,
    "rounds": None,
    "n_integration_steps": 512,
    "fixed_device": False,
    "score_both": False,
    "threads": None,
    "output": None,
    "summary": None,
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    raw: dict
    noise: NoiseParams

    @property
    def R_fracs(self) -> list[float]:
        return [r / self.raw["d_nm"] for r in self.raw["R_nm"]]

    def points(self) -> list[ExperimentPoint]:
        c = self.raw
        return [
            ExperimentPoint(
                distance=dist, R_frac=rf, dist_kind=c["distribution"], orbit_mode=c["orbit"], noise=self.noise,
                n_trials=c["trials"], master_seed=c["seed"], D_over_d=c["D_nm"] / c["d_nm"],
                n_rounds=c["rounds"], fixed_device=c["fixed_device"], score_both=c["score_both"],
                n_integration_steps=c["n_integration_steps"],
            )
            for dist in c["distances"] for rf in self.R_fracs
        ]

    def resolved(self) -> dict:
        out = copy.deepcopy(self.raw)
        out["noise"] = self.noise.to_dict()
        return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(raw: dict, overrides: Sequence[str]) -> dict:
    """Apply ``key=value`` (dotted keys, JSON values) overrides."""
    out = copy.deepcopy(raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        node = out
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot override inside non-object {key!r}")
        node[parts[-1]] = _parse_value(value)
    return out


def load_config(raw: dict) -> RunConfig:
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{path}: {exc.message}") from None
    merged = {**copy.deepcopy(DEFAULTS), **copy.deepcopy(raw)}
    if merged["D_nm"] < 10 * merged["d_nm"] * (1 - 1e-12):
        raise ConfigError("D_nm must be at least 10 x d_nm")
    if any(d % 2 == 0 for d in merged["distances"]):
        raise ConfigError("distances must be odd")
    try:
        noise = default_params(merged["orbit"]).replace(**merged["noise"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"noise: {exc}") from None
    cfg = RunConfig(merged, noise)
    try:
        cfg.points()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def read_config(path: str | None, overrides: Sequence[str]) -> RunConfig:
    raw: dict = {}
    if path:
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
    return load_config(apply_overrides(raw, overrides))


# --- output ------------------------------------------------------------------

def _config_line(cfg: RunConfig) -> str:
    return "# config: " + json.dumps(cfg.resolved(), sort_keys=True) + "\n"


def csv_row(point: ExperimentPoint, res: PointResult) -> list:
    return [point.distance, repr(point.R_frac), repr(point.R_nm_at_40nm), point.dist_kind, point.orbit_mode,
            res.trials, res.failures, repr(res.p_L), repr(res.ci_low), repr(res.ci_high), point.master_seed]


def _run_grid(cfg: RunConfig, out) -> dict[int, dict[float, PointResult]]:
    """Run every point, streaming CSV rows to ``out`` as they finish."""
    writer = csv.writer(out, lineterminator="\n")
    out.write(_config_line(cfg))
    writer.writerow(CSV_HEADER)
    out.flush()
    workers = cfg.raw["threads"] or default_workers()
    results: dict[int, dict[float, PointResult]] = {}
    points = cfg.points()
    for i, point in enumerate(points, 1):
        t0 = time.perf_counter()
        res = run_point(point, workers=workers)
        results.setdefault(point.distance, {})[point.R_frac] = res
        writer.writerow(csv_row(point, res))
        out.flush()
        print(f"[{i}/{len(points)}] d={point.distance} R/d={point.R_frac:.4g} "
              f"p_L={res.p_L:.4g} ({res.failures}/{res.trials}) {time.perf_counter() - t0:.1f}s",
              file=sys.stderr, flush=True)
    return results


def _open_out(path: str | None):
    return open(path, "w", newline="") if path else _Stdout()


class _Stdout(io.TextIOBase):
    def write(self, s):
        return sys.stdout.write(s)

    def flush(self):
        sys.stdout.flush()

    def close(self):
        self.flush()


def cmd_simulate(cfg: RunConfig) -> int:
    out = _open_out(cfg.raw["output"])
    try:
        _run_grid(cfg, out)
    finally:
        out.close()
    return EXIT_OK


def cmd_threshold(cfg: RunConfig) -> int:
    if len(cfg.raw["distances"]) < 2 or len(cfg.raw["R_nm"]) < 4:
        raise ConfigError("threshold needs at least two distances and four R values")
    out = _open_out(cfg.raw["output"])
    try:
        results = _run_grid(cfg, out)
    finally:
        out.close()
    try:
        est = estimate_threshold(results)
    except ThresholdError as exc:
        print(f"no crossing: {exc}", file=sys.stderr)
        return EXIT_NO_CROSSING
    summary = {
        "config": cfg.resolved(),
        "R_star_frac_of_d": est.R_star,
        "sigma_frac_of_d": est.sigma,
        "R_star_nm_at_40nm": 40.0 * est.R_star,
        "sigma_nm_at_40nm": 40.0 * est.sigma,
        "R_star_nm": cfg.raw["d_nm"] * est.R_star,
        "pairwise": est.to_dict()["pairwise"],
    }
    text = json.dumps(summary, indent=2, sort_keys=True) + "\n"
    if cfg.raw["summary"]:
        with open(cfg.raw["summary"], "w") as fh:
            fh.write(text)
    else:
        sys.stderr.write(text)
    print(f"R* = {est.R_star:.4f} +- {est.sigma:.4f} of d "
          f"({40 * est.R_star:.2f} +- {40 * est.sigma:.2f} nm at d = 40 nm)", file=sys.stderr)
    return EXIT_OK


# --- validate ------------------------------------------------------------------

TableFn = Callable[[Sequence[float]], object]


def _check_superop(rng, table_fn: TableFn, table3_fn: TableFn, n4: int = 1000, n3: int = 200) -> str | None:
    worst = 0.0
    for fn, k, n in ((table_fn, 4, n4), (table3_fn, 3, n3)):
        for _ in range(n):
            dl = rng.uniform(-0.6, 0.6, k)
            worst = max(worst, fn(dl).max_abs_diff(brute_force_oracle(dl)))
    return None if worst <= 1e-10 else f"max deviation {worst:.3e}"


def _check_normalization(rng, table_fn: TableFn, n: int = 10000) -> str | None:
    worst = 0.0
    for dl in rng.uniform(-np.pi, np.pi, (n, 4)):
        t = table_fn(dl)
        worst = max(worst, abs(sum(t.even_input) - 1), abs(sum(t.odd_input) - 1))
    p = branch_probabilities(rng.uniform(-np.pi, np.pi, (n, 3)))
    worst = max(worst, float(np.max(np.abs(p.sum(-1) - 1))))
    return None if worst <= 1e-12 else f"max deviation {worst:.3e}"


def _check_matching(rng, n: int = 500) -> str | None:
    for i in range(n):
        distance = int(rng.choice([3, 5]))
        lat = build_lattice(distance)
        m = int(rng.integers(0, 9))
        faces = rng.integers(0, lat.n_stabs("Z"), m)
        rounds = rng.integers(0, distance + 1, m)
        defects = sorted(set(zip(faces.tolist(), rounds.tolist())))
        g = DefectGraph.from_defects("Z", distance, defects)
        if mwpm(g).weight != exhaustive_matching(g):
            return f"mismatch on graph {i}"
    return None


def _check_physics() -> str | None:
    dev = exact_two_spin_check(1e6, SpinPairConfig((0.0, 0.0, 1.0)))
    if not dev <= 1e-3:
        return f"secular deviation {dev:.3e}"
    if not injection_sequence_check():
        return "injection sequence"
    if injection_sequence_check(interaction_phase=0.0):
        return "degenerate injection control passed"
    return None


def _check_calibration() -> str | None:
    orbit = OrbitSpec("abrupt", height=40e-9, pitch=400e-9)
    t = cycle_time(orbit.with_time_scale(calibrate(orbit, ELECTRON_COUPLING)), ELECTRON_COUPLING)
    return None if 1.1e-3 <= t <= 1.3e-3 else f"abrupt cycle {t:.4e} s"


def _check_distributions(rng, n: int = 20000, alpha: float = 1e-3) -> str | None:
    R = 0.3
    for kind in ("disk", "pillbox"):
        dist = PlacementDistribution(kind, R)
        s = sample_displacements(dist, rng, n)
        rho = np.hypot(s[:, 0], s[:, 1])
        tests = {
            "radius": stats.kstest(rho, lambda x: np.clip(x / R, 0, 1) ** 2),
            "azimuth": stats.kstest(np.arctan2(s[:, 1], s[:, 0]), stats.uniform(-np.pi, 2 * np.pi).cdf),
            "height": stats.kstest(s[:, 2], stats.uniform(-dist.z_ratio * R, 2 * dist.z_ratio * R).cdf),
        }
        for name, res in tests.items():
            if res.pvalue < alpha:
                return f"{kind} {name} p={res.pvalue:.2e}"
    dist = PlacementDistribution("normal", R)
    s = sample_displacements(dist, rng, n)
    for axis, sd in enumerate((R, R, dist.z_ratio * R)):
        res = stats.kstest(s[:, axis], stats.norm(0, sd).cdf)
        if res.pvalue < alpha:
            return f"normal axis {axis} p={res.pvalue:.2e}"
    return None


def run_validation(table_fn: TableFn = branch_table, table3_fn: TableFn = branch_table_weight3,
                   seed: int = 12345, stream=None) -> list[tuple[str, str | None]]:
    """Run the bundled oracle checks; returns ``(name, failure message or None)``.

    ``table_fn`` and ``table3_fn`` can be swapped for a perturbed
    implementation to confirm that the superoperator checks catch it.
    """
    stream = sys.stdout if stream is None else stream
    rng = np.random.default_rng(seed)
    checks = [
        ("superop_oracle", lambda: _check_superop(rng, table_fn, table3_fn)),
        ("branch_normalization", lambda: _check_normalization(rng, table_fn)),
        ("matching_exhaustive", lambda: _check_matching(rng)),
        ("secular_and_injection", _check_physics),
        ("abrupt_calibration", _check_calibration),
        ("placement_ks", lambda: _check_distributions(rng)),
    ]
    results = []
    for name, fn in checks:
        t0 = time.perf_counter()
        try:
            msg = fn()
        except Exception as exc:  # a crash is a failed check
            msg = f"{type(exc).__name__}: {exc}"
        results.append((name, msg))
        status = "PASS" if msg is None else f"FAIL ({msg})"
        print(f"{name:<24} {status:<40} {time.perf_counter() - t0:6.1f}s", file=stream, flush=True)
    return results


def cmd_validate(table_fn: TableFn = branch_table, table3_fn: TableFn = branch_table_weight3) -> int:
    results = run_validation(table_fn, table3_fn)
    failed = [name for name, msg in results if msg is not None]
    if failed:
        print("failed: " + ", ".join(failed), file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


def cmd_calibrate(d_nm: float = 40.0, D_nm: float = 400.0, n_steps: int = 512) -> int:
    d, D = d_nm * 1e-9, D_nm * 1e-9
    rows = []
    for mode in ("abrupt", "circular"):
        orbit = OrbitSpec(mode, height=d, pitch=D, n_integration_steps=n_steps)
        orbit = orbit.with_time_scale(calibrate(orbit, ELECTRON_COUPLING))
        rows.append((mode, orbit.time_scale, cycle_time(orbit, ELECTRON_COUPLING)))
    print(f"d = {d_nm} nm, D = {D_nm} nm, J = {ELECTRON_COUPLING:.6e} rad m^3/s")
    for mode, ts, cyc in rows:
        label = "dwell per interaction" if mode == "abrupt" else "loop period"
        print(f"{mode:<9} {label:<22} {ts:.6e} s   stabilizer cycle {cyc:.6e} s")
    print(f"circular / abrupt cycle ratio {rows[1][2] / rows[0][2]:.3f}")
    # closed form for four pi/2 interactions with the probe straight overhead
    anchor = math.pi * (40e-9) ** 3 / ELECTRON_COUPLING
    print(f"anchor: four abrupt interactions at d = 40 nm take {anchor * 1e3:.4f} ms")
    return EXIT_OK


# --- entry point -------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="orbitalprobe", description="Orbital-probe surface-code simulator.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("simulate", "threshold"):
        s = sub.add_parser(name)
        s.add_argument("config", nargs="?", help="JSON config file")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config field (dotted keys, JSON values), repeatable")
        s.add_argument("--trials", type=int)
        s.add_argument("--seed", type=int)
        s.add_argument("--threads", type=int)
        s.add_argument("--output", "-o")
        if name == "threshold":
            s.add_argument("--summary")
    sub.add_parser("validate")
    c = sub.add_parser("calibrate")
    c.add_argument("--d-nm", type=float, default=40.0)
    c.add_argument("--D-nm", type=float, default=400.0)
    c.add_argument("--steps", type=int, default=512)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    if args.command == "validate":
        return cmd_validate()
    if args.command == "calibrate":
        try:
            return cmd_calibrate(args.d_nm, args.D_nm, args.steps)
        except ValueError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    overrides = list(args.set)
    for key in ("trials", "seed", "threads", "output", "summary"):
        val = getattr(args, key, None)
        if val is not None:
            overrides.append(f"{key}={json.dumps(val)}")
    try:
        cfg = read_config(args.config, overrides)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        return cmd_threshold(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
