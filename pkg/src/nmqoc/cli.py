"""Command-line front end: single runs, parameter sweeps, bath fits, propagation.

Configs are JSON trees. A minimal run config::

    {"bath": {"type": "lorentzian", "alpha": 0.01, "gamma": 0.1, "omega_big": 1},
     "target": "z", "t_f": 2}

Sweeps add ``"sweep": {"bath.alpha": [0.01, 0.1], "bath.gamma": [0.1, 1, 10]}``;
the grid is the Cartesian product in key order.
"""

from __future__ import annotations

import argparse
import copy
import csv
import itertools
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

from .analysis import SweepCell, decompose_coherence, tabulate_sweep
from .bath import (
    DEFAULT_FIT_SAMPLES,
    DEFAULT_FIT_TERMS,
    DEFAULT_FIT_THRESHOLD,
    LorentzianBath,
    OhmicBath,
    lorentzian_terms,
    load_terms,
    ohmic_terms,
    save_terms,
)
from .dynamics import DEFAULT_DT, ControlPulse, propagate, write_trajectory_csv
from .exceptions import ConfigError, FitFailed, NMQOCError
from .optimizer import GateTarget, KrotovConfig, gate_error, initial_guess, optimize

__all__ = ["ExperimentConfig", "BathConfig", "parse_config", "main"]

BOUND_PRESETS = {"small": (-1.0, 1.0), "large": (-20.0, 20.0)}
_KROTOV_FIELDS = {f.name for f in fields(KrotovConfig)}


@dataclass(frozen=True)
class BathConfig:
    kind: str
    alpha: float = 0.0
    gamma: float = 0.0
    omega_big: float = 0.0
    alpha_o: float = 0.0
    omega_c: float = 0.0
    fit_terms: int = DEFAULT_FIT_TERMS
    fit_horizon: float | None = None
    fit_samples: int = DEFAULT_FIT_SAMPLES
    fit_threshold: float = DEFAULT_FIT_THRESHOLD
    fit_seed: int = 0
    terms_file: str | None = None

    def model(self):
        if self.kind == "lorentzian":
            return LorentzianBath(self.alpha, self.gamma, self.omega_big)
        return OhmicBath(self.alpha_o, self.omega_c)

    def to_dict(self):
        if self.kind == "lorentzian":
            return {"type": "lorentzian", "alpha": self.alpha, "gamma": self.gamma,
                    "omega_big": self.omega_big}
        return {"type": "ohmic", "alpha_o": self.alpha_o, "omega_c": self.omega_c,
                "fit_terms": self.fit_terms, "fit_horizon": self.fit_horizon,
                "fit_samples": self.fit_samples, "fit_threshold": self.fit_threshold,
                "fit_seed": self.fit_seed, "terms_file": self.terms_file}


@dataclass(frozen=True)
class ExperimentConfig:
    bath: BathConfig
    omega0: float = 1.0
    target: GateTarget = GateTarget.Z
    t_f: float = 2.0
    bounds: tuple = (-1.0, 1.0)
    dt: float = DEFAULT_DT
    krotov: KrotovConfig = KrotovConfig()
    harmonic: int | None = None
    epsilon: float | None = None  # constant pulse for `propagate`
    sweep: dict | None = None

    def to_dict(self):
        k = {f: getattr(self.krotov, f) for f in sorted(_KROTOV_FIELDS)}
        return {
            "bath": self.bath.to_dict(),
            "omega0": self.omega0,
            "target": self.target.value,
            "t_f": self.t_f,
            "bounds": {"lower": self.bounds[0], "upper": self.bounds[1]},
            "dt": self.dt,
            "krotov": k,
            "harmonic": self.harmonic,
            "epsilon": self.epsilon,
        }


def _number(tree, key, default=None, *, path, positive=False, nonneg=False, integer=False):
    value = tree.get(key, default)
    name = f"{path}{key}"
    if value is None:
        if default is None and key in tree:
            return None
        if default is None:
            raise ConfigError(name, "required")
        return default
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(name, f"expected a number, got {value!r}")
    if integer:
        if int(value) != value:
            raise ConfigError(name, "expected an integer")
        value = int(value)
    else:
        value = float(value)
    if not math.isfinite(value):
        raise ConfigError(name, "must be finite")
    if positive and not value > 0:
        raise ConfigError(name, "must be positive")
    if nonneg and value < 0:
        raise ConfigError(name, "must be non-negative")
    return value


def _parse_bath(tree):
    if not isinstance(tree, dict):
        raise ConfigError("bath", "expected an object")
    kind = str(tree.get("type", "")).lower()
    if kind == "lorentzian":
        return BathConfig(
            "lorentzian",
            alpha=_number(tree, "alpha", path="bath.", nonneg=True),
            gamma=_number(tree, "gamma", path="bath.", positive=True),
            omega_big=_number(tree, "omega_big", path="bath.", nonneg=True),
        )
    if kind == "ohmic":
        horizon = tree.get("fit_horizon")
        return BathConfig(
            "ohmic",
            alpha_o=_number(tree, "alpha_o", path="bath.", nonneg=True),
            omega_c=_number(tree, "omega_c", path="bath.", positive=True),
            fit_terms=_number(tree, "fit_terms", DEFAULT_FIT_TERMS, path="bath.", positive=True, integer=True),
            fit_horizon=None if horizon is None else _number(tree, "fit_horizon", path="bath.", positive=True),
            fit_samples=_number(tree, "fit_samples", DEFAULT_FIT_SAMPLES, path="bath.", positive=True, integer=True),
            fit_threshold=_number(tree, "fit_threshold", DEFAULT_FIT_THRESHOLD, path="bath.", positive=True),
            fit_seed=_number(tree, "fit_seed", 0, path="bath.", nonneg=True, integer=True),
            terms_file=tree.get("terms_file"),
        )
    raise ConfigError("bath.type", f"expected 'lorentzian' or 'ohmic', got {tree.get('type')!r}")


def _parse_bounds(value):
    if value is None:
        return BOUND_PRESETS["small"]
    if isinstance(value, str):
        try:
            return BOUND_PRESETS[value.lower()]
        except KeyError:
            raise ConfigError("bounds", f"unknown preset {value!r}") from None
    if not isinstance(value, dict):
        raise ConfigError("bounds", "expected an object or a preset name")
    lower = _number(value, "lower", -1.0, path="bounds.")
    upper = _number(value, "upper", 1.0, path="bounds.")
    if not lower < upper:
        raise ConfigError("bounds", f"lower ({lower}) must be below upper ({upper})")
    return lower, upper


def _parse_krotov(tree):
    if tree is None:
        return KrotovConfig()
    if not isinstance(tree, dict):
        raise ConfigError("krotov", "expected an object")
    unknown = set(tree) - _KROTOV_FIELDS
    if unknown:
        raise ConfigError("krotov", f"unknown fields {sorted(unknown)}")
    try:
        return KrotovConfig(**tree)
    except (TypeError, ValueError) as exc:
        raise ConfigError("krotov", str(exc)) from None


def parse_config(tree):
    """Validate a config tree into an ``ExperimentConfig``.

    Raises
    ------
    ConfigError
        Naming the offending field.
    """
    if not isinstance(tree, dict):
        raise ConfigError("<root>", "expected an object")
    if "bath" not in tree:
        raise ConfigError("bath", "required")
    try:
        target = GateTarget.parse(tree.get("target", "z"))
    except ValueError as exc:
        raise ConfigError("target", str(exc)) from None
    sweep = tree.get("sweep")
    if sweep is not None:
        if not isinstance(sweep, dict) or not sweep:
            raise ConfigError("sweep", "expected a non-empty object of axis -> list")
        for key, values in sweep.items():
            if not isinstance(values, list) or not values:
                raise ConfigError(f"sweep.{key}", "axis values must be a non-empty list")
    harmonic = tree.get("harmonic")
    epsilon = tree.get("epsilon")
    return ExperimentConfig(
        bath=_parse_bath(tree["bath"]),
        omega0=_number(tree, "omega0", 1.0, path="", positive=True),
        target=target,
        t_f=_number(tree, "t_f", path="", positive=True),
        bounds=_parse_bounds(tree.get("bounds")),
        dt=_number(tree, "dt", DEFAULT_DT, path="", positive=True),
        krotov=_parse_krotov(tree.get("krotov")),
        harmonic=None if harmonic is None else _number(tree, "harmonic", path="", nonneg=True, integer=True),
        epsilon=None if epsilon is None else _number(tree, "epsilon", path=""),
        sweep=sweep,
    )


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON: {exc}") from None
    except OSError as exc:
        raise ConfigError("<file>", str(exc)) from None


# -- execution -------------------------------------------------------------


def resolve_terms(cfg: ExperimentConfig, base_dir=None):
    """Kernel terms for the configured bath; fits (or loads) Ohmic terms."""
    bath = cfg.bath
    if bath.kind == "lorentzian":
        return lorentzian_terms(bath.model()), None
    if bath.terms_file:
        path = Path(bath.terms_file)
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        return load_terms(path)
    return ohmic_terms(
        bath.model(), cfg.t_f,
        term_count=bath.fit_terms, fit_horizon=bath.fit_horizon,
        sample_count=bath.fit_samples, threshold=bath.fit_threshold, seed=bath.fit_seed,
    )


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return "inf" if x > 0 else ("-inf" if x < 0 else "nan")
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def write_json(path, data):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(data), fh, indent=2, allow_nan=False)
        fh.write("\n")


def _fmt(x):
    return repr(float(x))


def write_pulse_csv(path, pulse: ControlPulse, omega0):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "epsilon", "omega_t"])
        for t, eps in zip(pulse.times, pulse.samples):
            w.writerow([_fmt(t), _fmt(eps), _fmt(omega0 + eps)])


def write_errors_csv(path, errors):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "error"])
        for k, e in enumerate(errors):
            w.writerow([k, _fmt(e)])


def execute_run(cfg: ExperimentConfig, out_dir, *, emit_trajectory=False, base_dir=None):
    """Fit (if needed), optimize, analyze and write every artifact of one run."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    terms, report = resolve_terms(cfg, base_dir)
    guess = initial_guess(cfg.target, cfg.t_f, cfg.omega0, cfg.bounds, cfg.dt, n=cfg.harmonic)
    record = optimize(terms, cfg.omega0, cfg.target, cfg.t_f, cfg.bounds, cfg.krotov,
                      dt=cfg.dt, initial_pulse=guess)
    before = decompose_coherence(propagate(guess, terms, cfg.omega0), target=cfg.target)
    after = decompose_coherence(record.final_trajectory, target=cfg.target)

    write_json(out / "record.json", {
        "config": cfg.to_dict(),
        "target": record.target.value,
        "initial_error": record.initial_error,
        "final_error": record.final_error,
        "improvement": record.improvement,
        "iterations_run": record.iterations_run,
        "stop_reason": record.stop_reason.value,
        "lambda_initial": record.lambda_initial,
        "lambda_final": record.lambda_final,
        "rejected_iterations": record.rejected_iterations,
        "fit_report": None if report is None else report.to_dict(),
        "terms": terms.to_dict()["terms"],
    })
    write_pulse_csv(out / "pulse.csv", record.final_pulse, cfg.omega0)
    write_errors_csv(out / "errors.csv", record.errors_per_iteration)
    write_json(out / "decomposition.json", {"initial": before.to_dict(), "final": after.to_dict()})
    if emit_trajectory:
        write_trajectory_csv(out / "trajectory.csv", record.final_trajectory)
    return record


def execute_propagate(cfg: ExperimentConfig, out_dir, *, base_dir=None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    terms, report = resolve_terms(cfg, base_dir)
    if cfg.epsilon is None:
        pulse = initial_guess(cfg.target, cfg.t_f, cfg.omega0, cfg.bounds, cfg.dt, n=cfg.harmonic)
    else:
        pulse = ControlPulse.constant(cfg.epsilon, cfg.t_f, cfg.dt, *cfg.bounds)
    traj = propagate(pulse, terms, cfg.omega0)
    write_trajectory_csv(out / "trajectory.csv", traj)
    write_pulse_csv(out / "pulse.csv", pulse, cfg.omega0)
    write_json(out / "propagation.json", {
        "config": cfg.to_dict(),
        "gate_error": gate_error(traj.final_propagator, cfg.target),
        "decomposition": decompose_coherence(traj, target=cfg.target).to_dict(),
        "fit_report": None if report is None else report.to_dict(),
    })
    return traj


def execute_fit(cfg: ExperimentConfig, out_dir):
    if cfg.bath.kind != "ohmic":
        raise ConfigError("bath.type", "fit-bath needs an ohmic bath; lorentzian kernels are exact")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    terms, report = ohmic_terms(
        cfg.bath.model(), cfg.t_f,
        term_count=cfg.bath.fit_terms, fit_horizon=cfg.bath.fit_horizon,
        sample_count=cfg.bath.fit_samples, threshold=cfg.bath.fit_threshold, seed=cfg.bath.fit_seed,
    )
    save_terms(out / "terms.json", terms, report)
    write_json(out / "fit_report.json", report.to_dict())
    return terms, report


def _set_dotted(tree, key, value):
    node = tree
    *parents, leaf = key.split(".")
    for p in parents:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"sweep.{key}", f"{p} is not an object")
    node[leaf] = value


def sweep_cells(tree):
    """Expand a sweep config into ``(index, params, cell_tree)`` in grid order."""
    axes = tree["sweep"]
    base = {k: v for k, v in tree.items() if k != "sweep"}
    names = list(axes)
    for index, combo in enumerate(itertools.product(*(axes[n] for n in names))):
        cell = copy.deepcopy(base)
        for name, value in zip(names, combo):
            _set_dotted(cell, name, value)
        yield index, dict(zip(names, combo)), cell


def execute_sweep(tree, out_dir, *, threads=None, emit_trajectory=False, base_dir=None):
    cfg = parse_config(tree)
    if cfg.sweep is None:
        raise ConfigError("sweep", "required for the sweep command")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = list(sweep_cells(tree))

    def work(job):
        index, params, cell_tree = job
        cell_dir = out / f"cell_{index:03d}"
        try:
            cell_cfg = parse_config(cell_tree)
            record = execute_run(cell_cfg, cell_dir, emit_trajectory=emit_trajectory, base_dir=base_dir)
            return SweepCell(index, params, record)
        except (NMQOCError, ValueError) as exc:
            cell_dir.mkdir(parents=True, exist_ok=True)
            write_json(cell_dir / "error.json", _error_payload(exc))
            return SweepCell(index, params, error=f"{type(exc).__name__}: {exc}")

    workers = threads or os.cpu_count() or 1
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        cells = list(pool.map(work, jobs))
    result = tabulate_sweep(cells, {k: list(v) for k, v in cfg.sweep.items()})
    result.write_csv(out)
    write_json(out / "sweep_summary.json", result.summary())
    return result


def _error_payload(exc):
    payload = {"error": type(exc).__name__, "message": str(exc)}
    for attr in ("field", "reason", "residual", "time"):
        value = getattr(exc, attr, None)
        if value is not None:
            payload[attr] = value
    return payload


def build_parser():
    parser = argparse.ArgumentParser(prog="nmqoc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("run", "optimize one gate and analyze it"),
        ("sweep", "run every cell of a parameter grid"),
        ("fit-bath", "fit the Ohmic kernel and cache the terms"),
        ("propagate", "propagate a fixed pulse and write the trajectory"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="JSON experiment config")
        p.add_argument("--out", default="out", help="output directory (default: ./out)")
        p.add_argument("--threads", type=int, default=None,
                       help="sweep worker threads (default: all cores)")
        p.add_argument("--emit-trajectory", action="store_true",
                       help="also write trajectory.csv for optimized runs")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    base_dir = Path(args.config).resolve().parent
    try:
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads", "must be at least 1")
        tree = load_config(args.config)
        if args.command == "sweep":
            result = execute_sweep(tree, out, threads=args.threads,
                                   emit_trajectory=args.emit_trajectory, base_dir=base_dir)
            failed = sum(not c.ok for c in result.cells)
            print(f"{len(result.cells) - failed}/{len(result.cells)} cells succeeded -> {out}")
            return 1 if failed == len(result.cells) else 0
        cfg = parse_config(tree)
        if args.command == "run":
            rec = execute_run(cfg, out, emit_trajectory=args.emit_trajectory, base_dir=base_dir)
            print(f"E0={rec.initial_error:.3e} Es={rec.final_error:.3e} "
                  f"I={rec.improvement:.3f} after {rec.iterations_run} passes -> {out}")
        elif args.command == "fit-bath":
            terms, report = execute_fit(cfg, out)
            print(f"{len(terms)} terms, residual {report.relative_l2_residual:.3e} -> {out}")
        else:
            traj = execute_propagate(cfg, out, base_dir=base_dir)
            print(f"E={gate_error(traj.final_propagator, cfg.target):.3e} -> {out}")
    except (NMQOCError, ValueError) as exc:
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "error.json", _error_payload(exc))
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, ConfigError) else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
