"""Dissipation/phase diagnostics and sweep bookkeeping."""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import ControlPulse, Trajectory
from .optimizer import GateTarget, OptimizationRecord

__all__ = [
    "CoherenceDecomposition",
    "SweepCell",
    "SweepResult",
    "decompose_coherence",
    "tabulate_sweep",
]

_GE = 2  # index of rho_ge in the vectorized density matrix


@dataclass(frozen=True)
class CoherenceDecomposition:
    """Split of the rho_ge coherence into decay and accumulated phase.

    ``rho_ge(t_f) = rho_ge(0) * exp(-kappa) * exp(i * phi)``.

    Attributes
    ----------
    kappa : float
        Integral of Re F over [0, t_f].
    phi : float
        Unwrapped phase of the propagated coherence.
    phi_control : float
        Integral of the instantaneous qubit frequency omega0 + eps.
    phi_environment : float
        ``phi - phi_control``, the environment-induced frequency shift
        integrated over the gate (minus the integral of Im F).
    phase_shift : float
        ``phi`` minus the nearest phase the target gate allows (odd multiples
        of pi for Z, even for identity): the residual phase error of the gate.
    """

    kappa: float
    phi: float
    phi_control: float
    phi_environment: float
    phase_shift: float

    def to_dict(self):
        return {
            "kappa": self.kappa,
            "phi": self.phi,
            "phi_control": self.phi_control,
            "phi_environment": self.phi_environment,
            "phase_shift": self.phase_shift,
        }


def integrate_re_f(trajectory: Trajectory, start=0, stop=None):
    """Trapezoidal integral of Re F between grid indices ``start`` and ``stop``."""
    re_f = trajectory.f_total.real[start:stop if stop is None else stop + 1]
    if re_f.size < 2:
        return 0.0
    return float(np.trapezoid(re_f, dx=trajectory.pulse.dt))


def decompose_coherence(trajectory: Trajectory, pulse: ControlPulse | None = None, target=GateTarget.Z):
    pulse = trajectory.pulse if pulse is None else pulse
    kappa = integrate_re_f(trajectory)
    amp = trajectory.propagators[:, _GE, _GE]
    # per-step phase increments stay below pi because omega*dt << pi
    phi = float(np.sum(np.angle(amp[1:] / amp[:-1])))
    phi_control = float(np.sum(pulse.omega(trajectory.omega0)) * pulse.dt)
    target = GateTarget.parse(target)
    n = target.parity + 2 * round((phi / math.pi - target.parity) / 2)
    return CoherenceDecomposition(
        kappa=kappa,
        phi=phi,
        phi_control=phi_control,
        phi_environment=phi - phi_control,
        phase_shift=phi - n * math.pi,
    )


# -- sweeps ----------------------------------------------------------------


@dataclass
class SweepCell:
    """One grid point: its parameters and either a record or a failure."""

    index: int
    params: dict
    record: OptimizationRecord | None = None
    error: str | None = None
    extras: dict = field(default_factory=dict)

    @property
    def ok(self):
        return self.record is not None

    def value(self, quantity):
        if not self.ok:
            return math.nan
        if quantity == "final_error":
            return self.record.final_error
        if quantity == "initial_error":
            return self.record.initial_error
        if quantity == "improvement":
            return self.record.improvement
        if quantity == "iterations":
            return self.record.iterations_run
        return self.extras.get(quantity, math.nan)


@dataclass
class SweepResult:
    axes: dict
    cells: list

    @property
    def grid(self):
        return [c.params for c in self.cells]

    def matrix(self, quantity, row_axis, col_axis, fixed=None):
        """2-d table of ``quantity`` with NaN marking failed cells."""
        fixed = fixed or {}
        rows, cols = self.axes[row_axis], self.axes[col_axis]
        out = np.full((len(rows), len(cols)), np.nan)
        for cell in self._select(fixed):
            i = rows.index(cell.params[row_axis])
            j = cols.index(cell.params[col_axis])
            out[i, j] = cell.value(quantity)
        return out

    def series(self, quantity, axis, fixed=None):
        values = self.axes[axis]
        out = np.full(len(values), np.nan)
        for cell in self._select(fixed or {}):
            out[values.index(cell.params[axis])] = cell.value(quantity)
        return out

    def _select(self, fixed):
        for cell in self.cells:
            if all(cell.params.get(k) == v for k, v in fixed.items()):
                yield cell

    def rows(self):
        names = list(self.axes)
        header = ["index", *names, "status", "E0", "Es", "improvement", "iterations", "error"]
        table = [header]
        for c in self.cells:
            table.append([
                c.index, *(c.params[n] for n in names), "ok" if c.ok else "failed",
                c.value("initial_error"), c.value("final_error"), c.value("improvement"),
                c.value("iterations") if c.ok else "", c.error or "",
            ])
        return table

    def write_csv(self, directory):
        """Long table plus one matrix per quantity and per slice of extra axes.

        Returns the list of written paths.
        """
        from pathlib import Path

        directory = Path(directory)
        paths = [directory / "sweep_table.csv"]
        _write_rows(paths[0], self.rows())
        names = list(self.axes)
        if len(names) >= 2:
            row_axis, col_axis, *rest = names
            for combo in itertools.product(*(self.axes[a] for a in rest)):
                fixed = dict(zip(rest, combo))
                suffix = "".join(f"_{a.split('.')[-1]}={_fmt(v)}" for a, v in fixed.items())
                for quantity, tag in (("final_error", "Es"), ("improvement", "improvement")):
                    m = self.matrix(quantity, row_axis, col_axis, fixed)
                    header = [f"{row_axis}\\{col_axis}", *map(_fmt, self.axes[col_axis])]
                    rows = [header] + [
                        [_fmt(r), *map(_fmt, m[i])] for i, r in enumerate(self.axes[row_axis])
                    ]
                    path = directory / f"{tag}{suffix}.csv"
                    _write_rows(path, rows)
                    paths.append(path)
        elif len(names) == 1:
            axis = names[0]
            rows = [[axis, "Es", "improvement"]]
            es, imp = self.series("final_error", axis), self.series("improvement", axis)
            rows += [[_fmt(v), _fmt(es[i]), _fmt(imp[i])] for i, v in enumerate(self.axes[axis])]
            path = directory / f"series_{axis.split('.')[-1]}.csv"
            _write_rows(path, rows)
            paths.append(path)
        return paths

    def summary(self):
        return {
            "axes": self.axes,
            "cells": [
                {
                    "index": c.index,
                    "params": c.params,
                    "status": "ok" if c.ok else "failed",
                    "E0": c.value("initial_error") if c.ok else None,
                    "Es": c.value("final_error") if c.ok else None,
                    "improvement": c.value("improvement") if c.ok else None,
                    "error": c.error,
                }
                for c in self.cells
            ],
        }


def tabulate_sweep(cells, axes=None):
    """Collect finished cells (any order) into a grid-ordered ``SweepResult``."""
    cells = sorted(cells, key=lambda c: c.index)
    if axes is None:
        axes = {}
        for c in cells:
            for k, v in c.params.items():
                axes.setdefault(k, [])
                if v not in axes[k]:
                    axes[k].append(v)
    return SweepResult(dict(axes), cells)


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_rows(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
