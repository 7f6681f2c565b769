"""Exact non-Markovian qubit dynamics in the vectorized representation.

The density matrix is flattened row-major with |e> first,
``rho_c = (rho_ee, rho_eg, rho_ge, rho_gg)``. The memory functions F_j obey
coupled Riccati equations driven by the instantaneous qubit frequency
``omega0 + eps(t)``; their sum enters the generator of the master equation.
Memory functions and the propagator are integrated together with classical
RK4 on the control grid, holding the control constant within each step.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .bath import ExpTermList
from .exceptions import IntegrationDiverged, InvalidInput

__all__ = [
    "ControlPulse",
    "MemoryState",
    "Trajectory",
    "DEFAULT_DT",
    "BLOWUP_THRESHOLD",
    "memory_derivative",
    "build_lindbladian",
    "control_derivative",
    "propagate",
    "propagate_adjoint",
    "vectorize",
    "unvectorize",
    "write_trajectory_csv",
]

DEFAULT_DT = 1e-3
BLOWUP_THRESHOLD = 1e6

# d(Lambda)/d(eps): only the coherent part depends explicitly on the control
CONTROL_DERIVATIVE = np.diag([0, -1j, 1j, 0])
CONTROL_DERIVATIVE.flags.writeable = False


def control_derivative():
    return CONTROL_DERIVATIVE.copy()


@dataclass(frozen=True)
class ControlPulse:
    """Piecewise-constant control eps(t) on a uniform grid.

    ``samples[k]`` holds on ``[k*dt, (k+1)*dt)``; ``len(samples) * dt = t_f``.
    """

    dt: float
    samples: np.ndarray
    lower_bound: float = -1.0
    upper_bound: float = 1.0

    def __post_init__(self):
        samples = np.array(self.samples, dtype=float).reshape(-1)
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise InvalidInput(f"dt must be positive, got {self.dt}")
        if samples.size == 0:
            raise InvalidInput("a pulse needs at least one sample")
        if not np.all(np.isfinite(samples)):
            raise InvalidInput("pulse samples must be finite")
        if not self.lower_bound < self.upper_bound:
            raise InvalidInput("lower_bound must be below upper_bound")
        if samples.min() < self.lower_bound or samples.max() > self.upper_bound:
            raise InvalidInput(
                f"pulse leaves [{self.lower_bound}, {self.upper_bound}]: "
                f"range [{samples.min()}, {samples.max()}]"
            )
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "dt", float(self.dt))
        object.__setattr__(self, "lower_bound", float(self.lower_bound))
        object.__setattr__(self, "upper_bound", float(self.upper_bound))

    @classmethod
    def constant(cls, value, t_f, dt=DEFAULT_DT, lower_bound=-1.0, upper_bound=1.0):
        return cls(dt, np.full(grid_size(t_f, dt), float(value)), lower_bound, upper_bound)

    @property
    def n_steps(self):
        return self.samples.size

    @property
    def t_f(self):
        return self.n_steps * self.dt

    @property
    def times(self):
        """Left edges of the control intervals."""
        return np.arange(self.n_steps) * self.dt

    def omega(self, omega0=1.0):
        return omega0 + self.samples

    def with_samples(self, samples):
        return ControlPulse(self.dt, samples, self.lower_bound, self.upper_bound)

    def __eq__(self, other):
        if not isinstance(other, ControlPulse):
            return NotImplemented
        return (
            self.dt == other.dt
            and self.lower_bound == other.lower_bound
            and self.upper_bound == other.upper_bound
            and np.array_equal(self.samples, other.samples)
        )

    __hash__ = None


def grid_size(t_f, dt):
    n = int(round(t_f / dt))
    if n < 1 or abs(n * dt - t_f) > 1e-9 * max(1.0, t_f):
        raise InvalidInput(f"t_f={t_f} is not an integer multiple of dt={dt}")
    return n


@dataclass(frozen=True)
class MemoryState:
    f_values: np.ndarray
    time: float = 0.0

    @classmethod
    def initial(cls, term_count):
        return cls(np.zeros(term_count, complex), 0.0)

    @property
    def f_total(self):
        return complex(np.sum(self.f_values))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Forward solution on the grid ``t_k = k * dt``, ``k = 0..N``.

    Attributes
    ----------
    f_components : ndarray, shape (N+1, K)
    propagators : ndarray, shape (N+1, 4, 4)
    stage_f : ndarray, shape (N, 4)
        Total memory function at the four RK4 stages of every step; the
        backward sweep reuses them so that it is the exact adjoint.
    """

    pulse: ControlPulse
    omega0: float
    f_components: np.ndarray
    propagators: np.ndarray
    stage_f: np.ndarray

    @property
    def times(self):
        return np.arange(self.pulse.n_steps + 1) * self.pulse.dt

    @property
    def f_total(self):
        return self.f_components.sum(axis=1)

    @property
    def final_propagator(self):
        return self.propagators[-1]

    def memory_state(self, k):
        return MemoryState(self.f_components[k].copy(), k * self.pulse.dt)

    def __len__(self):
        return self.propagators.shape[0]

    def __getitem__(self, k):
        return self.memory_state(k), self.propagators[k]


def memory_derivative(state: MemoryState, terms: ExpTermList, omega_t: float):
    """Right-hand side of the coupled memory-function equations."""
    f = np.asarray(state.f_values, dtype=complex)
    if f.shape != (len(terms),):
        raise InvalidInput("memory state and term list differ in length")
    out = np.empty_like(f)
    _kernels.memory_rhs(float(omega_t), terms.p, terms.q, f, out)
    return out


def build_lindbladian(omega_t: float, f_total: complex):
    """Dense 4x4 generator for ``d rho_c / dt = Lambda rho_c``."""
    lam = np.zeros((4, 4), complex)
    lam[0, 0] = -2 * f_total.real
    lam[3, 0] = 2 * f_total.real
    lam[1, 1] = -1j * omega_t - np.conj(f_total)
    lam[2, 2] = 1j * omega_t - f_total
    return lam


def vectorize(rho):
    return np.asarray(rho, dtype=complex).reshape(4)


def unvectorize(rho_c):
    return np.asarray(rho_c, dtype=complex).reshape(2, 2)


def propagate(pulse: ControlPulse, terms: ExpTermList, omega0=1.0, *, blowup=BLOWUP_THRESHOLD):
    """Co-integrate the memory functions and the propagator from 0 to t_f.

    Raises
    ------
    IntegrationDiverged
        If any |F_j| or propagator entry exceeds ``blowup``.
    """
    n = pulse.n_steps
    f_out = np.empty((n + 1, len(terms)), complex)
    stage = np.empty((n, 4), complex)
    g_out = np.empty((n + 1, 4, 4), complex)
    status = _kernels.forward_sweep(
        pulse.samples, pulse.dt, float(omega0), terms.p, terms.q, float(blowup), f_out, stage, g_out
    )
    _check(status, pulse.dt)
    return Trajectory(pulse, float(omega0), f_out, g_out, stage)


def propagate_adjoint(pulse: ControlPulse, trajectory: Trajectory, chi_tf, omega0=None, *, blowup=BLOWUP_THRESHOLD):
    """Backward-propagate chi with the generator of the stored forward solution.

    chi solves ``chi' = -Lambda(t)^dagger chi`` with the given final value, so
    ``Tr[chi(t)^dagger G(t)]`` is conserved along the trajectory (exactly, step
    by step, since each backward step is the adjoint of the forward RK4 map).

    Returns an array of shape ``(N+1, 4, 4)`` holding chi at every grid point.
    """
    if trajectory.stage_f.shape[0] != pulse.n_steps:
        raise InvalidInput("trajectory and pulse grids differ")
    omega0 = trajectory.omega0 if omega0 is None else float(omega0)
    chi_tf = np.asarray(chi_tf, dtype=complex)
    if chi_tf.shape != (4, 4):
        raise InvalidInput("chi_tf must be 4x4")
    chi = np.empty((pulse.n_steps + 1, 4, 4), complex)
    status = _kernels.backward_sweep(
        pulse.samples, pulse.dt, omega0, trajectory.stage_f, chi_tf, float(blowup), chi
    )
    _check(status, pulse.dt)
    return chi


def _check(status, dt):
    if status >= 0:
        raise IntegrationDiverged(
            f"integration diverged at t={status * dt:.6g}; reduce dt or check parameters",
            time=status * dt,
        )


def write_trajectory_csv(path, trajectory: Trajectory):
    """One row per grid point: t, Re F, Im F, then G entries (re, im) row-major."""
    header = ["t", "re_F", "im_F"]
    for r in range(4):
        for c in range(4):
            header += [f"re_G{r}{c}", f"im_G{r}{c}"]
    f = trajectory.f_total
    g = trajectory.propagators.reshape(-1, 16)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k, t in enumerate(trajectory.times):
            row = [_fmt(t), _fmt(f[k].real), _fmt(f[k].imag)]
            for z in g[k]:
                row += [_fmt(z.real), _fmt(z.imag)]
            writer.writerow(row)


def _fmt(x):
    # shortest round-trip repr: exact, and >= 15 significant digits when needed
    return repr(float(x))
