"""Krotov optimization of single-qubit gates under non-Markovian dissipation."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .bath import ExpTermList
from .dynamics import (
    BLOWUP_THRESHOLD,
    DEFAULT_DT,
    ControlPulse,
    Trajectory,
    _check,
    grid_size,
    propagate,
    propagate_adjoint,
)
from .exceptions import InvalidInput, NoAdmissibleGuess

__all__ = [
    "GateTarget",
    "KrotovConfig",
    "StopReason",
    "OptimizationRecord",
    "SUPEROP_DIM",
    "gate_error",
    "initial_guess",
    "control_gradient",
    "krotov_iterate",
    "optimize",
    "improvement",
]

SUPEROP_DIM = 4
# "explicit": differentiate the generator at a frozen memory trajectory.
# "full": also propagate costates of the memory functions, giving the exact
# gradient of the gate error with respect to every control sample.
GRADIENTS = ("explicit", "full")


class GateTarget(enum.Enum):
    Z = "z"
    IDENTITY = "identity"

    @property
    def matrix(self):
        if self is GateTarget.Z:
            return np.diag([1.0, -1.0, -1.0, 1.0]).astype(complex)
        return np.eye(SUPEROP_DIM, dtype=complex)

    @property
    def parity(self):
        """Parity of n in the closed-system pulse n*pi/t_f (1 = odd)."""
        return 1 if self is GateTarget.Z else 0

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        aliases = {"z": cls.Z, "zgate": cls.Z, "z_gate": cls.Z,
                   "identity": cls.IDENTITY, "i": cls.IDENTITY, "id": cls.IDENTITY}
        try:
            return aliases[key]
        except KeyError:
            raise InvalidInput(f"unknown gate target {value!r}") from None


class StopReason(enum.Enum):
    THRESHOLD = "threshold"
    MAX_ITERATIONS = "max_iterations"
    STALLED = "stalled"


@dataclass(frozen=True)
class KrotovConfig:
    """Step-size and stopping parameters.

    ``lam`` multiplies the gradient in the pointwise update. ``None`` means
    ``1 / t_f``: the gradient of a pure phase error is half the error per unit
    time, so ``2 / t_f`` would cancel it in one pass and ``1 / t_f`` halves it.
    When an iterate would raise the error it is rejected and ``lam`` is
    multiplied by ``lambda_backoff``; the run stops once ``lam`` would fall
    below ``lambda_floor * initial lam``.
    """

    lam: float | None = None
    max_iterations: int = 5000
    error_threshold: float = 1e-12
    lambda_backoff: float = 0.5
    stall_window: int = 50
    stall_tolerance: float = 1e-6
    lambda_floor: float = 1e-2
    safeguard: bool = True
    gradient: str = "explicit"

    def __post_init__(self):
        if self.lam is not None and not self.lam > 0:
            raise InvalidInput("lambda must be positive")
        if not 0 < self.lambda_backoff < 1:
            raise InvalidInput("lambda_backoff must lie in (0, 1)")
        if self.max_iterations < 0 or self.stall_window < 1:
            raise InvalidInput("max_iterations >= 0 and stall_window >= 1 required")
        if self.error_threshold < 0 or self.stall_tolerance < 0:
            raise InvalidInput("tolerances must be non-negative")
        if not 0 < self.lambda_floor <= 1:
            raise InvalidInput("lambda_floor must lie in (0, 1]")
        if self.gradient not in GRADIENTS:
            raise InvalidInput(f"gradient must be one of {GRADIENTS}, got {self.gradient!r}")

    def resolved_lambda(self, t_f):
        return 1.0 / t_f if self.lam is None else float(self.lam)


@dataclass
class OptimizationRecord:
    target: GateTarget
    errors_per_iteration: list
    final_pulse: ControlPulse
    iterations_run: int
    stop_reason: StopReason
    lambda_initial: float
    lambda_final: float
    rejected_iterations: int = 0
    initial_pulse: ControlPulse | None = field(default=None, repr=False)
    final_trajectory: Trajectory | None = field(default=None, repr=False)

    @property
    def initial_error(self):
        return self.errors_per_iteration[0]

    @property
    def final_error(self):
        return self.errors_per_iteration[-1]

    @property
    def improvement(self):
        return improvement(self.initial_error, self.final_error)


def improvement(initial_error, final_error):
    """log10(E0 / Es); 0 when nothing changed, +inf for an exact final gate."""
    if initial_error == final_error:
        return 0.0
    if final_error <= 0:
        return math.inf
    return math.log10(initial_error / final_error)


def gate_error(g_tf, target):
    """Normalized Frobenius mismatch ``Tr[(O-G)^dag (O-G)] / (2N)``."""
    target = GateTarget.parse(target)
    diff = target.matrix - np.asarray(g_tf, dtype=complex)
    return float(np.vdot(diff, diff).real / (2 * SUPEROP_DIM))


def initial_guess(target, t_f, omega0=1.0, bounds=(-1.0, 1.0), dt=DEFAULT_DT, *, n=None):
    """Constant closed-system pulse ``omega0 + eps = n pi / t_f``.

    n has the parity of the gate (odd for Z, even for identity) and is chosen
    to minimize ``|n pi / t_f - omega0|`` within the bounds; ties go to the
    larger n. Passing ``n`` pins the harmonic instead (it must still have the
    right parity and fit the bounds).
    """
    target = GateTarget.parse(target)
    lower, upper = bounds
    if not lower < upper:
        raise InvalidInput("bounds.lower must be below bounds.upper")
    tol = 1e-12
    n_lo = math.ceil((omega0 + lower) * t_f / math.pi - tol)
    n_hi = math.floor((omega0 + upper) * t_f / math.pi + tol)
    candidates = [n for n in range(n_lo, n_hi + 1) if n % 2 == target.parity]
    if not candidates:
        raise NoAdmissibleGuess(
            f"no n with parity {'odd' if target.parity else 'even'} puts n*pi/{t_f} "
            f"inside [{omega0 + lower}, {omega0 + upper}]"
        )
    if n is None:
        n = min(candidates, key=lambda m: (abs(m * math.pi / t_f - omega0), -m))
    elif n not in candidates:
        raise NoAdmissibleGuess(f"n={n} has the wrong parity or leaves the bounds")
    eps = min(max(n * math.pi / t_f - omega0, lower), upper)
    return ControlPulse(dt, np.full(grid_size(t_f, dt), eps), lower, upper)


def control_gradient(chi_t, g_t):
    """``2 Re Tr[chi^dag (dLambda/deps) G]`` with dLambda/deps = diag(0,-i,i,0)."""
    return float(_kernels.control_overlap(np.ascontiguousarray(chi_t, complex),
                                          np.ascontiguousarray(g_t, complex)))


def _krotov_pass(trajectory: Trajectory, terms: ExpTermList, target, lam, blowup, gradient="explicit"):
    pulse = trajectory.pulse
    diff = target.matrix - trajectory.final_propagator
    chi_tf = diff / (2 * SUPEROP_DIM)
    n = pulse.n_steps
    eps_new = np.empty(n)
    f_out = np.empty((n + 1, len(terms)), complex)
    stage = np.empty((n, 4), complex)
    g_out = np.empty((n + 1, 4, 4), complex)
    common = (pulse.lower_bound, pulse.upper_bound, pulse.dt, trajectory.omega0,
              terms.p, terms.q, float(blowup), eps_new, f_out, stage, g_out)
    if gradient == "full":
        chi, mu = memory_costates(pulse, trajectory, terms, chi_tf, blowup=blowup)
        status = _kernels.update_sweep_full(pulse.samples, chi, mu, float(lam), *common)
    else:
        chi = propagate_adjoint(pulse, trajectory, chi_tf, blowup=blowup)
        status = _kernels.update_sweep(pulse.samples, chi, float(lam), *common)
    _check(status, pulse.dt)
    new_pulse = pulse.with_samples(eps_new)
    return Trajectory(new_pulse, trajectory.omega0, f_out, g_out, stage)


def memory_costates(pulse, trajectory, terms, chi_tf, *, blowup=BLOWUP_THRESHOLD):
    """Backward pass for chi together with the memory-function costates mu.

    The exact gradient of the gate error is
    ``-dE/deps(t) = control_gradient(chi, G) + 2 Re(i sum_j conj(mu_j) F_j)``.
    """
    n = pulse.n_steps
    chi = np.empty((n + 1, 4, 4), complex)
    mu = np.empty((n + 1, len(terms)), complex)
    status = _kernels.backward_sweep_full(
        pulse.samples, pulse.dt, trajectory.omega0, terms.q, trajectory.f_components,
        trajectory.stage_f, trajectory.propagators, np.asarray(chi_tf, complex),
        float(blowup), chi, mu,
    )
    _check(status, pulse.dt)
    return chi, mu


def krotov_iterate(pulse, terms, omega0, target, config, *, blowup=BLOWUP_THRESHOLD):
    """One Krotov pass: forward, backward, then the sequential update sweep.

    Returns the updated pulse and its gate error.
    """
    target = GateTarget.parse(target)
    trajectory = propagate(pulse, terms, omega0, blowup=blowup)
    if isinstance(config, KrotovConfig):
        lam = config.resolved_lambda(pulse.t_f)
        gradient = config.gradient
    else:
        lam = float(config)
        gradient = "explicit"
    updated = _krotov_pass(trajectory, terms, target, lam, blowup, gradient)
    return updated.pulse, gate_error(updated.final_propagator, target)


def optimize(
    terms,
    omega0,
    target,
    t_f,
    bounds=(-1.0, 1.0),
    config=None,
    *,
    dt=DEFAULT_DT,
    initial_pulse=None,
    blowup=BLOWUP_THRESHOLD,
    callback=None,
):
    """Iterate Krotov passes from the closed-system guess until convergence.

    An iterate that would raise the error is discarded (the previous pulse is
    kept and its error recorded again) and the step size is multiplied by
    ``lambda_backoff``, never dropping below ``lambda_floor`` times its initial
    value. ``errors_per_iteration`` therefore holds the initial error followed
    by one non-increasing entry per pass. ``callback(iteration, error, lam)``
    runs after every pass.

    Stops when the error reaches ``error_threshold``, after ``max_iterations``
    passes, or when the relative change over the last ``stall_window`` passes
    is below ``stall_tolerance``.
    """
    target = GateTarget.parse(target)
    config = config or KrotovConfig()
    if initial_pulse is None:
        initial_pulse = initial_guess(target, t_f, omega0, bounds, dt)
    trajectory = propagate(initial_pulse, terms, omega0, blowup=blowup)
    errors = [gate_error(trajectory.final_propagator, target)]
    lam = lam_initial = config.resolved_lambda(initial_pulse.t_f)
    lam_min = lam_initial * config.lambda_floor
    rejected = 0
    w = config.stall_window

    while True:
        if errors[-1] <= config.error_threshold:
            reason = StopReason.THRESHOLD
            break
        if len(errors) > w:
            ref = errors[-1 - w]
            if abs(ref - errors[-1]) <= config.stall_tolerance * ref:
                reason = StopReason.STALLED
                break
        if len(errors) - 1 >= config.max_iterations:
            reason = StopReason.MAX_ITERATIONS
            break
        candidate = _krotov_pass(trajectory, terms, target, lam, blowup, config.gradient)
        err = gate_error(candidate.final_propagator, target)
        if config.safeguard and err > errors[-1]:
            rejected += 1
            lam = max(lam * config.lambda_backoff, lam_min)
            err = errors[-1]
        else:
            trajectory = candidate
        errors.append(err)
        if callback is not None:
            callback(len(errors) - 1, err, lam)

    return OptimizationRecord(
        target=target,
        errors_per_iteration=errors,
        final_pulse=trajectory.pulse,
        iterations_run=len(errors) - 1,
        stop_reason=reason,
        lambda_initial=lam_initial,
        lambda_final=lam,
        rejected_iterations=rejected,
        initial_pulse=initial_pulse,
        final_trajectory=trajectory,
    )


def with_lambda(config: KrotovConfig, lam):
    return replace(config, lam=lam)
