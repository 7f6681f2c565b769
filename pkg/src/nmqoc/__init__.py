"""Optimal control of a qubit in a non-Markovian dephasing/decay environment."""

from .analysis import CoherenceDecomposition, SweepResult, decompose_coherence, tabulate_sweep
from .bath import (
    ExpTermList,
    FitReport,
    LorentzianBath,
    OhmicBath,
    evaluate_terms,
    fit_multi_exponential,
    lorentzian_correlation,
    lorentzian_terms,
    ohmic_correlation,
    ohmic_terms,
)
from .dynamics import ControlPulse, MemoryState, Trajectory, build_lindbladian, propagate, propagate_adjoint
from .exceptions import ConfigError, FitFailed, IntegrationDiverged, InvalidInput, NMQOCError, NoAdmissibleGuess
from .optimizer import (
    GateTarget,
    KrotovConfig,
    OptimizationRecord,
    StopReason,
    control_gradient,
    gate_error,
    improvement,
    initial_guess,
    krotov_iterate,
    optimize,
)

__version__ = "0.1.0"
