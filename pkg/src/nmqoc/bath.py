"""Bath correlation functions and their multi-exponential representation.

All quantities are dimensionless in units of the bare qubit frequency
``omega0``. A kernel is stored as amplitudes ``p`` and rates ``q`` so that

    c(tau) = sum_j p_j * exp(q_j * tau),   tau >= 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .exceptions import FitFailed, InvalidInput

__all__ = [
    "LorentzianBath",
    "OhmicBath",
    "ExpTermList",
    "FitReport",
    "lorentzian_terms",
    "lorentzian_correlation",
    "ohmic_correlation",
    "ohmic_terms",
    "fit_multi_exponential",
    "evaluate_terms",
    "save_terms",
    "load_terms",
]

DEFAULT_FIT_TERMS = 4
DEFAULT_FIT_SAMPLES = 2000
DEFAULT_FIT_THRESHOLD = 1e-3


@dataclass(frozen=True)
class LorentzianBath:
    """Lorentzian spectral density peaked at ``omega_big`` with width ``gamma``.

    Its correlation function is a single decaying exponential,
    ``alpha * gamma / 2 * exp(-gamma*tau - 1j*omega_big*tau)``.
    """

    alpha: float
    gamma: float
    omega_big: float

    def __post_init__(self):
        if not np.isfinite(self.alpha) or self.alpha < 0:
            raise InvalidInput(f"alpha must be >= 0, got {self.alpha}")
        if not np.isfinite(self.gamma) or self.gamma <= 0:
            raise InvalidInput(f"gamma must be > 0, got {self.gamma}")
        if not np.isfinite(self.omega_big):
            raise InvalidInput(f"omega_big must be finite, got {self.omega_big}")

    def correlation(self, tau):
        return lorentzian_correlation(tau, self)


@dataclass(frozen=True)
class OhmicBath:
    """Ohmic spectral density ``2 alpha_o w exp(-w / omega_c)``."""

    alpha_o: float
    omega_c: float

    def __post_init__(self):
        if not np.isfinite(self.alpha_o) or self.alpha_o < 0:
            raise InvalidInput(f"alpha_o must be >= 0, got {self.alpha_o}")
        if not np.isfinite(self.omega_c) or self.omega_c <= 0:
            raise InvalidInput(f"omega_c must be > 0, got {self.omega_c}")

    def correlation(self, tau):
        return ohmic_correlation(tau, self)


@dataclass(frozen=True)
class ExpTermList:
    """Kernel as a sum of complex exponentials.

    Attributes
    ----------
    p : numpy.ndarray
        Complex amplitudes, shape ``(K,)``.
    q : numpy.ndarray
        Complex rates, shape ``(K,)``. Every real part is strictly negative.
    """

    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        p = np.atleast_1d(np.asarray(self.p, dtype=complex)).copy()
        q = np.atleast_1d(np.asarray(self.q, dtype=complex)).copy()
        if p.ndim != 1 or p.shape != q.shape:
            raise InvalidInput("p and q must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
            raise InvalidInput("terms must be finite")
        if np.any(q.real >= 0):
            raise InvalidInput("every rate q_j must have a negative real part")
        p.flags.writeable = False
        q.flags.writeable = False
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)

    @classmethod
    def empty(cls):
        return cls(np.zeros(0, complex), np.zeros(0, complex))

    @classmethod
    def from_pairs(cls, pairs):
        pairs = list(pairs)
        if not pairs:
            return cls.empty()
        p, q = zip(*pairs)
        return cls(np.array(p, complex), np.array(q, complex))

    def __len__(self):
        return len(self.p)

    def __iter__(self):
        return iter(zip(self.p.tolist(), self.q.tolist()))

    def __eq__(self, other):
        if not isinstance(other, ExpTermList):
            return NotImplemented
        return np.array_equal(self.p, other.p) and np.array_equal(self.q, other.q)

    __hash__ = None

    def scaled(self, factor):
        """Return a copy with every amplitude multiplied by ``factor``."""
        return ExpTermList(self.p * factor, self.q)

    def evaluate(self, tau):
        return evaluate_terms(self, tau)

    def to_dict(self):
        return {
            "terms": [
                {"p_re": pj.real, "p_im": pj.imag, "q_re": qj.real, "q_im": qj.imag}
                for pj, qj in self
            ]
        }

    @classmethod
    def from_dict(cls, data):
        try:
            return cls.from_pairs(
                (complex(t["p_re"], t["p_im"]), complex(t["q_re"], t["q_im"]))
                for t in data["terms"]
            )
        except (KeyError, TypeError) as exc:
            raise InvalidInput(f"malformed term list: {exc}") from None


@dataclass(frozen=True)
class FitReport:
    term_count: int
    fit_horizon: float
    relative_l2_residual: float
    sample_count: int

    def to_dict(self):
        return {
            "term_count": self.term_count,
            "fit_horizon": self.fit_horizon,
            "relative_l2_residual": self.relative_l2_residual,
            "sample_count": self.sample_count,
        }


def lorentzian_correlation(tau, bath):
    tau = np.asarray(tau, dtype=float)
    return bath.alpha * bath.gamma / 2 * np.exp(-bath.gamma * np.abs(tau) - 1j * bath.omega_big * tau)


def lorentzian_terms(bath: LorentzianBath) -> ExpTermList:
    """Exact one-term expansion of the Lorentzian kernel."""
    return ExpTermList(
        np.array([bath.alpha * bath.gamma / 2], complex),
        np.array([complex(-bath.gamma, -bath.omega_big)]),
    )


def ohmic_correlation(tau, bath: OhmicBath):
    """Zero-temperature Ohmic kernel ``2 alpha_o omega_c^2 / (1 + i omega_c tau)^2``."""
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0):
        raise InvalidInput("tau must be non-negative")
    out = 2 * bath.alpha_o * bath.omega_c**2 / (1 + 1j * bath.omega_c * tau) ** 2
    return out[()] if out.ndim == 0 else out


def evaluate_terms(terms: ExpTermList, tau):
    """Sum ``p_j exp(q_j tau)``; vectorized over ``tau``."""
    tau = np.asarray(tau, dtype=float)
    if len(terms) == 0:
        out = np.zeros(tau.shape, complex)
    else:
        out = np.exp(np.multiply.outer(tau, terms.q)) @ terms.p
    return out[()] if out.ndim == 0 else out


# -- fitting ---------------------------------------------------------------


def _unpack(theta, k):
    return -np.exp(theta[:k]) + 1j * theta[k:]


def _amplitudes(tau, y, q):
    basis = np.exp(np.outer(tau, q))
    p, *_ = np.linalg.lstsq(basis, y, rcond=None)
    return p, basis


def _varpro_residual(theta, tau, y, k):
    p, basis = _amplitudes(tau, y, _unpack(theta, k))
    r = basis @ p - y
    return np.concatenate([r.real, r.imag])


def _starting_rates(k, rate_scale, rng, n_random):
    """Initial complex rates for the multi-start search.

    Decay rates are log-spaced over two decades around ``rate_scale``; each set
    is tried without oscillation and with an oscillation frequency equal to
    minus the decay rate (rate phase 0 and -pi/4 away from the negative real
    axis). Extra seeded random starts follow.
    """
    base = rate_scale * np.logspace(-1, 1, k) if k > 1 else np.array([rate_scale])
    starts = []
    for shift in (1.0, 0.5, 2.0):
        decay = base * shift
        starts.append(-decay + 0j)
        starts.append(-decay - 1j * decay)
    for _ in range(n_random):
        decay = rate_scale * 10 ** rng.uniform(-1.5, 1.5, k)
        starts.append(-decay + 1j * rng.normal(scale=rate_scale, size=k))
    return starts


def fit_multi_exponential(
    kernel_samples,
    term_count,
    *,
    threshold=DEFAULT_FIT_THRESHOLD,
    rate_scale=None,
    seed=0,
    n_random_starts=4,
):
    """Least-squares fit of a complex multi-exponential to kernel samples.

    Amplitudes enter linearly and are eliminated by variable projection; the
    rates are optimized with a trust-region solver. The real part of every
    rate is parameterized as ``-exp(u)`` so the decaying-kernel invariant
    holds at every iterate.

    Parameters
    ----------
    kernel_samples : sequence of (float, complex) or tuple of arrays
        Either pairs ``(tau, c(tau))`` or a ``(times, values)`` pair of
        arrays. Times must start at 0 and be uniformly spaced.
    term_count : int
        Number of exponentials ``K >= 1``.
    threshold : float
        Maximum accepted relative L2 residual.
    rate_scale : float, optional
        Typical decay rate used to seed the multi-start search. Defaults to
        an estimate from the samples (inverse of the |c|-weighted mean time).
    seed : int
        Seed for the random part of the multi-start.

    Returns
    -------
    (ExpTermList, FitReport)

    Raises
    ------
    InvalidInput
        ``K < 1``, non-uniform or non-finite samples.
    FitFailed
        The best residual over all starts exceeds ``threshold``.
    """
    if int(term_count) != term_count or term_count < 1:
        raise InvalidInput(f"term_count must be a positive integer, got {term_count}")
    k = int(term_count)
    tau, y = _split_samples(kernel_samples)
    norm_y = np.linalg.norm(y)
    if norm_y == 0:
        raise InvalidInput("kernel samples are identically zero")

    if rate_scale is None:
        weights = np.abs(y)
        mean_time = np.sum(weights * tau) / np.sum(weights)
        rate_scale = 1.0 / max(mean_time, tau[1] - tau[0])
    rng = np.random.default_rng(seed)

    # box keeps exp() finite; rates far outside it are unresolvable on this grid
    h = tau[1] - tau[0]
    lower = np.concatenate([np.full(k, np.log(1e-3 / tau[-1])), np.full(k, -np.pi / h)])
    upper = np.concatenate([np.full(k, np.log(10.0 / h)), np.full(k, np.pi / h)])

    best = None
    for q0 in _starting_rates(k, rate_scale, rng, n_random_starts):
        theta0 = np.clip(np.concatenate([np.log(-q0.real), q0.imag]), lower * 0.999, upper * 0.999)
        try:
            sol = least_squares(
                _varpro_residual, theta0, args=(tau, y, k), method="trf",
                bounds=(lower, upper), xtol=1e-15, ftol=1e-15, gtol=1e-15,
                max_nfev=400 * k,
            )
        except (np.linalg.LinAlgError, ValueError):
            continue
        q = _unpack(sol.x, k)
        if not np.all(np.isfinite(q)):
            continue
        p, basis = _amplitudes(tau, y, q)
        resid = np.linalg.norm(basis @ p - y) / norm_y
        if best is None or resid < best[0]:
            best = (resid, p, q)
        if resid < threshold * 1e-3:
            break

    if best is None:
        raise FitFailed("no start converged", residual=None)
    resid, p, q = best
    if resid > threshold:
        raise FitFailed(
            f"best relative residual {resid:.3e} exceeds threshold {threshold:.1e} "
            f"with K={k}",
            residual=float(resid),
        )
    order = np.argsort(q.real)[::-1]
    terms = ExpTermList(p[order], q[order])
    report = FitReport(k, float(tau[-1]), float(resid), len(tau))
    return terms, report


def _split_samples(kernel_samples):
    if isinstance(kernel_samples, tuple) and len(kernel_samples) == 2 and np.ndim(kernel_samples[0]) == 1:
        tau = np.asarray(kernel_samples[0], dtype=float)
        y = np.asarray(kernel_samples[1], dtype=complex)
    else:
        pairs = list(kernel_samples)
        if not pairs:
            raise InvalidInput("no kernel samples")
        tau = np.array([t for t, _ in pairs], dtype=float)
        y = np.array([v for _, v in pairs], dtype=complex)
    if tau.shape != y.shape or tau.size < 2:
        raise InvalidInput("need at least two samples with matching shapes")
    if not (np.all(np.isfinite(tau)) and np.all(np.isfinite(y))):
        raise InvalidInput("kernel samples must be finite")
    steps = np.diff(tau)
    h = (tau[-1] - tau[0]) / (tau.size - 1)
    if abs(tau[0]) > 1e-12 * max(1.0, tau[-1]) or h <= 0 or np.max(np.abs(steps - h)) > 1e-9 * max(h, tau[-1]):
        raise InvalidInput("samples must lie on a uniform grid starting at tau = 0")
    return tau, y


def ohmic_terms(
    bath: OhmicBath,
    t_f,
    *,
    term_count=DEFAULT_FIT_TERMS,
    fit_horizon=None,
    sample_count=DEFAULT_FIT_SAMPLES,
    threshold=DEFAULT_FIT_THRESHOLD,
    seed=0,
):
    """Fit the Ohmic kernel over ``[0, t_f + 5 / omega_c]`` (or ``fit_horizon``)."""
    if bath.alpha_o == 0:
        return ExpTermList.empty(), FitReport(0, 0.0, 0.0, 0)
    horizon = t_f + 5.0 / bath.omega_c if fit_horizon is None else float(fit_horizon)
    if horizon <= 0:
        raise InvalidInput("fit horizon must be positive")
    tau = np.linspace(0.0, horizon, sample_count)
    return fit_multi_exponential(
        (tau, ohmic_correlation(tau, bath)),
        term_count,
        threshold=threshold,
        rate_scale=bath.omega_c,
        seed=seed,
    )


def save_terms(path, terms: ExpTermList, report: FitReport | None = None):
    data = terms.to_dict()
    if report is not None:
        data["report"] = report.to_dict()
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2)
        fh.write("\n")


def load_terms(path):
    """Read a cached term list; returns ``(terms, report_or_None)``."""
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    report = data.get("report")
    if report is not None:
        report = FitReport(
            int(report["term_count"]),
            float(report["fit_horizon"]),
            float(report["relative_l2_residual"]),
            int(report["sample_count"]),
        )
    return ExpTermList.from_dict(data), report
