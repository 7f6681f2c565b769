import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nmqoc.bath import (
    ExpTermList,
    FitReport,
    LorentzianBath,
    OhmicBath,
    evaluate_terms,
    fit_multi_exponential,
    load_terms,
    lorentzian_correlation,
    lorentzian_terms,
    ohmic_correlation,
    ohmic_terms,
    save_terms,
)
from nmqoc.exceptions import FitFailed, InvalidInput


def test_lorentzian_terms_reproduce_kernel():
    bath = LorentzianBath(0.1, 0.3, 5.0)
    tau = np.linspace(0, 10, 101)
    terms = lorentzian_terms(bath)
    assert len(terms) == 1
    assert terms.p[0] == pytest.approx(0.015)
    assert terms.q[0] == complex(-0.3, -5.0)
    np.testing.assert_allclose(terms.evaluate(tau), lorentzian_correlation(tau, bath), rtol=1e-14)


def test_lorentzian_kernel_at_origin():
    assert lorentzian_correlation(0.0, LorentzianBath(0.2, 4.0, 1.0)) == pytest.approx(0.4)


@pytest.mark.parametrize("kwargs", [
    dict(alpha=-0.1, gamma=1, omega_big=1),
    dict(alpha=0.1, gamma=0, omega_big=1),
    dict(alpha=0.1, gamma=1, omega_big=np.nan),
])
def test_lorentzian_validation(kwargs):
    with pytest.raises(InvalidInput):
        LorentzianBath(**kwargs)


def test_ohmic_kernel_values():
    bath = OhmicBath(1e-3, 5.0)
    assert ohmic_correlation(0.0, bath) == pytest.approx(0.05)
    # |c(tau)| = 2 a wc^2 / (1 + wc^2 tau^2)
    assert abs(ohmic_correlation(1.0, bath)) == pytest.approx(0.05 / 26)
    with pytest.raises(InvalidInput):
        ohmic_correlation(-0.1, bath)
    with pytest.raises(InvalidInput):
        OhmicBath(1e-3, 0.0)


def test_term_list_requires_decay():
    with pytest.raises(InvalidInput):
        ExpTermList([1.0], [0.5 - 1j])
    with pytest.raises(InvalidInput):
        ExpTermList([1.0, 2.0], [-1.0])


def test_term_list_is_immutable():
    terms = lorentzian_terms(LorentzianBath(0.1, 1, 1))
    with pytest.raises(ValueError):
        terms.p[0] = 3


def test_empty_terms_evaluate_to_zero():
    assert evaluate_terms(ExpTermList.empty(), 1.3) == 0
    assert evaluate_terms(ExpTermList.empty(), np.ones(4)).shape == (4,)


def test_term_json_round_trip(tmp_path):
    terms = ExpTermList([0.1 + 0.2j, -0.3j], [-1.0 - 2j, -0.1 + 0.5j])
    report = FitReport(2, 7.0, 1.25e-4, 2000)
    path = tmp_path / "terms.json"
    save_terms(path, terms, report)
    loaded, rep = load_terms(path)
    assert loaded == terms
    assert rep == report
    assert set(json.loads(path.read_text())["terms"][0]) == {"p_re", "p_im", "q_re", "q_im"}


def test_from_dict_rejects_garbage():
    with pytest.raises(InvalidInput):
        ExpTermList.from_dict({"terms": [{"p_re": 1}]})


def test_fit_recovers_known_two_term_kernel():
    true = ExpTermList([0.7 + 0.1j, 0.3 - 0.2j], [-0.5 - 1j, -3.0 + 2j])
    tau = np.linspace(0, 8, 800)
    terms, report = fit_multi_exponential((tau, true.evaluate(tau)), 2)
    assert report.relative_l2_residual < 1e-8
    order = np.argsort(-true.q.real)
    np.testing.assert_allclose(terms.q, true.q[order], atol=1e-6)
    np.testing.assert_allclose(terms.p, true.p[order], atol=1e-6)


def test_fit_accepts_pairs():
    tau = np.linspace(0, 4, 200)
    y = 2 * np.exp(-tau)
    terms, _ = fit_multi_exponential(list(zip(tau, y)), 1)
    assert terms.p[0] == pytest.approx(2, rel=1e-6)


def test_fit_rejects_nonuniform_grid():
    tau = np.array([0.0, 0.1, 0.3, 0.4])
    with pytest.raises(InvalidInput):
        fit_multi_exponential((tau, np.exp(-tau)), 1)


def test_fit_scale_equivariance():
    """Scaling the kernel scales the amplitudes and leaves the rates alone."""
    bath = OhmicBath(1e-3, 1.0)
    base, rep1 = ohmic_terms(bath, 2.0)
    scaled, rep2 = ohmic_terms(OhmicBath(1e-2, 1.0), 2.0)
    np.testing.assert_allclose(scaled.q, base.q, rtol=1e-6)
    np.testing.assert_allclose(scaled.p, 10 * base.p, rtol=1e-6)
    assert rep2.relative_l2_residual == pytest.approx(rep1.relative_l2_residual, rel=1e-6)


def test_ohmic_fit_unit_cutoff_meets_threshold():
    terms, report = ohmic_terms(OhmicBath(1e-3, 1.0), 2.0)
    assert len(terms) == 4
    assert report.fit_horizon == pytest.approx(7.0)
    assert report.relative_l2_residual < 1e-3
    assert np.all(terms.q.real < 0)
    tau = np.linspace(0, 7, 300)
    err = np.linalg.norm(terms.evaluate(tau) - ohmic_correlation(tau, OhmicBath(1e-3, 1.0)))
    assert err / np.linalg.norm(ohmic_correlation(tau, OhmicBath(1e-3, 1.0))) < 2e-3


def test_ohmic_four_terms_plateau_at_higher_cutoff():
    # Frozen from a global differential-evolution search over the four rates:
    # the best relative residual on [0, 10] at omega_c = 5 is 5.07e-3.
    tau = np.linspace(0, 10, 2000)
    y = ohmic_correlation(tau, OhmicBath(0.01, 5.0))
    with pytest.raises(FitFailed) as info:
        fit_multi_exponential((tau, y), 4, rate_scale=5.0)
    assert info.value.residual == pytest.approx(5.07e-3, rel=0.03)
    _, report = fit_multi_exponential((tau, y), 6, rate_scale=5.0)
    assert report.relative_l2_residual < 1e-3


def test_single_exponential_cannot_fit_ohmic():
    with pytest.raises(FitFailed) as info:
        ohmic_terms(OhmicBath(0.01, 5.0), 2.0, term_count=1, fit_horizon=20.0)
    assert info.value.residual > 0.1


def test_zero_coupling_fit_is_empty():
    terms, report = ohmic_terms(OhmicBath(0.0, 5.0), 2.0)
    assert len(terms) == 0 and report.term_count == 0


def test_fit_is_seed_deterministic():
    a, _ = ohmic_terms(OhmicBath(1e-3, 1.0), 2.0, seed=3)
    b, _ = ohmic_terms(OhmicBath(1e-3, 1.0), 2.0, seed=3)
    assert a == b


rates = st.tuples(st.floats(0.05, 5), st.floats(-5, 5))
amps = st.tuples(st.floats(-2, 2), st.floats(-2, 2))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(amps, rates), min_size=1, max_size=4), st.floats(0.1, 10))
def test_evaluate_is_linear_and_decays(pairs, factor):
    terms = ExpTermList.from_pairs((complex(*a), complex(-r[0], r[1])) for a, r in pairs)
    tau = np.linspace(0, 5, 11)
    np.testing.assert_allclose(terms.scaled(factor).evaluate(tau), factor * terms.evaluate(tau), atol=1e-12)
    bound = np.sum(np.abs(terms.p))
    assert np.all(np.abs(terms.evaluate(tau)) <= bound + 1e-12)
    assert terms.evaluate(0.0) == pytest.approx(complex(np.sum(terms.p)))
