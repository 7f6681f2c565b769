import collections

import pytest

_OUTCOMES = collections.OrderedDict()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, summary): acceptance criterion clause")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    marker = _MARKERS.get(report.nodeid)
    if marker is None:
        return
    number, summary = marker
    entry = _OUTCOMES.setdefault(number, [])
    entry.append((summary, report.outcome == "passed"))


_MARKERS = {}


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            summary = m.args[1]
            callspec = getattr(item, "callspec", None)
            if callspec is not None:
                summary = f"{summary} [{callspec.id}]"
            _MARKERS[item.nodeid] = (str(m.args[0]), summary)


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_OUTCOMES, key=lambda s: (int("".join(c for c in s if c.isdigit()) or 0), s)):
        clauses = _OUTCOMES[number]
        ok = all(passed for _, passed in clauses)
        tr.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}")
        for summary, passed in clauses:
            tr.write_line(f"    [{'pass' if passed else 'FAIL'}] {summary}")


@pytest.fixture(scope="session")
def lorentzian_z_runs():
    """Cache of optimized Z-gate runs keyed by (alpha, gamma, Omega)."""
    from nmqoc import LorentzianBath, lorentzian_terms, optimize

    cache = {}

    def get(alpha, gamma, omega_big, t_f=2.0, bounds=(-1.0, 1.0)):
        key = (alpha, gamma, omega_big, t_f, bounds)
        if key not in cache:
            terms = lorentzian_terms(LorentzianBath(alpha, gamma, omega_big))
            cache[key] = optimize(terms, 1.0, "z", t_f, bounds)
        return cache[key]

    return get
