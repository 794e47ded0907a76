import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def central_difference(f, x, h=1e-5):
    """Central finite-difference gradient of a scalar function of an array."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        g[idx] = (f(x + e) - f(x - e)) / (2 * h)
    return g


# -- acceptance report -------------------------------------------------------
# Tests marked ``@pytest.mark.acceptance(n)`` contribute one line per criterion
# to the terminal summary; ``record_property("detail", ...)`` adds context.

_acceptance: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or (report.when != "call" and not report.failed):
        return
    n = marker.args[0]
    entry = _acceptance.setdefault(n, {"ok": True, "details": []})
    if report.failed:
        entry["ok"] = False
    if report.when == "call":
        entry["details"] += [str(v) for k, v in item.user_properties if k == "detail"]


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_acceptance):
        entry = _acceptance[n]
        status = "PASS" if entry["ok"] else "FAIL"
        detail = "; ".join(entry["details"])
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {detail}".rstrip())
