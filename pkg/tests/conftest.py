import numpy as np
import pytest

from mfgturnpike.spectral import ModelParams, critical_coupling, make_cosine_kernel


@pytest.fixture
def cosine():
    return make_cosine_kernel()


@pytest.fixture
def gamma_c(cosine):
    return critical_coupling(1.0, cosine).gamma_c


@pytest.fixture
def half_critical(cosine, gamma_c):
    return ModelParams(1.0, 0.5 * gamma_c, cosine)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------------------
# acceptance reporting: one PASS/FAIL line per criterion in the terminal summary

_ACCEPTANCE: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    if report.when == "call" or (report.when == "setup" and report.failed):
        detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
        _ACCEPTANCE[number] = ("PASS" if report.passed else "FAIL", title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        status, title, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"[{status}] {number:2d}. {title}: {detail}")
