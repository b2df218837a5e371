import socket

import pytest

from domscreen.dataset import diversity_split
from domscreen.synth import synth_generate

REFERENCE_YEAR = 2016
NETWORK_ATTEMPTS = []

_real_connect = socket.socket.connect
_real_connect_ex = socket.socket.connect_ex


def _blocked(self, address, *args):
    NETWORK_ATTEMPTS.append(address)
    raise OSError(f"network disabled in tests (attempted {address!r})")


@pytest.fixture(autouse=True, scope="session")
def no_network():
    # unix sockets are left alone; multiprocessing may use them
    def connect(self, address, *args):
        if self.family in (socket.AF_INET, socket.AF_INET6):
            return _blocked(self, address)
        return _real_connect(self, address, *args)

    def connect_ex(self, address, *args):
        if self.family in (socket.AF_INET, socket.AF_INET6):
            return _blocked(self, address)
        return _real_connect_ex(self, address, *args)

    socket.socket.connect = connect
    socket.socket.connect_ex = connect_ex
    yield NETWORK_ATTEMPTS
    socket.socket.connect = _real_connect
    socket.socket.connect_ex = _real_connect_ex


@pytest.fixture(scope="session")
def synth903():
    return synth_generate(903, seed=0)


@pytest.fixture(scope="session")
def split903(synth903):
    return diversity_split(synth903, seed=0, reference_year=REFERENCE_YEAR)


# --------------------------------------------------------------------------- acceptance report

_OUTCOMES = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    prev = _OUTCOMES.get(number)
    failed = report.failed or (prev is not None and not prev[1])
    if report.when == "call" or report.failed:
        _OUTCOMES[number] = (title, not failed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_OUTCOMES):
        title, passed, detail = _OUTCOMES[number]
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {number}: {title}" + (f" ({detail})" if detail else ""))
