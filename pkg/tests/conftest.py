import json

import pytest

import tapnet
from tapnet.network import enumerate_routes

ACCEPTANCE_LINES = {}


def fixture_doc(name):
    return json.loads(tapnet.fixture_path(name).read_text())


@pytest.fixture(scope="session")
def pigou():
    net = tapnet.load_fixture("pigou")
    return net, enumerate_routes(net)


@pytest.fixture(scope="session")
def diamond():
    net = tapnet.load_fixture("diamond")
    return net, enumerate_routes(net)


@pytest.fixture(scope="session")
def small():
    net = tapnet.load_fixture("small")
    return net, enumerate_routes(net)


@pytest.fixture(scope="session")
def nguyen():
    net = tapnet.load_fixture("nguyen-dupuis")
    return net, enumerate_routes(net)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
