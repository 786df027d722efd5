import pytest

from qkdnet.config import load_run_config
from qkdnet.linkmodel import ProtocolParams
from qkdnet.topology import bundled_path, load_topology, read_document

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def run_config():
    return load_run_config(bundled_path("nicosia.run"))


@pytest.fixture(scope="session")
def calibrated(run_config):
    """Device defaults plus the bundled calibrated optical error."""
    return run_config.protocol


@pytest.fixture
def defaults():
    return ProtocolParams()


@pytest.fixture(scope="session")
def nicosia():
    return load_topology(bundled_path("nicosia.ring"))


@pytest.fixture
def nicosia_doc():
    return read_document(bundled_path("nicosia.ring"))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
