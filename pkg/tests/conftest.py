import pytest

from funceq.problemfile import load_corpus


@pytest.fixture
def corpus():
    return lambda name: load_corpus(name).problem


def pytest_terminal_summary(terminalreporter):
    from tests import acceptance_log

    if acceptance_log.LINES:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_log.LINES:
            terminalreporter.write_line(line)
