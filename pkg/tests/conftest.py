from importlib import resources

import pytest


def data_path(name: str) -> str:
    return str(resources.files("wbpgm") / "data" / name)


@pytest.fixture
def hpf_path():
    return data_path("hippocampal_formation.json")


# one verdict line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
