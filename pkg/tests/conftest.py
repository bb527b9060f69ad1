import pytest

from parakin import DecompositionConfig, ManipulatorGeometry, build_atlas


@pytest.fixture(scope="session")
def geom():
    return ManipulatorGeometry()


@pytest.fixture(scope="session")
def atlas(geom):
    """Reference five-bar at the default depth."""
    return build_atlas(geom, DecompositionConfig())


# acceptance lines collected by test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
