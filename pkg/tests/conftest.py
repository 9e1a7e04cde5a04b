import numpy as np
import pytest

from cylmag.fields import catalog_system, free_particle_system, uniform_field_system

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one pass/fail line per acceptance criterion for the terminal summary."""

    def record(number, title, passed, detail):
        line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def system_i():
    return catalog_system("SYSTEM_I")


@pytest.fixture(scope="session")
def system_ii():
    return catalog_system("SYSTEM_II", beta="closed")


@pytest.fixture(scope="session")
def system_iii():
    return catalog_system("SYSTEM_III")


@pytest.fixture(scope="session")
def system_iii_base_ii():
    return catalog_system("SYSTEM_III", base="II", beta="closed")


@pytest.fixture(scope="session")
def catalog(system_i, system_ii, system_iii):
    return {"SYSTEM_I": system_i, "SYSTEM_II": system_ii, "SYSTEM_III": system_iii}


@pytest.fixture(scope="session")
def free():
    return free_particle_system()


@pytest.fixture(scope="session")
def uniform():
    return uniform_field_system(0.8)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
