import pytest

from flowfilter.mesh import generate_channel_mesh


@pytest.fixture(scope="session")
def mesh_10x4():
    return generate_channel_mesh(5.0, 1.0, 10, 4)


@pytest.fixture(scope="session")
def mesh_4x2():
    return generate_channel_mesh(5.0, 1.0, 4, 2)


# one summary line per acceptance criterion, filled in by test_acceptance.py
CRITERIA = {}


def record_criterion(number, passed, detail):
    CRITERIA[number] = (passed, detail)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'} | {detail}")


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        passed, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if passed else 'FAIL'} | {detail}")
