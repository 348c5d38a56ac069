import pytest

# (criterion number, passed, detail) lines collected by test_acceptance
CRITERIA = []


@pytest.fixture
def criterion():
    def record(number, passed, detail):
        CRITERIA.append((number, passed, detail))
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} ({detail})")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(CRITERIA, key=lambda c: str(c[0])):
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'} ({detail})")
