import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_acceptance: list[str] = []


@pytest.fixture
def criterion():
    """``criterion(n, name, ok, detail)`` records a PASS/FAIL line and asserts."""

    def record(n: int, name: str, ok: bool, detail: str = ""):
        line = f"criterion {n:>2} {'PASS' if ok else 'FAIL'}  {name}  {detail}".rstrip()
        _acceptance.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _acceptance:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_acceptance, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
