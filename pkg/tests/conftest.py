import pytest
from hypothesis import HealthCheck, settings

from nsplan.conditioning import ConditioningConfig
from nsplan.kbm import KbmParams

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_CRITERIA: list[str] = []


@pytest.fixture
def params():
    return KbmParams()


@pytest.fixture
def tiny_cfg():
    # small enough for exhaustive finite differences
    return ConditioningConfig(d_model=8, modes=6, hidden=5)


@pytest.fixture
def criterion():
    """Record one acceptance line; it is printed live and repeated in the terminal summary."""
    def record(tag: str, ok: bool, detail: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] {tag}: {detail}"
        _CRITERIA.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
