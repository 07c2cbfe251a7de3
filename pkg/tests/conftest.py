"""Shared fixtures and the acceptance-criterion result banner."""

import pytest

_criterion_lines: list[str] = []


def record_criterion(line: str) -> None:
    _criterion_lines.append(line)


@pytest.fixture(scope="session")
def criterion():
    """Record one 'criterion N: PASS/FAIL' line and assert the verdict."""

    def check(number: int, ok: bool, detail: str) -> None:
        verdict = "PASS" if ok else "FAIL"
        record_criterion(f"criterion {number:2d}: {verdict}  {detail}")
        assert ok, f"criterion {number}: {detail}"

    return check


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _criterion_lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_criterion_lines):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def desk_surrogate():
    """Desk-scale trained surrogate, built once and cached on disk."""
    import _desk

    return _desk.desk_surrogate(log=lambda msg: None)
