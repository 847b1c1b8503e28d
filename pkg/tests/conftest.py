from __future__ import annotations

from hypothesis import HealthCheck, settings

import _shared

settings.register_profile(
    "suite",
    max_examples=25,
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


def pytest_terminal_summary(terminalreporter) -> None:
    if not _shared.ACCEPTANCE_LINES:
        return
    terminalreporter.ensure_newline()
    terminalreporter.section("acceptance criteria", sep="-")
    for line in _shared.ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
