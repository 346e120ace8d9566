"""Shared pytest plumbing: a recorder for acceptance-criterion verdicts.

Acceptance tests call record_criterion() so the run always ends with one
PASS/FAIL line per criterion in the terminal summary, whether or not pytest
captured stdout during the tests themselves.
"""

_lines: list[tuple[int, str]] = []


def record_criterion(number: int, description: str, ok: bool, detail: str = "") -> None:
    verdict = "PASS" if ok else "FAIL"
    suffix = f"  [{detail}]" if detail else ""
    _lines.append((number, f"criterion {number}: {verdict} - {description}{suffix}"))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _lines:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_lines):
        terminalreporter.write_line(line)
