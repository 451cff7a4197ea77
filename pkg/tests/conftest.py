"""Shared pytest hooks: collect acceptance-criterion verdicts and print one
pass/fail line per criterion at the end of the run."""

_criterion_lines = {}


def record_criterion(number: int, name: str, passed: bool, detail: str = ""):
    status = "PASS" if passed else "FAIL"
    line = f"[{status}] criterion {number}: {name}"
    if detail:
        line += f" — {detail}"
    _criterion_lines[number] = line


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _criterion_lines:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_criterion_lines):
        terminalreporter.write_line(_criterion_lines[number])
