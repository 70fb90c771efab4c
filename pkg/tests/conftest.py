"""Collects the one-line verdicts of the acceptance criteria and prints them at the end."""

VERDICTS: dict[int, str] = {}


def record(number: int, ok: bool, detail: str) -> None:
    VERDICTS[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(VERDICTS):
        terminalreporter.write_line(VERDICTS[number])
