"""Collects the acceptance verdicts and prints one line per criterion."""

VERDICTS = {}


def record(criterion, ok, detail):
    VERDICTS[criterion] = (bool(ok), detail)
    print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for c in sorted(VERDICTS):
        ok, detail = VERDICTS[c]
        terminalreporter.write_line(f"criterion {c:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
