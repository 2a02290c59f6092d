# Acceptance verdicts, one line per criterion, echoed after the test session.
VERDICTS: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance")
    for n in sorted(VERDICTS):
        terminalreporter.write_line(VERDICTS[n])
