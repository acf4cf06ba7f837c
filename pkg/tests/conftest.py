_criterion_lines = []


def record_criterion(num: int, ok: bool, detail: str) -> None:
    """Collect one acceptance-criterion verdict for the terminal summary."""
    _criterion_lines.append((num, bool(ok), detail))


def pytest_terminal_summary(terminalreporter):
    if not _criterion_lines:
        return
    terminalreporter.section("acceptance criteria")
    for num, ok, detail in sorted(_criterion_lines):
        verdict = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"CRITERION {num}: {verdict} - {detail}")
