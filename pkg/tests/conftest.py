import pytest

VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """Record one 'criterion N ...: PASS/FAIL' line; printed now and again in the terminal summary."""
    def record(n: int, title: str, ok: bool, detail: str = ""):
        line = f"criterion {n} {title}: {'PASS' if ok else 'FAIL'}" + (f" ({detail})" if detail else "")
        VERDICTS.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
