import pytest

_LINES = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record and print one PASS/FAIL line for an acceptance criterion."""
    lines = request.config.stash.setdefault(_LINES, [])

    def record(number, title, ok, seconds, detail=""):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {title} ({seconds:.1f} s){'; ' + detail if detail else ''}"
        lines.append(line)
        print(line, flush=True)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
