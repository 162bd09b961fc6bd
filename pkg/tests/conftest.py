import re

import pytest

_RESULTS = {}


class Acceptance:
    """Collects one line per acceptance criterion for the terminal summary."""

    def record(self, key, ok, detail):
        _RESULTS[key] = (bool(ok), detail)
        print(f"[{'PASS' if ok else 'FAIL'}] criterion {key}: {detail}")
        return ok


@pytest.fixture(scope="session")
def acceptance():
    return Acceptance()


def _order(key):
    m = re.match(r"(\d+)(.*)", key)
    return (int(m.group(1)), m.group(2)) if m else (10 ** 6, key)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_RESULTS, key=_order):
        ok, detail = _RESULTS[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {key}: {detail}")
