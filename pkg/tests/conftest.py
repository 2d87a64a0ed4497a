import contextlib

import pytest

_CRITERIA: dict[int, list] = {}


@pytest.fixture
def criterion():
    """Context manager recording one acceptance sub-check as pass or fail."""

    @contextlib.contextmanager
    def check(number: int, label: str):
        try:
            yield
        except BaseException as exc:
            _CRITERIA.setdefault(number, []).append((label, False, str(exc).splitlines()[0:1]))
            raise
        _CRITERIA.setdefault(number, []).append((label, True, []))

    return check


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        checks = _CRITERIA[number]
        ok = all(passed for _, passed, _ in checks)
        failed = [f"{label} ({detail[0] if detail else 'failed'})"
                  for label, passed, detail in checks if not passed]
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  " + \
            "; ".join(label for label, _, _ in checks)
        terminalreporter.write_line(line)
        for f in failed:
            terminalreporter.write_line(f"    failed: {f}")
