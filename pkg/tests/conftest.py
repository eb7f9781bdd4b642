from collections import defaultdict

import pytest

# criterion number -> list of (label, ok, detail); filled by test_acceptance
ACCEPTANCE = defaultdict(list)


@pytest.fixture
def record():
    def _record(criterion, label, ok, detail=""):
        ACCEPTANCE[criterion].append((label, bool(ok), detail))
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for crit in sorted(ACCEPTANCE):
        checks = ACCEPTANCE[crit]
        verdict = "PASS" if all(ok for _, ok, _ in checks) else "FAIL"
        tr.write_line(f"criterion {crit}: {verdict}")
        for label, ok, detail in checks:
            tr.write_line(f"    [{'ok' if ok else 'FAIL'}] {label}: {detail}")
