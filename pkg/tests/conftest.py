import os
from pathlib import Path

import pytest
from hypothesis import settings

FIXTURES = Path(__file__).parent / "fixtures"

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def jhu_path():
    return FIXTURES / "jhu.csv"


# one line per acceptance criterion, printed after the run
ACCEPTANCE = {}


def record(criterion, ok, detail, elapsed=None, limit=None):
    """Store a criterion outcome; runtime counts against ``limit`` seconds."""
    if limit is not None:
        ok = ok and elapsed < limit
        detail = f"{detail}; {elapsed:.1f}s (limit {limit:.0f}s)"
    if criterion in ACCEPTANCE:  # criteria with several parts share a line
        prev_ok, prev = ACCEPTANCE[criterion]
        ACCEPTANCE[criterion] = (prev_ok and ok, f"{prev} | {detail}")
    else:
        ACCEPTANCE[criterion] = (ok, detail)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'} - {detail}")
