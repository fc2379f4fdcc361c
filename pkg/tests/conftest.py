"""Shared pytest configuration.

Acceptance tests print one PASS/FAIL line per criterion so a plain
``pytest`` run shows the acceptance scorecard.
"""

from __future__ import annotations

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    if "test_acceptance" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    status = "PASS" if report.passed else "FAIL"
    print(f"\n[ACCEPTANCE] {status} {name}", file=sys.stderr, flush=True)
