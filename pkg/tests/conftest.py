"""Shared test infrastructure.

The criterion log collects one verdict per acceptance criterion and prints
them in a dedicated section after the run, so the gate stays readable even
when the suite is long.  Keys are "1".."11" with optional letter suffixes
for criteria that decompose into independent clauses ("9a", "9b", "9c").
"""

import re

import pytest


def _sort_key(key):
    m = re.match(r"(\d+)([a-z]*)", str(key))
    return (int(m.group(1)), m.group(2))


class _CriterionLog:
    def __init__(self):
        self.records = {}

    def record(self, number, name, passed, detail=""):
        self.records[str(number)] = (name, bool(passed), str(detail))


_LOG = _CriterionLog()


@pytest.fixture(scope="session")
def criterion_log():
    return _LOG


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _LOG.records:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_LOG.records, key=_sort_key):
        name, passed, detail = _LOG.records[key]
        line = f"CRITERION {key:>3s} [{name}]: {'PASS' if passed else 'FAIL'}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)
