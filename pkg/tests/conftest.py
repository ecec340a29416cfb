from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fastflux.enrichment import IpDatabase, IpMeta  # noqa: E402
from fastflux.ingest import DnsAnswerRecord  # noqa: E402

T0 = 1_520_600_000


def rec(ts: int, ips, qname: str = "example.com", ttl: int = 60) -> DnsAnswerRecord:
    return DnsAnswerRecord(ts, qname, ttl, tuple(ips))


def make_db(rows) -> IpDatabase:
    """rows of (cidr, asn, country)."""
    return IpDatabase([(cidr, IpMeta(cidr, asn, cc)) for cidr, asn, cc in rows])


@pytest.fixture
def small_db() -> IpDatabase:
    return make_db([("1.1.1.0/24", 100, "US"), ("2.2.0.0/16", 200, "DE"), ("3.3.3.0/24", 300, "RO")])


# --------------------------------------------------------------------------
# acceptance report: one line per criterion in the terminal summary
# --------------------------------------------------------------------------

_criteria: dict[str, tuple[str, str, list]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if item.get_closest_marker("acceptance") is None:
        return
    if rep.when == "call" or (rep.failed and item.nodeid not in _criteria):
        title = (item.function.__doc__ or item.name).strip().splitlines()[0]
        status = "PASS" if rep.passed else "SKIP" if rep.skipped else "FAIL"
        _criteria[item.nodeid] = (status, title, [f"{k}={v}" for k, v in item.user_properties])


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for status, title, measured in _criteria.values():
        extra = f"  [{', '.join(measured)}]" if measured else ""
        terminalreporter.write_line(f"{status}  {title}{extra}")
