"""Batch-cycle orchestration: filter, update history, score, report."""

from __future__ import annotations

import gc
import heapq
import logging
from collections import Counter
from dataclasses import replace
from typing import Iterable, Iterator, TextIO

import orjson

from .config import Config
from .enrichment import IpDatabase
from .filters import DomainSummary, apply_filters, refresh_auto_whitelist
from .history import DomainHistory, HistoryStore
from .ingest import DnsAnswerRecord
from .scoring import Verdict, score_domain, score_key

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_DETECTED = 2


def dump_line(obj: dict) -> str:
    return orjson.dumps(obj, option=orjson.OPT_SORT_KEYS).decode()


_VARYING = ("cycle", "cycle_end", "n_records")  # in sorted-key order
_MARKS = {k: f"\x00{i}" for i, k in enumerate(_VARYING)}
_ENCODED_MARKS = [dump_line(_MARKS[k]) for k in _VARYING]


class _LineTemplate:
    """A report row split around the fields that change between rescorings.

    ``render`` gives exactly ``dump_line`` of the full row, but the costly
    encoding of the metric breakdown happens once per distinct score.
    """

    def __init__(self, obj: dict):
        text = dump_line({**obj, **_MARKS})
        self.parts = []
        for mark in _ENCODED_MARKS:
            head, text = text.split(mark, 1)
            self.parts.append(head)
        self.parts.append(text)
        self.obj = obj

    def render(self, cycle: int, cycle_end: int, n_records: int) -> str:
        p = self.parts
        return f"{p[0]}{cycle}{p[1]}{cycle_end}{p[2]}{n_records}{p[3]}\n"


class Pipeline:
    """Stateful detector fed with time-ordered records.

    Cycle boundaries come from record timestamps (``ts // cycle_seconds``),
    so replaying the same input gives the same reports. At each boundary the
    domains whose history changed are rescored and written to ``report``.
    """

    def __init__(self, config: Config, db: IpDatabase, store: HistoryStore | None = None, report: TextIO | None = None):
        self.config = config
        self.db = db
        self.store = store
        self.report = report
        self.histories: dict[str, DomainHistory] = {}
        self.last_scores: dict[str, dict] = {}
        self.cycle: int | None = None
        self.filters = config.filters
        if store is not None:
            self.histories, state = store.load()
            self.cycle = state.get("cycle")
            self.last_scores = state.get("last_scores", {})
            self.filters = replace(
                self.filters, auto_cdn_whitelist=self.filters.auto_cdn_whitelist | set(state.get("auto_cdn_whitelist", []))
            )
        self.dirty: set[str] = set()
        # last score key and rendered row per domain; rescoring is skipped
        # while the key is unchanged
        self._memo: dict[str, tuple[tuple, _LineTemplate]] = {}
        self.counters: Counter = Counter()
        self.emitted = 0

    def feed(self, records: Iterable[DnsAnswerRecord]) -> None:
        dt = self.config.cycle_seconds
        filters = self.filters
        histories = self.histories
        dirty = self.dirty
        params = self.config.history
        n = passed = late = 0
        rejected: Counter = Counter()
        try:
            for record in records:
                n += 1
                idx = record.timestamp // dt
                if self.cycle is None:
                    self.cycle = idx
                elif idx > self.cycle:
                    self._close_cycle(idx)
                    filters = self.filters
                verdict = apply_filters(record, filters)
                if not verdict.passed:
                    rejected[verdict.reason.value] += 1
                    continue
                passed += 1
                h = histories.get(record.qname)
                if h is None:
                    h = histories[record.qname] = DomainHistory(record.qname, params)
                if h.add(record):
                    dirty.add(record.qname)
                else:
                    late += 1
        finally:
            c = self.counters
            c["records"] += n
            c["passed"] += passed
            c["late_dropped"] += late
            for reason, k in rejected.items():
                c["filtered:" + reason] += k

    def _score_dirty(self) -> int:
        """Score and report every changed domain; return how many."""
        end = (self.cycle + 1) * self.config.cycle_seconds
        report = self.report
        memo = self._memo
        lines: list[str] = []
        for qname in sorted(self.dirty):
            h = self.histories[qname]
            key = score_key(h)
            entry = memo.get(qname)
            if entry is None or entry[0] != key:
                result = score_domain(h, self.db, self.config.scoring, self.config.metrics)
                entry = memo[qname] = (key, _LineTemplate(result.to_json()))
            tpl = entry[1]
            obj = tpl.obj  # owned by the template, so updating in place is safe
            obj["n_records"] = h.n_records
            self.last_scores[qname] = obj
            if report is not None:
                lines.append(tpl.render(self.cycle, end, h.n_records))
        if lines:
            report.write("".join(lines))
        emitted = len(self.dirty)
        self.dirty.clear()
        self.emitted += emitted
        return emitted

    def _close_cycle(self, next_cycle: int) -> None:
        self._score_dirty()
        # long-lived history objects would otherwise be rescanned by every
        # full collection; the hot path creates no reference cycles
        gc.freeze()
        k = self.config.whitelist_refresh_cycles
        if next_cycle // k > self.cycle // k:
            self.refresh_whitelist()
        self.cycle = next_cycle

    def refresh_whitelist(self) -> None:
        summaries = []
        for qname, score in self.last_scores.items():
            h = self.histories.get(qname)
            if h is None:
                continue
            summaries.append(DomainSummary(qname, score.get("a_calibrated"), h.n_records, h.distinct_days))
        before = len(self.filters.auto_cdn_whitelist)
        self.filters = refresh_auto_whitelist(summaries, self.filters)
        added = len(self.filters.auto_cdn_whitelist) - before
        if added:
            logger.info("auto CDN whitelist grew by %d", added)

    def flush(self) -> None:
        """Score whatever changed in the still-open cycle."""
        if self.dirty:
            self._score_dirty()

    def state(self) -> dict:
        return {
            "cycle": self.cycle,
            "last_scores": self.last_scores,
            "auto_cdn_whitelist": sorted(self.filters.auto_cdn_whitelist),
        }

    def save(self) -> None:
        if self.store is not None:
            self.store.save(self.histories, self.state())

    def fast_flux(self) -> list[dict]:
        return [s for _, s in sorted(self.last_scores.items()) if s["verdict"] == Verdict.FAST_FLUX.value]

    def summary(self) -> dict:
        verdicts = Counter(s["verdict"] for s in self.last_scores.values())
        return {
            "records": self.counters["records"],
            "passed": self.counters["passed"],
            "late_dropped": self.counters["late_dropped"],
            "filtered": {k.split(":", 1)[1]: v for k, v in sorted(self.counters.items()) if k.startswith("filtered:")},
            "domains_tracked": len(self.histories),
            "results_emitted": self.emitted,
            "verdicts": dict(sorted(verdicts.items())),
            "auto_cdn_whitelist": sorted(self.filters.auto_cdn_whitelist),
            "fast_flux": self.fast_flux(),
        }


def merge_streams(streams: list[Iterable[DnsAnswerRecord]]) -> Iterator[DnsAnswerRecord]:
    if len(streams) == 1:
        return iter(streams[0])
    return heapq.merge(*streams, key=lambda r: r.timestamp)


def run_pipeline(
    streams: list[Iterable[DnsAnswerRecord]],
    config: Config,
    db: IpDatabase,
    store: HistoryStore | None = None,
    report: TextIO | None = None,
) -> tuple[int, dict]:
    """Process all input streams, persist state, and return (exit status, summary)."""
    pipe = Pipeline(config, db, store, report)
    pipe.feed(merge_streams(streams))
    pipe.flush()
    pipe.save()
    summary = pipe.summary()
    return (EXIT_DETECTED if summary["fast_flux"] else EXIT_OK), summary
