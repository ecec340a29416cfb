"""Per-domain rolling observation history split into chunks, plus its on-disk store."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
import zlib
from bisect import insort
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

import orjson

from .ingest import DnsAnswerRecord

logger = logging.getLogger(__name__)

DAY = 86400


class HistoryContractError(ValueError):
    pass


class StoreIntegrityError(RuntimeError):
    pass


@dataclass(frozen=True)
class HistoryParams:
    window_days: int = 30
    chunk_min_queries: int = 10
    chunk_min_span: int = 3600
    reorder_tolerance: int = 300

    @property
    def window_seconds(self) -> int:
        return self.window_days * DAY


@dataclass
class Chunk:
    records: list[DnsAnswerRecord] = field(default_factory=list)
    closed: bool = False

    @property
    def start_ts(self) -> int | None:
        return self.records[0].timestamp if self.records else None

    @property
    def end_ts(self) -> int | None:
        return self.records[-1].timestamp if self.records else None

    def unique_ips(self) -> frozenset[str]:
        cached = self.__dict__.get("_ips")
        if cached is not None:
            return cached
        ips = frozenset(ip for r in self.records for ip in r.ips)
        if self.closed:
            self.__dict__["_ips"] = ips
        return ips

    def max_answer_length(self) -> int:
        cached = self.__dict__.get("_max_al")
        if cached is not None:
            return cached
        m = max(len(r.ips) for r in self.records)
        if self.closed:
            self.__dict__["_max_al"] = m
        return m

    def network_counts(self, db) -> tuple[int, int]:
        """Distinct enrichment networks and ASs among this chunk's IPs."""
        cached = self.__dict__.get("_net_counts")
        if cached is not None and cached[0] is db:
            return cached[1]
        metas = [m for m in map(db.lookup, self.unique_ips()) if m is not None]
        counts = len({m.network for m in metas}), len({m.asn for m in metas if m.asn is not None})
        if self.closed:
            self.__dict__["_net_counts"] = (db, counts)
        return counts


@dataclass(frozen=True)
class ChunkAverages:
    n_ip: float
    n_net: float | None
    n_as: float | None
    m_al: float


@dataclass
class DomainHistory:
    """Observations of one qname over the trailing window.

    Records go into the open chunk, which closes as soon as it holds
    ``chunk_min_queries`` records spanning ``chunk_min_span`` seconds.
    Cumulative IP and answer-length counters track every stored record.
    """

    qname: str
    params: HistoryParams = field(default_factory=HistoryParams, compare=False)
    closed_chunks: list[Chunk] = field(default_factory=list)
    open_chunk: Chunk = field(default_factory=Chunk)
    newest_ts: int | None = None
    dropped_late: int = 0
    ip_counts: Counter = field(default_factory=Counter, compare=False, repr=False)
    al_counts: Counter = field(default_factory=Counter, compare=False, repr=False)
    day_counts: Counter = field(default_factory=Counter, compare=False, repr=False)
    # bumped when the set of distinct IPs / the list of closed chunks changes
    n_records: int = field(default=0, compare=False, repr=False)
    max_al: int = field(default=0, compare=False, repr=False)
    ip_version: int = field(default=0, compare=False, repr=False)
    chunk_version: int = field(default=0, compare=False, repr=False)
    cache: dict = field(default_factory=dict, compare=False, repr=False)
    # distinct-IP arrivals (+1) and departures (-1) since version ip_log_start,
    # letting consumers update incrementally; trimmed once a rebuild is cheaper
    ip_log: list = field(default_factory=list, compare=False, repr=False)
    ip_log_start: int = field(default=0, compare=False, repr=False)

    def __post_init__(self):
        if not self.ip_counts:
            for chunk in self.chunks():
                for r in chunk.records:
                    self._count_in(r)

    def chunks(self) -> list[Chunk]:
        return [*self.closed_chunks, self.open_chunk]

    @property
    def distinct_days(self) -> int:
        return len(self.day_counts)

    def records(self) -> list[DnsAnswerRecord]:
        return [r for c in self.chunks() for r in c.records]

    def unique_ips(self) -> set[str]:
        return set(self.ip_counts)

    def max_answer_length(self) -> int:
        return self.max_al

    def _log_ip(self, ip: str, sign: int) -> None:
        self.ip_version += 1
        log = self.ip_log
        if len(log) > 1024 and len(log) > 2 * len(self.ip_counts):
            log.clear()
            self.ip_log_start = self.ip_version - 1
        log.append((ip, sign))

    def ip_changes_since(self, version: int) -> list | None:
        """IP set changes after ``version``, or None if no longer logged."""
        if version < self.ip_log_start:
            return None
        return self.ip_log[version - self.ip_log_start:]

    def _count_in(self, record: DnsAnswerRecord) -> None:
        self.n_records += 1
        ip_counts = self.ip_counts
        for ip in record.ips:
            n = ip_counts.get(ip)
            if n is None:
                ip_counts[ip] = 1
                self._log_ip(ip, 1)
            else:
                ip_counts[ip] = n + 1
        al, day = len(record.ips), record.timestamp // DAY
        self.al_counts[al] = self.al_counts.get(al, 0) + 1
        if al > self.max_al:
            self.max_al = al
        self.day_counts[day] = self.day_counts.get(day, 0) + 1

    def _count_out(self, record: DnsAnswerRecord) -> None:
        self.n_records -= 1
        ip_counts = self.ip_counts
        for ip in record.ips:
            n = ip_counts[ip] - 1
            if n:
                ip_counts[ip] = n
            else:
                del ip_counts[ip]
                self._log_ip(ip, -1)
        for counter, key in ((self.al_counts, len(record.ips)), (self.day_counts, record.timestamp // DAY)):
            n = counter[key] - 1
            if n:
                counter[key] = n
            else:
                del counter[key]
        if self.max_al not in self.al_counts:
            self.max_al = max(self.al_counts, default=0)

    def add(self, record: DnsAnswerRecord) -> bool:
        """Insert ``record``; return False if it was dropped as too late."""
        if record.qname != self.qname:
            raise HistoryContractError(f"record for {record.qname!r} added to history of {self.qname!r}")
        p = self.params
        ts = record.timestamp
        newest = self.newest_ts
        records = self.open_chunk.records
        if newest is not None and ts < newest:
            boundary = self.closed_chunks[-1].end_ts if self.closed_chunks else None
            if newest - ts > p.reorder_tolerance or (boundary is not None and ts < boundary):
                self.dropped_late += 1
                return False
            insort(records, record, key=lambda r: r.timestamp)
        else:
            records.append(record)
            self.newest_ts = newest = ts

        self._count_in(record)

        if len(records) >= p.chunk_min_queries and records[-1].timestamp - records[0].timestamp >= p.chunk_min_span:
            self.open_chunk.closed = True
            self.closed_chunks.append(self.open_chunk)
            self.open_chunk = Chunk()
            self.chunk_version += 1
        cutoff = newest - p.window_days * DAY
        # cheap test before the eviction scan: the first thing that could go
        head = self.closed_chunks[0].records[-1] if self.closed_chunks else self.open_chunk.records[0] if self.open_chunk.records else None
        if head is not None and head.timestamp < cutoff:
            self._evict(cutoff)
        return True

    def _evict(self, cutoff: int) -> None:
        # whole closed chunks only; a chunk goes once its newest record is stale
        n = 0
        while n < len(self.closed_chunks) and self.closed_chunks[n].end_ts < cutoff:
            for r in self.closed_chunks[n].records:
                self._count_out(r)
            n += 1
        if n:
            del self.closed_chunks[:n]
            self.chunk_version += 1
        if not self.closed_chunks:
            records = self.open_chunk.records
            k = 0
            while k < len(records) and records[k].timestamp < cutoff:
                self._count_out(records[k])
                k += 1
            if k:
                del records[:k]


def update_history(history: DomainHistory, record: DnsAnswerRecord) -> DomainHistory:
    history.add(record)
    return history


def chunk_averages(history: DomainHistory, db=None) -> ChunkAverages | None:
    """Per-chunk unique counts and maximum answer length, averaged over closed chunks.

    Returns None when fewer than two chunks have closed. Network and AS
    averages need ``db`` and count database hits only.
    """
    chunks = history.closed_chunks
    if len(chunks) < 2:
        return None
    n = len(chunks)
    n_ip = sum(len(c.unique_ips()) for c in chunks) / n
    m_al = sum(c.max_answer_length() for c in chunks) / n
    n_net = n_as = None
    if db is not None:
        counts = [c.network_counts(db) for c in chunks]
        n_net = sum(c[0] for c in counts) / n
        n_as = sum(c[1] for c in counts) / n
    return ChunkAverages(n_ip, n_net, n_as, m_al)


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------

FORMAT_VERSION = 1
_MAGIC = b"FFHS"
_HEADER = struct.Struct("!4sH32s")
MANIFEST = "manifest.json"
STATE_FILE = "state.bin"


def encode_blob(payload: Any) -> bytes:
    body = zlib.compress(orjson.dumps(payload, option=orjson.OPT_SORT_KEYS), 1)
    return _HEADER.pack(_MAGIC, FORMAT_VERSION, hashlib.sha256(body).digest()) + body


def decode_blob(blob: bytes, name: str = "blob") -> Any:
    if len(blob) < _HEADER.size:
        raise StoreIntegrityError(f"{name}: truncated header")
    magic, version, digest = _HEADER.unpack_from(blob)
    if magic != _MAGIC:
        raise StoreIntegrityError(f"{name}: bad magic")
    if version != FORMAT_VERSION:
        raise StoreIntegrityError(f"{name}: unsupported format version {version}")
    body = blob[_HEADER.size:]
    if hashlib.sha256(body).digest() != digest:
        raise StoreIntegrityError(f"{name}: checksum mismatch")
    try:
        return orjson.loads(zlib.decompress(body))
    except (zlib.error, orjson.JSONDecodeError) as exc:
        raise StoreIntegrityError(f"{name}: undecodable payload ({exc})") from None


def shard_key(qname: str) -> str:
    return hashlib.sha1(qname.encode()).hexdigest()[:2]


def _chunk_to_json(chunk: Chunk) -> list:
    # column-wise: [timestamps, ttls, answers]
    if not chunk.records:
        return [[], [], []]
    ts, _, ttl, ips = zip(*chunk.records)
    return [ts, ttl, ips]


def _chunk_from_json(qname: str, columns: list, closed: bool) -> Chunk:
    ts, ttl, ips = columns
    if not len(ts) == len(ttl) == len(ips):
        raise StoreIntegrityError(f"{qname}: ragged chunk columns")
    return Chunk([DnsAnswerRecord(t, qname, l, tuple(a)) for t, l, a in zip(ts, ttl, ips)], closed=closed)


def history_to_json(h: DomainHistory) -> dict:
    return {
        "qname": h.qname,
        "newest": h.newest_ts,
        "dropped": h.dropped_late,
        "closed": [_chunk_to_json(c) for c in h.closed_chunks],
        "open": _chunk_to_json(h.open_chunk),
    }


def history_from_json(obj: dict, params: HistoryParams) -> DomainHistory:
    q = obj["qname"]
    return DomainHistory(
        qname=q,
        params=params,
        closed_chunks=[_chunk_from_json(q, rows, True) for rows in obj["closed"]],
        open_chunk=_chunk_from_json(q, obj["open"], False),
        newest_ts=obj["newest"],
        dropped_late=obj["dropped"],
    )


class HistoryStore:
    """Directory of checksummed shard files plus a manifest.

    ``state`` is an opaque JSON-able mapping saved next to the shards; the
    pipeline keeps its auto-whitelist and cycle bookkeeping there.
    """

    def __init__(self, path: str | os.PathLike, params: HistoryParams = HistoryParams()):
        self.path = Path(path)
        self.params = params

    def save(self, histories: Mapping[str, DomainHistory], state: Mapping[str, Any] | None = None) -> None:
        self.path.mkdir(parents=True, exist_ok=True)
        shards: dict[str, list] = {}
        for qname in sorted(histories):
            shards.setdefault(shard_key(qname), []).append(history_to_json(histories[qname]))
        for key, items in shards.items():
            _atomic_write(self.path / f"{key}.bin", encode_blob(items))
        _atomic_write(self.path / STATE_FILE, encode_blob(dict(state or {})))
        for stale in self.path.glob("*.bin"):
            if stale.name != STATE_FILE and stale.stem not in shards:
                stale.unlink()
        manifest = {
            "format": "fastflux-history",
            "version": FORMAT_VERSION,
            "window_days": self.params.window_days,
            "shards": sorted(shards),
        }
        _atomic_write(self.path / MANIFEST, json.dumps(manifest, indent=1).encode())

    def load(self) -> tuple[dict[str, DomainHistory], dict[str, Any]]:
        manifest_path = self.path / MANIFEST
        if not manifest_path.exists():
            return {}, {}
        try:
            manifest = json.loads(manifest_path.read_text())
        except ValueError as exc:
            raise StoreIntegrityError(f"unreadable manifest ({exc})") from None
        if manifest.get("version") != FORMAT_VERSION:
            raise StoreIntegrityError(f"unsupported store version {manifest.get('version')}")
        if manifest.get("window_days") != self.params.window_days:
            raise StoreIntegrityError(
                f"store window_days={manifest.get('window_days')} does not match configured {self.params.window_days}"
            )
        histories: dict[str, DomainHistory] = {}
        for key in manifest.get("shards", []):
            shard = self.path / f"{key}.bin"
            if not shard.exists():
                raise StoreIntegrityError(f"missing shard {shard.name}")
            for obj in decode_blob(shard.read_bytes(), shard.name):
                h = history_from_json(obj, self.params)
                histories[h.qname] = h
        state_path = self.path / STATE_FILE
        state = decode_blob(state_path.read_bytes(), STATE_FILE) if state_path.exists() else {}
        return histories, state


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def persist(path: str | os.PathLike, histories: Mapping[str, DomainHistory], state=None, params=HistoryParams()) -> None:
    HistoryStore(path, params).save(histories, state)


def restore(path: str | os.PathLike, params=HistoryParams()) -> tuple[dict[str, DomainHistory], dict[str, Any]]:
    return HistoryStore(path, params).load()


def build_histories(records: Iterable[DnsAnswerRecord], params: HistoryParams = HistoryParams()) -> dict[str, DomainHistory]:
    out: dict[str, DomainHistory] = {}
    for r in records:
        h = out.get(r.qname)
        if h is None:
            h = out[r.qname] = DomainHistory(r.qname, params)
        h.add(r)
    return out
