"""Offline IP metadata (network, AS, country) backed by a CIDR range table."""

from __future__ import annotations

import csv
import ipaddress
import os
import time
from bisect import bisect_right
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

CSV_HEADER = ("cidr", "asn", "country")


class EnrichmentError(ValueError):
    pass


@dataclass(frozen=True)
class IpMeta:
    network: str
    asn: int | None
    country: str | None


@lru_cache(maxsize=1 << 20)
def ip_to_index(ip: str) -> int:
    """Position of a dotted quad in the 32-bit address space."""
    a, b, c, d = ip.split(".")
    return 256**3 * int(a) + 256**2 * int(b) + 256 * int(c) + int(d)


def index_to_ip(index: int) -> str:
    return "%d.%d.%d.%d" % (index >> 24, (index >> 16) & 255, (index >> 8) & 255, index & 255)


class IpDatabase:
    """Immutable, sorted set of disjoint CIDR ranges searchable by IP index."""

    def __init__(self, entries: Iterable[tuple[str, IpMeta]] = (), built_at: float | None = None):
        rows = []
        for cidr, meta in entries:
            net = ipaddress.IPv4Network(cidr)
            rows.append((int(net.network_address), int(net.broadcast_address), meta))
        rows.sort(key=lambda r: r[0])
        for prev, cur in zip(rows, rows[1:]):
            if cur[0] <= prev[1]:
                raise EnrichmentError(f"overlapping ranges {prev[2].network} and {cur[2].network}")
        self._starts = [r[0] for r in rows]
        self._ends = [r[1] for r in rows]
        self._metas = [r[2] for r in rows]
        self.built_at = built_at if built_at is not None else time.time()
        self._cache: dict[str, IpMeta | None] = {}

    def __len__(self) -> int:
        return len(self._starts)

    @property
    def ranges(self) -> Sequence[tuple[int, int, IpMeta]]:
        return list(zip(self._starts, self._ends, self._metas))

    def lookup(self, ip: str) -> IpMeta | None:
        try:
            return self._cache[ip]
        except KeyError:
            pass
        x = ip_to_index(ip)
        i = bisect_right(self._starts, x) - 1
        meta = self._metas[i] if i >= 0 and x <= self._ends[i] else None
        if len(self._cache) < 1 << 20:
            self._cache[ip] = meta
        return meta


def lookup_ip(db: IpDatabase, ip: str) -> IpMeta | None:
    return db.lookup(ip)


def load_ip_database(path: str | os.PathLike) -> IpDatabase:
    """Load an enrichment CSV (``cidr,asn,country``).

    Rows must be sorted by network address and disjoint.
    """
    entries: list[tuple[str, IpMeta]] = []
    last_end = -1
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for rowno, row in enumerate(reader, start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if rowno == 1 and tuple(c.strip().lower() for c in row) == CSV_HEADER:
                continue
            if len(row) != 3:
                raise EnrichmentError(f"row {rowno}: expected 3 fields, got {len(row)}")
            cidr, asn_text, country = (c.strip() for c in row)
            try:
                net = ipaddress.IPv4Network(cidr)
            except ValueError as exc:
                raise EnrichmentError(f"row {rowno}: bad cidr {cidr!r} ({exc})") from None
            asn = None
            if asn_text:
                if not asn_text.isdigit() or int(asn_text) <= 0:
                    raise EnrichmentError(f"row {rowno}: bad asn {asn_text!r}")
                asn = int(asn_text)
            if country and (len(country) != 2 or not country.isalpha()):
                raise EnrichmentError(f"row {rowno}: bad country {country!r}")
            start = int(net.network_address)
            if start <= last_end:
                raise EnrichmentError(f"row {rowno}: range {cidr} overlaps or is out of order")
            last_end = int(net.broadcast_address)
            entries.append((str(net), IpMeta(str(net), asn, country.upper() or None)))
    return IpDatabase(entries, built_at=os.path.getmtime(path))


def write_ip_database(rows: Iterable[tuple[str, int | None, str | None]], path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for cidr, asn, country in rows:
            writer.writerow([cidr, "" if asn is None else asn, country or ""])
