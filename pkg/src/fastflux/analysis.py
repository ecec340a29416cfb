"""Offline study of domain-to-IP pools: overlap, clusters, histograms."""

from __future__ import annotations

import csv
import json
import os
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, TextIO

from .enrichment import IpDatabase
from .ingest import is_ipv4, normalize_qname

UNKNOWN_COUNTRY = "??"


class PoolFormatError(ValueError):
    pass


@dataclass(frozen=True)
class DomainIpPool:
    domain: str
    ips: frozenset[str]

    def __post_init__(self):
        if not self.ips:
            raise ValueError(f"empty IP pool for {self.domain}")


@dataclass(frozen=True)
class OverlapMatrix:
    domains: list[str]
    values: list[list[float]]

    def __getitem__(self, pair: tuple[str, str]) -> float:
        i, j = (self.domains.index(d) for d in pair)
        return self.values[i][j]


def read_pools(path: str | os.PathLike) -> dict[str, set[str]]:
    """Read a ``domain,ip`` CSV into domain -> IP set (header optional)."""
    pools: dict[str, set[str]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for rowno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if rowno == 1 and [c.strip().lower() for c in row] == ["domain", "ip"]:
                continue
            if len(row) != 2:
                raise PoolFormatError(f"row {rowno}: expected 'domain,ip'")
            domain, ip = row[0].strip(), row[1].strip()
            if not is_ipv4(ip):
                raise PoolFormatError(f"row {rowno}: bad IP {ip!r}")
            try:
                domain = normalize_qname(domain)
            except ValueError as exc:
                raise PoolFormatError(f"row {rowno}: {exc}") from None
            pools.setdefault(domain, set()).add(ip)
    return pools


def overlap(xi: set[str] | frozenset[str], xj: set[str] | frozenset[str]) -> float:
    """Shared fraction of two IP pools (intersection over union)."""
    if not xi or not xj:
        raise ValueError("overlap needs two non-empty pools")
    return len(xi & xj) / len(xi | xj)


def top_domains(pools: Mapping[str, set[str]], top: int | None = None) -> list[str]:
    """Domains by decreasing pool size, ties by name."""
    ordered = sorted(pools, key=lambda d: (-len(pools[d]), d))
    return ordered if top is None else ordered[:top]


def overlap_matrix(pools: Mapping[str, set[str]], top: int | None = None) -> OverlapMatrix:
    domains = top_domains(pools, top)
    n = len(domains)
    values = [[0.0] * n for _ in range(n)]
    for i in range(n):
        values[i][i] = 1.0
        for j in range(i + 1, n):
            values[i][j] = values[j][i] = overlap(pools[domains[i]], pools[domains[j]])
    return OverlapMatrix(domains, values)


def cluster_domains(pools: Mapping[str, set[str]]) -> list[list[str]]:
    """Connected components of the bipartite domain-IP graph.

    Each cluster is sorted; clusters are ordered by their first domain.
    """
    parent = {d: d for d in pools}

    def find(d: str) -> str:
        while parent[d] != d:
            parent[d] = parent[parent[d]]
            d = parent[d]
        return d

    owner: dict[str, str] = {}
    for d in sorted(pools):
        for ip in pools[d]:
            other = owner.setdefault(ip, d)
            if other != d:
                a, b = find(d), find(other)
                if a != b:
                    parent[max(a, b)] = min(a, b)
    groups: dict[str, list[str]] = {}
    for d in pools:
        groups.setdefault(find(d), []).append(d)
    return sorted((sorted(g) for g in groups.values()), key=lambda g: g[0])


def _union(pools: Mapping[str, set[str]] | Iterable[set[str]]) -> set[str]:
    sets = pools.values() if isinstance(pools, Mapping) else pools
    return set().union(*sets)


def country_histogram(pools, db: IpDatabase, top: int | None = None) -> dict[str, int]:
    """Unique IPs per country over all pools, most frequent first."""
    counts: Counter = Counter()
    for ip in _union(pools):
        meta = db.lookup(ip)
        counts[(meta.country if meta and meta.country else UNKNOWN_COUNTRY)] += 1
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return dict(ordered if top is None else ordered[:top])


def first_byte_histogram(pool: Iterable[str], bin_size: int = 2) -> list[tuple[int, int, int]]:
    """Counts of unique IPs by first octet as ``(low, high, count)`` bins."""
    if bin_size < 1 or 256 % bin_size:
        raise ValueError("bin_size must divide 256")
    ips = set(pool)
    if not ips:
        raise ValueError("empty pool")
    bins = [0] * (256 // bin_size)
    for ip in ips:
        bins[int(ip.split(".", 1)[0]) // bin_size] += 1
    return [(i * bin_size, (i + 1) * bin_size - 1, c) for i, c in enumerate(bins)]


def write_overlap_csv(m: OverlapMatrix, out: TextIO) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["domain", *m.domains])
    for d, row in zip(m.domains, m.values):
        w.writerow([d, *(f"{v:.6g}" for v in row)])


def write_clusters_jsonl(clusters: list[list[str]], pools: Mapping[str, set[str]], out: TextIO) -> None:
    for i, members in enumerate(clusters):
        ips = _union(pools[d] for d in members)
        out.write(json.dumps({"cluster": i, "domains": members, "n_domains": len(members), "n_ips": len(ips)}) + "\n")


def write_histogram_csv(items: Iterable[tuple[str, int]], out: TextIO) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["key", "count"])
    for key, count in items:
        w.writerow([key, count])
