"""Static and history-based fast-flux indicators for one domain."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

from sortedcontainers import SortedList

from .enrichment import IpDatabase, ip_to_index
from .history import DomainHistory, chunk_averages

ADDRESS_SPACE = 2**32


@dataclass(frozen=True)
class FasParams:
    """Scales and thresholds of the two AS-fraction rescalings."""

    s1: float = 2.5
    n0_1: int = 3
    s2: float = 40.0
    n0_2: int = 5

    def __post_init__(self):
        if self.s1 <= 0 or self.s2 <= 0:
            raise ValueError("AS-fraction scales must be positive")
        if self.n0_1 < 1 or self.n0_2 < 1:
            raise ValueError("AS-fraction thresholds must be positive integers")


@dataclass(frozen=True)
class MetricParams:
    fas: FasParams = FasParams()
    min_ips_for_fas: int = 4
    min_ips_for_dip: int = 4


@dataclass(frozen=True)
class StaticMetrics:
    n_ip: int
    n_net: int
    n_as: int
    m_al: int
    f_as_raw: float | None
    f_as: float | None
    d_ip: float
    d_ip_available: bool
    db_misses: int = 0

    @property
    def available(self) -> dict[str, bool]:
        return {
            "n_ip": self.n_ip >= 1,
            "n_net": self.n_net >= 1,
            "n_as": self.n_as >= 1,
            # a lone IP per answer says nothing about answer length
            "m_al": self.m_al > 1,
            "f_as": self.f_as is not None,
            "d_ip": self.d_ip_available,
        }


@dataclass(frozen=True)
class HistoryMetrics:
    c_ip: float | None = None
    c_net: float | None = None
    c_as: float | None = None
    c_al: float | None = None


def _step(t: float) -> float:
    return 1.0 if t > 0 else 0.0


def _as_rescaling(n_as: int, n0: int, s: float) -> float:
    t = n_as - n0
    return _step(t) * (1.0 - math.exp(-((t / s) ** 2)))


def as_fraction(n_as: int, n_ip: int, params: FasParams = FasParams(), min_ips: int = 4) -> tuple[float, float] | None:
    """AS fraction ``(n_as - 1) / n_ip`` and its CDN/FFSN-aware rescaled value.

    Returns ``(raw, rescaled)`` or None when there are too few IPs or no AS.
    The first rescaling damps the fraction at CDN-like AS counts; the second
    pushes it towards 1 at FFSN-like counts by shrinking ``1 - f``.
    """
    if n_ip < min_ips or n_as < 1:
        return None
    raw = (n_as - 1) / n_ip
    f = _as_rescaling(n_as, params.n0_1, params.s1) * raw
    x = (1.0 - _as_rescaling(n_as, params.n0_2, params.s2)) * (1.0 - f)
    return raw, min(1.0, max(0.0, 1.0 - x))


def median(values: list[float]) -> float:
    """Median of a sorted list; mean of the central pair for even length."""
    n = len(values)
    mid = n // 2
    if n % 2:
        return values[mid]
    return (values[mid - 1] + values[mid]) / 2


def ip_dispersion(ips: Iterable[str]) -> float:
    """Median gap between sorted address indices over the uniform-spread gap.

    ``ips`` must be unique. Fewer than two addresses give 0.
    """
    xs = sorted(ip_to_index(ip) for ip in ips)
    n = len(xs)
    if n < 2:
        return 0.0
    gaps = sorted(b - a for a, b in zip(xs, xs[1:]))
    uniform_gap = ADDRESS_SPACE / (n - 1)
    return min(1.0, median(gaps) / uniform_gap)


class IpSetIndex:
    """Incrementally maintained aggregates over a history's distinct IPs.

    Keeps the sorted address indices with the multiset of neighbour gaps
    (for dispersion) and per-network / per-AS counts for one database.
    """

    def __init__(self, db: IpDatabase):
        self.db = db
        self.points = SortedList()
        self.gaps = SortedList()
        self.nets: dict = {}
        self.ases: dict = {}
        self.misses = 0
        self.version = -1

    def sync(self, history: DomainHistory) -> None:
        if self.version == history.ip_version:
            return
        changes = history.ip_changes_since(self.version) if self.version >= 0 else None
        if changes is None:
            self._rebuild(history.ip_counts.keys())
        else:
            for ip, sign in changes:
                if sign > 0:
                    self._add(ip)
                else:
                    self._remove(ip)
        self.version = history.ip_version

    def _rebuild(self, ips) -> None:
        self.__init__(self.db)
        self.points = SortedList(map(ip_to_index, ips))
        pts = self.points
        self.gaps = SortedList(b - a for a, b in zip(pts, pts[1:]))
        for ip in ips:
            self._count(ip, 1)

    def _count(self, ip: str, sign: int) -> None:
        meta = self.db.lookup(ip)
        if meta is None:
            self.misses += sign
            return
        _bump(self.nets, meta.network, sign)
        if meta.asn is not None:
            _bump(self.ases, meta.asn, sign)

    def _add(self, ip: str) -> None:
        x = ip_to_index(ip)
        pts, gaps = self.points, self.gaps
        i = pts.bisect_left(x)
        lo = pts[i - 1] if i > 0 else None
        hi = pts[i] if i < len(pts) else None
        if lo is not None and hi is not None:
            gaps.remove(hi - lo)
        if lo is not None:
            gaps.add(x - lo)
        if hi is not None:
            gaps.add(hi - x)
        pts.add(x)
        self._count(ip, 1)

    def _remove(self, ip: str) -> None:
        x = ip_to_index(ip)
        pts, gaps = self.points, self.gaps
        i = pts.index(x)
        lo = pts[i - 1] if i > 0 else None
        hi = pts[i + 1] if i + 1 < len(pts) else None
        if lo is not None:
            gaps.remove(x - lo)
        if hi is not None:
            gaps.remove(hi - x)
        if lo is not None and hi is not None:
            gaps.add(hi - lo)
        del pts[i]
        self._count(ip, -1)

    def dispersion(self) -> float:
        n = len(self.points)
        if n < 2:
            return 0.0
        return min(1.0, median(self.gaps) / (ADDRESS_SPACE / (n - 1)))

    def summary(self) -> tuple[int, int, int, int]:
        return len(self.points), len(self.nets), len(self.ases), self.misses


def _bump(counter: dict, key, sign: int) -> None:
    n = counter.get(key, 0) + sign
    if n:
        counter[key] = n
    else:
        del counter[key]


def _ip_index(history: DomainHistory, db: IpDatabase) -> IpSetIndex:
    index = history.cache.get("ip_index")
    if index is None or index.db is not db:
        index = history.cache["ip_index"] = IpSetIndex(db)
    index.sync(history)
    return index


def compute_static_metrics(history: DomainHistory, db: IpDatabase, params: MetricParams = MetricParams()) -> StaticMetrics:
    index = _ip_index(history, db)
    n_ip, n_net, n_as, misses = index.summary()
    fas = as_fraction(n_as, n_ip, params.fas, params.min_ips_for_fas)
    return StaticMetrics(
        n_ip=n_ip,
        n_net=n_net,
        n_as=n_as,
        m_al=history.max_answer_length(),
        f_as_raw=fas[0] if fas else None,
        f_as=fas[1] if fas else None,
        d_ip=index.dispersion(),
        d_ip_available=n_ip >= params.min_ips_for_dip,
        db_misses=misses,
    )


def _churn(total: float, per_chunk: float | None) -> float | None:
    if per_chunk is None or per_chunk <= 0:
        return None
    return max(0.0, total / per_chunk - 1.0)


def compute_history_metrics(history: DomainHistory, db: IpDatabase) -> HistoryMetrics:
    """Churn ratios of the closed chunks against their own union.

    All four are None until two chunks have closed.
    """
    cached = history.cache.get("history")
    if cached is not None and cached[0] == history.chunk_version and cached[1] is db:
        return cached[2]
    result = _history_metrics(history, db)
    history.cache["history"] = (history.chunk_version, db, result)
    return result


def _history_metrics(history: DomainHistory, db: IpDatabase) -> HistoryMetrics:
    avg = chunk_averages(history, db)
    if avg is None:
        return HistoryMetrics()
    chunks = history.closed_chunks
    ips = set().union(*(c.unique_ips() for c in chunks))
    metas = [m for m in map(db.lookup, ips) if m is not None]
    n_net = len({m.network for m in metas})
    n_as = len({m.asn for m in metas if m.asn is not None})
    m_al = max(c.max_answer_length() for c in chunks)
    return HistoryMetrics(
        c_ip=_churn(len(ips), avg.n_ip),
        c_net=_churn(n_net, avg.n_net),
        c_as=_churn(n_as, avg.n_as),
        c_al=_churn(m_al, avg.m_al),
    )
