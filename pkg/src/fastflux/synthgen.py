"""Seeded generator of labeled CDN and fast-flux answer streams.

Each scenario comes with the enrichment rows describing its address
blocks, so a generated corpus can be scored without external data.
"""

from __future__ import annotations

import ipaddress
import random
import string
from dataclasses import dataclass, field, replace
from typing import Iterable

from .ingest import DnsAnswerRecord

HOUR = 3600
DEFAULT_START = 1520553600  # 2018-03-09T00:00:00Z

FFSN_COUNTRIES = ("RO", "BG", "UA", "RU", "MD", "PL", "HU", "KZ", "TR", "IN")
CDN_COUNTRIES = ("US", "DE", "NL", "IE", "GB", "FR")
_RESERVED_FIRST_OCTETS = {0, 10, 100, 127, 169, 172, 192, 198, 203}


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class AsBlock:
    asn: int
    country: str
    cidr: str

    @property
    def first(self) -> int:
        return int(ipaddress.IPv4Network(self.cidr).network_address)

    @property
    def size(self) -> int:
        return ipaddress.IPv4Network(self.cidr).num_addresses


@dataclass(frozen=True)
class ScenarioParams:
    label: str
    n_ips_pool: int
    n_as: int
    churn_rate: float
    answers_per_query: tuple[int, int]
    ttl: tuple[int, int]
    query_rate: float
    duration: float
    seed: int
    qname: str | None = None
    as_layout: tuple[AsBlock, ...] | None = None
    start_ts: int = DEFAULT_START

    def validate(self) -> None:
        if self.label not in ("cdn", "ffsn"):
            raise ScenarioError(f"unknown label {self.label!r}")
        if self.n_as < 1 or self.n_ips_pool < 1:
            raise ScenarioError("n_as and n_ips_pool must be positive")
        if self.n_as > self.n_ips_pool:
            raise ScenarioError(f"n_as={self.n_as} exceeds n_ips_pool={self.n_ips_pool}")
        if not 0.0 <= self.churn_rate <= 1.0:
            raise ScenarioError("churn_rate must lie in [0, 1]")
        for name in ("answers_per_query", "ttl"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < (1 if name == "answers_per_query" else 0):
                raise ScenarioError(f"bad range {name}={lo, hi}")
        if self.answers_per_query[1] > self.n_ips_pool:
            raise ScenarioError("answers_per_query exceeds the pool size")
        if self.query_rate <= 0 or self.duration <= 0:
            raise ScenarioError("query_rate and duration must be positive")
        if self.as_layout is not None and len({b.asn for b in self.as_layout}) != self.n_as:
            raise ScenarioError("as_layout must cover exactly n_as autonomous systems")


@dataclass
class Scenario:
    params: ScenarioParams
    qname: str
    records: list[DnsAnswerRecord]
    layout: tuple[AsBlock, ...]


class BlockAllocator:
    """Hands out disjoint address blocks and fresh AS numbers."""

    def __init__(self, rng: random.Random, first_asn: int = 1000):
        self._rng = rng
        self._used: set[int] = set()
        self._next_asn = first_asn

    def new_asn(self) -> int:
        asn = self._next_asn
        self._next_asn += 1
        return asn

    def slash16(self) -> int:
        for _ in range(100000):
            a = self._rng.randint(1, 223)
            if a in _RESERVED_FIRST_OCTETS:
                continue
            key = (a << 8) | self._rng.randint(0, 255)
            if key not in self._used:
                self._used.add(key)
                return key << 16
        raise ScenarioError("address space exhausted")


def _layout_for(p: ScenarioParams, rng: random.Random, alloc: BlockAllocator) -> tuple[AsBlock, ...]:
    blocks = []
    for _ in range(p.n_as):
        asn = alloc.new_asn()
        if p.label == "ffsn":
            country = rng.choice(FFSN_COUNTRIES)
            # scattered: each bot AS owns one or two random /16s
            for _ in range(rng.randint(1, 2)):
                net = ipaddress.IPv4Network((alloc.slash16(), 16))
                blocks.append(AsBlock(asn, country, str(net)))
        else:
            country = rng.choice(CDN_COUNTRIES)
            base = alloc.slash16() + (rng.randint(0, 255) << 8)
            blocks.append(AsBlock(asn, country, str(ipaddress.IPv4Network((base, 24)))))
    return tuple(blocks)


def _random_name(rng: random.Random, label: str) -> str:
    if label == "ffsn":
        stem = "".join(rng.choice(string.ascii_lowercase) for _ in range(rng.randint(7, 16)))
        return f"{stem}.{rng.choice(('com', 'net', 'org', 'ws', 'at', 'co', 'info'))}"
    stem = "".join(rng.choice(string.ascii_lowercase) for _ in range(rng.randint(4, 9)))
    return f"{rng.choice(('www', 'cdn', 'static', 'img', 'api'))}.{stem}.{rng.choice(('com', 'net', 'io'))}"


def _ip(index: int) -> str:
    return str(ipaddress.IPv4Address(index))


class _FfsnPool:
    def __init__(self, p: ScenarioParams, layout, rng: random.Random):
        self.rng = rng
        self.by_as: dict[int, list[AsBlock]] = {}
        for b in layout:
            self.by_as.setdefault(b.asn, []).append(b)
        self.asns = sorted(self.by_as)
        self.pool: list[str] = []
        for i in range(p.n_ips_pool):
            self.pool.append(self._fresh(self.asns[i % len(self.asns)]))

    def _fresh(self, asn: int) -> str:
        block = self.rng.choice(self.by_as[asn])
        taken = set(self.pool)
        while True:
            ip = _ip(block.first + self.rng.randrange(1, block.size - 1))
            if ip not in taken:
                return ip

    def churn(self, fraction: float) -> None:
        k = round(fraction * len(self.pool))
        for slot in self.rng.sample(range(len(self.pool)), k):
            self.pool[slot] = self._fresh(self.rng.choice(self.asns))


class _CdnPool:
    def __init__(self, p: ScenarioParams, layout, rng: random.Random):
        self.rng = rng
        self.layout = layout
        per_block = [p.n_ips_pool // len(layout)] * len(layout)
        for i in range(p.n_ips_pool % len(layout)):
            per_block[i] += 1
        self.cursor = [0] * len(layout)
        self.pool: list[str] = []
        for i, (b, n) in enumerate(zip(layout, per_block)):
            start = rng.randrange(1, max(2, b.size - 2 * n - 1))
            self.cursor[i] = start
            for _ in range(n):
                self.pool.append(self._next(i))
        self.offset = 0

    def _next(self, i: int) -> str:
        b = self.layout[i]
        ip = _ip(b.first + self.cursor[i] % b.size)
        self.cursor[i] += 1
        return ip

    def churn(self, fraction: float) -> None:
        k = round(fraction * len(self.pool))
        for slot in self.rng.sample(range(len(self.pool)), k):
            self.pool[slot] = self._next(self.rng.randrange(len(self.layout)))

    def answer(self, k: int) -> list[str]:
        # round-robin rotation: any 10 consecutive answers cover the pool
        # whenever the pool holds at most 10 * k addresses
        n = len(self.pool)
        out = [self.pool[(self.offset + j) % n] for j in range(k)]
        self.offset = (self.offset + k) % n
        return out


def generate_stream(params: ScenarioParams, allocator: BlockAllocator | None = None) -> Scenario:
    """Generate one labeled domain stream; deterministic in ``params.seed``."""
    params.validate()
    rng = random.Random(params.seed)
    if allocator is None:
        allocator = BlockAllocator(random.Random(params.seed ^ 0x5EED))
    layout = params.as_layout or _layout_for(params, rng, allocator)
    qname = params.qname or _random_name(rng, params.label)
    pool = _FfsnPool(params, layout, rng) if params.label == "ffsn" else _CdnPool(params, layout, rng)

    lo, hi = params.answers_per_query
    records: list[DnsAnswerRecord] = []
    hours = int(params.duration) + (params.duration % 1 > 0)
    for h in range(hours):
        if h:
            pool.churn(params.churn_rate)
        span = min(1.0, params.duration - h)
        n_queries = max(1, round(params.query_rate * span))
        cap = rng.randint(lo, hi)
        offsets = sorted(rng.randrange(int(span * HOUR)) for _ in range(n_queries))
        for off in offsets:
            if params.label == "ffsn":
                ips = rng.sample(pool.pool, rng.randint(lo, cap))
            else:
                ips = pool.answer(rng.randint(lo, hi))
            ttl = rng.randint(*params.ttl)
            records.append(DnsAnswerRecord(params.start_ts + h * HOUR + off, qname, ttl, tuple(ips)))
    return Scenario(params, qname, records, tuple(layout))


def ffsn_preset(seed: int, **overrides) -> ScenarioParams:
    rng = random.Random(("ffsn", seed).__repr__())
    n_as = rng.randint(30, 60)
    p = ScenarioParams(
        label="ffsn",
        n_ips_pool=n_as,
        n_as=n_as,
        churn_rate=0.5,
        answers_per_query=(1, 5),
        ttl=(60, 300),
        query_rate=12,
        duration=6,
        seed=seed,
    )
    return replace(p, **overrides)


def cdn_preset(seed: int, **overrides) -> ScenarioParams:
    rng = random.Random(("cdn", seed).__repr__())
    n_as = rng.randint(1, 5)
    k = rng.randint(1, 4)
    pool = rng.randint(max(n_as, k), 10 * k)
    p = ScenarioParams(
        label="cdn",
        n_ips_pool=pool,
        n_as=n_as,
        churn_rate=0.0,
        answers_per_query=(k, k),
        ttl=(20, 300),
        query_rate=20,
        duration=6,
        seed=seed,
    )
    return replace(p, **overrides)


PRESETS = {"ffsn": ffsn_preset, "cdn": cdn_preset}


@dataclass
class Corpus:
    records: list[DnsAnswerRecord]
    layout: list[AsBlock]
    labels: dict[str, str] = field(default_factory=dict)

    def enrichment_rows(self) -> list[tuple[str, int, str]]:
        return enrichment_rows(self.layout)


def enrichment_rows(layout: Iterable[AsBlock]) -> list[tuple[str, int, str]]:
    blocks = sorted(layout, key=lambda b: b.first)
    return [(b.cidr, b.asn, b.country) for b in blocks]


def generate_corpus(
    n_ffsn: int,
    n_cdn: int,
    seed: int = 0,
    overrides: dict[str, dict] | None = None,
) -> Corpus:
    """Interleave many scenarios over one shared, collision-free address plan."""
    overrides = overrides or {}
    master = random.Random(seed)
    alloc = BlockAllocator(random.Random(master.getrandbits(64)))
    specs: list[ScenarioParams] = []
    for label, n in (("ffsn", n_ffsn), ("cdn", n_cdn)):
        for _ in range(n):
            specs.append(PRESETS[label](master.getrandbits(32), **overrides.get(label, {})))
    records: list[DnsAnswerRecord] = []
    layout: list[AsBlock] = []
    labels: dict[str, str] = {}
    for p in specs:
        sc = generate_stream(p, alloc)
        qname = sc.qname
        while qname in labels:
            qname = "x" + qname
        if qname != sc.qname:
            sc.records = [r._replace(qname=qname) for r in sc.records]
        labels[qname] = p.label
        records.extend(sc.records)
        layout.extend(sc.layout)
    records.sort(key=lambda r: (r.timestamp, r.qname))
    return Corpus(records, layout, labels)
