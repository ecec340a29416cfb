"""Pre-scoring filter chain for known-benign queries."""

from __future__ import annotations

import enum
import os
from dataclasses import dataclass, field, replace
from typing import Iterable

from .ingest import DnsAnswerRecord


class Reason(str, enum.Enum):
    WHITELIST = "whitelist"
    POPULAR = "popular"
    CONFIG_WORD = "config_word"
    OVERLOADED = "overloaded"
    LOCAL = "local"
    CDN_WHITELIST = "cdn_whitelist"
    TTL = "ttl"
    NONE = "none"


@dataclass(frozen=True)
class FilterVerdict:
    passed: bool
    reason: Reason


PASSED = FilterVerdict(True, Reason.NONE)


@dataclass(frozen=True)
class AutoWhitelistRule:
    min_obs: int = 100
    min_days: int = 3
    cdn_threshold: float = 0.2


@dataclass(frozen=True)
class FilterConfig:
    whitelist_domains: frozenset[str] = frozenset()
    popular_domains: frozenset[str] = frozenset()
    configuration_substrings: tuple[str, ...] = ()
    overloaded_dns_suffixes: tuple[str, ...] = ()
    local_suffixes: tuple[str, ...] = ()
    auto_cdn_whitelist: frozenset[str] = frozenset()
    ttl_cutoff: int = 1800
    auto_rule: AutoWhitelistRule = field(default_factory=AutoWhitelistRule)
    # per-name outcome of every filter but TTL; private to this instance
    _name_cache: dict = field(default=None, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        if self.ttl_cutoff <= 0:
            raise ValueError("ttl_cutoff must be positive")
        # suffixes are stored without a leading dot
        object.__setattr__(self, "overloaded_dns_suffixes", _clean_suffixes(self.overloaded_dns_suffixes))
        object.__setattr__(self, "local_suffixes", _clean_suffixes(self.local_suffixes))
        object.__setattr__(self, "_name_cache", {})


def _clean_suffixes(suffixes: Iterable[str]) -> tuple[str, ...]:
    return tuple(s.lower().strip(".") for s in suffixes if s.strip("."))


def _has_suffix(qname: str, suffixes: tuple[str, ...]) -> bool:
    for suffix in suffixes:
        if qname == suffix or qname.endswith("." + suffix):
            return True
    return False


def _name_reason(q: str, cfg: FilterConfig) -> Reason:
    if q in cfg.whitelist_domains:
        return Reason.WHITELIST
    if q in cfg.popular_domains:
        return Reason.POPULAR
    for word in cfg.configuration_substrings:
        if word in q:
            return Reason.CONFIG_WORD
    if _has_suffix(q, cfg.overloaded_dns_suffixes):
        return Reason.OVERLOADED
    if _has_suffix(q, cfg.local_suffixes):
        return Reason.LOCAL
    if q in cfg.auto_cdn_whitelist:
        return Reason.CDN_WHITELIST
    return Reason.NONE


_VERDICTS = {r: PASSED if r is Reason.NONE else FilterVerdict(False, r) for r in Reason}
_NAME_CACHE_LIMIT = 1 << 20


def apply_filters(record: DnsAnswerRecord, cfg: FilterConfig) -> FilterVerdict:
    """Run the chain in fixed order; the first matching filter wins."""
    cache = cfg._name_cache
    reason = cache.get(record.qname)
    if reason is None:
        if len(cache) >= _NAME_CACHE_LIMIT:
            cache.clear()
        reason = cache[record.qname] = _name_reason(record.qname, cfg)
    if reason is Reason.NONE and record.ttl > cfg.ttl_cutoff:
        reason = Reason.TTL
    return _VERDICTS[reason]


@dataclass(frozen=True)
class DomainSummary:
    """What the auto-whitelist rule needs to know about one scored domain."""

    qname: str
    a_calibrated: float | None
    observations: int
    distinct_days: int


def auto_whitelist_candidates(summaries: Iterable[DomainSummary], rule: AutoWhitelistRule) -> set[str]:
    return {
        s.qname
        for s in summaries
        if s.a_calibrated is not None
        and s.a_calibrated < rule.cdn_threshold
        and s.observations >= rule.min_obs
        and s.distinct_days >= rule.min_days
    }


def refresh_auto_whitelist(summaries: Iterable[DomainSummary], cfg: FilterConfig) -> FilterConfig:
    """Return a new config whose CDN whitelist also holds the qualifying domains.

    Existing entries are kept.
    """
    added = auto_whitelist_candidates(summaries, cfg.auto_rule)
    if added <= cfg.auto_cdn_whitelist:
        return cfg
    return replace(cfg, auto_cdn_whitelist=cfg.auto_cdn_whitelist | added)


def read_name_list(path: str | os.PathLike) -> list[str]:
    """Newline-delimited list; blank lines and ``#`` comments are ignored."""
    names = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                names.append(line)
    return names
