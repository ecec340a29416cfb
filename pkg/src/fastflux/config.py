"""TOML configuration for the pipeline and the generator presets."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .filters import AutoWhitelistRule, FilterConfig, read_name_list
from .history import HistoryParams
from .ingest import InvalidNameError, normalize_qname
from .metrics import FasParams, MetricParams
from .scoring import ScoringParams


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    filters: FilterConfig = field(default_factory=FilterConfig)
    history: HistoryParams = field(default_factory=HistoryParams)
    metrics: MetricParams = field(default_factory=MetricParams)
    scoring: ScoringParams = field(default_factory=ScoringParams)
    cycle_seconds: int = 180
    whitelist_refresh_cycles: int = 20
    enrichment: Path | None = None
    store: Path | None = None
    synth: dict[str, dict[str, Any]] = field(default_factory=dict)


_LIST_KEYS = {
    "whitelist": "whitelist_domains",
    "popular": "popular_domains",
    "config_words": "configuration_substrings",
    "overloaded": "overloaded_dns_suffixes",
    "local": "local_suffixes",
}
_SECTIONS = {"pipeline", "filters", "auto_whitelist", "history", "metrics", "scoring", "synth"}


def _names(cls) -> set[str]:
    return {f.name for f in fields(cls)}


def _check_keys(section: str, table: dict, allowed: set[str]) -> None:
    unknown = set(table) - allowed
    if unknown:
        raise ConfigError(f"[{section}]: unknown key(s) {', '.join(sorted(unknown))}")


def _build(cls, section: str, table: dict):
    try:
        return cls(**table)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from None


def load_config(path: str | Path) -> Config:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(raw, base=path.parent)


def config_from_dict(raw: dict, base: Path = Path(".")) -> Config:
    _check_keys("top level", raw, _SECTIONS)
    cfg = Config()

    pipe = dict(raw.get("pipeline", {}))
    _check_keys("pipeline", pipe, {"cycle_seconds", "whitelist_refresh_cycles", "enrichment", "store"})
    cfg.cycle_seconds = int(pipe.get("cycle_seconds", cfg.cycle_seconds))
    cfg.whitelist_refresh_cycles = int(pipe.get("whitelist_refresh_cycles", cfg.whitelist_refresh_cycles))
    if cfg.cycle_seconds <= 0 or cfg.whitelist_refresh_cycles <= 0:
        raise ConfigError("[pipeline]: cycle_seconds and whitelist_refresh_cycles must be positive")
    for key in ("enrichment", "store"):
        if key in pipe:
            setattr(cfg, key, base / pipe[key])

    filt = dict(raw.get("filters", {}))
    _check_keys("filters", filt, set(_LIST_KEYS) | {"ttl_cutoff"})
    rule = _build(AutoWhitelistRule, "auto_whitelist", _checked(raw, "auto_whitelist", AutoWhitelistRule))
    kwargs: dict[str, Any] = {"auto_rule": rule}
    if "ttl_cutoff" in filt:
        kwargs["ttl_cutoff"] = filt["ttl_cutoff"]
    for key, attr in _LIST_KEYS.items():
        if key not in filt:
            continue
        list_path = base / filt[key]
        try:
            items = read_name_list(list_path)
        except OSError as exc:
            raise ConfigError(f"[filters].{key}: cannot read {list_path}: {exc}") from None
        if attr in ("whitelist_domains", "popular_domains"):
            try:
                kwargs[attr] = frozenset(normalize_qname(n) for n in items)
            except InvalidNameError as exc:
                raise ConfigError(f"[filters].{key}: {exc}") from None
        else:
            kwargs[attr] = tuple(n.lower() for n in items)
    cfg.filters = _build(FilterConfig, "filters", kwargs)

    cfg.history = _build(HistoryParams, "history", _checked(raw, "history", HistoryParams))

    met = dict(raw.get("metrics", {}))
    fas_keys = _names(FasParams)
    _check_keys("metrics", met, fas_keys | {"min_ips_for_fas", "min_ips_for_dip"})
    fas = _build(FasParams, "metrics", {k: v for k, v in met.items() if k in fas_keys})
    cfg.metrics = _build(
        MetricParams, "metrics", {"fas": fas, **{k: v for k, v in met.items() if k not in fas_keys}}
    )

    cfg.scoring = _build(ScoringParams, "scoring", _checked(raw, "scoring", ScoringParams))

    synth = dict(raw.get("synth", {}))
    _check_keys("synth", synth, {"ffsn", "cdn"})
    cfg.synth = {k: dict(v) for k, v in synth.items()}
    return cfg


def _checked(raw: dict, section: str, cls) -> dict:
    table = dict(raw.get(section, {}))
    _check_keys(section, table, _names(cls))
    return table
