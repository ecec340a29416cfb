"""Passive-DNS fast-flux detection."""

from .ingest import DnsAnswerRecord, normalize_qname, parse_log_line, parse_pcap_stream
from .enrichment import IpDatabase, IpMeta, ip_to_index, load_ip_database, lookup_ip
from .filters import FilterConfig, FilterVerdict, apply_filters, refresh_auto_whitelist
from .history import DomainHistory, HistoryParams, HistoryStore, chunk_averages, update_history
from .metrics import as_fraction, compute_history_metrics, compute_static_metrics, ip_dispersion
from .scoring import ScoreResult, ScoringParams, Verdict, score_domain
from .pipeline import Pipeline, run_pipeline

__version__ = "0.1.0"
