"""Command-line entry point: ``fastflux run|synth|overlap|cluster|histogram|whitelist-report``."""

from __future__ import annotations

import argparse
import contextlib
import io
import json
import logging
import sys
from pathlib import Path
from typing import Iterator, Sequence

from . import analysis, synthgen
from .config import Config, ConfigError, load_config
from .enrichment import EnrichmentError, IpDatabase, load_ip_database, write_ip_database
from .history import HistoryStore, StoreIntegrityError
from .ingest import DnsAnswerRecord, LogStats, PcapFormatError, PcapReader, read_log, write_log
from .pipeline import EXIT_ERROR, EXIT_OK, run_pipeline

logger = logging.getLogger("fastflux")

_PCAP_MAGICS = {b"\xd4\xc3\xb2\xa1", b"\xa1\xb2\xc3\xd4", b"\x4d\x3c\xb2\xa1", b"\xa1\xb2\x3c\x4d"}


@contextlib.contextmanager
def _output(path: str | None, mode: str = "w"):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, mode, encoding="utf-8", newline="") as fh:
            yield fh


def _open_input(path: str, stack: contextlib.ExitStack, stats: list) -> Iterator[DnsAnswerRecord]:
    if path == "-":
        st = LogStats()
        stats.append((path, st))
        return read_log(sys.stdin, st)
    fh = stack.enter_context(open(path, "rb"))
    head = fh.peek(4)[:4] if hasattr(fh, "peek") else b""
    if head in _PCAP_MAGICS:
        reader = PcapReader(fh)
        stats.append((path, reader.stats))
        return iter(reader)
    text = stack.enter_context(io.TextIOWrapper(fh, encoding="utf-8"))
    st = LogStats()
    stats.append((path, st))
    return read_log(text, st)


def _load_config(args) -> Config:
    cfg = load_config(args.config) if args.config else Config()
    if getattr(args, "enrichment", None):
        cfg.enrichment = Path(args.enrichment)
    if getattr(args, "store", None):
        cfg.store = Path(args.store)
    if getattr(args, "cycle_seconds", None):
        cfg.cycle_seconds = args.cycle_seconds
    return cfg


def cmd_run(args) -> int:
    cfg = _load_config(args)
    missing = [k for k in ("enrichment", "store") if getattr(cfg, k) is None]
    if missing:
        raise ConfigError(f"missing required setting(s): {', '.join(missing)}")
    db = load_ip_database(cfg.enrichment)
    store = HistoryStore(cfg.store, cfg.history)
    stats: list = []
    with contextlib.ExitStack() as stack:
        streams = [_open_input(p, stack, stats) for p in args.inputs]
        with _output(args.output) as report:
            status, summary = run_pipeline(streams, cfg, db, store, report)
    summary["inputs"] = {p: vars(s) for p, s in stats}
    if args.summary:
        with _output(args.summary) as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
    print(
        f"{summary['records']} records, {summary['passed']} passed filters, "
        f"{len(summary['fast_flux'])} fast-flux domain(s)",
        file=sys.stderr,
    )
    for item in summary["fast_flux"]:
        print(f"  FAST-FLUX {item['qname']} A={item['a_calibrated']:.2f}", file=sys.stderr)
    return status


def cmd_synth(args) -> int:
    cfg = load_config(args.config) if args.config else Config()
    if args.ffsn or args.cdn:
        corpus = synthgen.generate_corpus(args.ffsn, args.cdn, seed=args.seed, overrides=cfg.synth)
        records, rows, labels = corpus.records, corpus.enrichment_rows(), corpus.labels
    else:
        overrides = dict(cfg.synth.get(args.preset, {}))
        if args.duration is not None:
            overrides["duration"] = args.duration
        for key in ("answers_per_query", "ttl"):
            if key in overrides:
                overrides[key] = tuple(overrides[key])
        params = synthgen.PRESETS[args.preset](args.seed, **overrides)
        scenario = synthgen.generate_stream(params)
        records, rows = scenario.records, synthgen.enrichment_rows(scenario.layout)
        labels = {scenario.qname: params.label}
    with _output(args.output) as out:
        write_log(records, out)
    if args.enrichment_out:
        write_ip_database(rows, args.enrichment_out)
    if args.labels_out:
        with _output(args.labels_out) as fh:
            for qname in sorted(labels):
                fh.write(f"{qname},{labels[qname]}\n")
    return EXIT_OK


def cmd_overlap(args) -> int:
    pools = analysis.read_pools(args.input)
    with _output(args.output) as out:
        analysis.write_overlap_csv(analysis.overlap_matrix(pools, args.top), out)
    return EXIT_OK


def cmd_cluster(args) -> int:
    pools = analysis.read_pools(args.input)
    with _output(args.output) as out:
        analysis.write_clusters_jsonl(analysis.cluster_domains(pools), pools, out)
    return EXIT_OK


def cmd_histogram(args) -> int:
    pools = analysis.read_pools(args.input)
    if args.domain:
        pools = {d: pools[d] for d in args.domain if d in pools}
    if args.by == "country":
        db = load_ip_database(args.enrichment) if args.enrichment else IpDatabase()
        items = list(analysis.country_histogram(pools, db, args.top).items())
    else:
        ips = set().union(*pools.values()) if pools else set()
        items = [(f"{lo}-{hi}", c) for lo, hi, c in analysis.first_byte_histogram(ips, args.bin_size)]
    with _output(args.output) as out:
        analysis.write_histogram_csv(items, out)
    return EXIT_OK


def cmd_whitelist_report(args) -> int:
    cfg = _load_config(args)
    if cfg.store is None:
        raise ConfigError("missing required setting: store")
    _, state = HistoryStore(cfg.store, cfg.history).load()
    with _output(args.output) as out:
        for qname in state.get("auto_cdn_whitelist", []):
            out.write(qname + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fastflux", description="Passive-DNS fast-flux detection.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="score pcap / JSON-lines input in batch cycles")
    p.add_argument("inputs", nargs="*", default=["-"], help="pcap or JSON-lines files ('-' = stdin)")
    p.add_argument("-c", "--config")
    p.add_argument("--enrichment", help="IP database CSV (cidr,asn,country)")
    p.add_argument("--store", help="history store directory")
    p.add_argument("--cycle-seconds", type=int)
    p.add_argument("-o", "--output", help="JSON-lines report (default stdout)")
    p.add_argument("--summary", help="write the final summary JSON here")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("synth", help="generate labeled synthetic streams")
    p.add_argument("--preset", choices=sorted(synthgen.PRESETS), default="ffsn")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--duration", type=float, help="hours")
    p.add_argument("--ffsn", type=int, default=0, help="corpus mode: number of FFSN domains")
    p.add_argument("--cdn", type=int, default=0, help="corpus mode: number of CDN domains")
    p.add_argument("-c", "--config")
    p.add_argument("-o", "--output")
    p.add_argument("--enrichment-out")
    p.add_argument("--labels-out")
    p.set_defaults(func=cmd_synth)

    for name, func, helptext in (
        ("overlap", cmd_overlap, "pairwise IP-pool overlap matrix"),
        ("cluster", cmd_cluster, "connected components of the domain-IP graph"),
        ("histogram", cmd_histogram, "country or first-octet histograms"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("input", help="CSV of domain,ip pairs")
        p.add_argument("-o", "--output")
        p.set_defaults(func=func)
        if name == "overlap":
            p.add_argument("--top", type=int, help="keep the N domains with most IPs")
        if name == "histogram":
            p.add_argument("--by", choices=("country", "first-byte"), default="country")
            p.add_argument("--enrichment")
            p.add_argument("--bin-size", type=int, default=2)
            p.add_argument("--top", type=int)
            p.add_argument("--domain", action="append", help="restrict to these domains")

    p = sub.add_parser("whitelist-report", help="dump the automatic CDN whitelist")
    p.add_argument("-c", "--config")
    p.add_argument("--store")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_whitelist_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, EnrichmentError, StoreIntegrityError, PcapFormatError, analysis.PoolFormatError, OSError) as exc:
        print(f"fastflux: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
