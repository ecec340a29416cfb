"""Turn pcap captures and passive-DNS JSON-lines logs into answer records."""

from __future__ import annotations

import json
import logging
import re
import struct
from dataclasses import dataclass
from typing import BinaryIO, Iterable, Iterator, NamedTuple, TextIO

import orjson

logger = logging.getLogger(__name__)

DNS_PORT = 53
QTYPE_A = 1
QCLASS_IN = 1


class InvalidNameError(ValueError):
    pass


class PcapFormatError(ValueError):
    """The capture file header cannot be read."""


class LogParseError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno
        self.message = message


class DnsAnswerRecord(NamedTuple):
    """One resolved A-type DNS response."""

    timestamp: int
    qname: str
    ttl: int
    ips: tuple[str, ...]

    @property
    def answer_length(self) -> int:
        return len(self.ips)


def normalize_qname(raw: str) -> str:
    """Lowercase ``raw`` and strip one trailing dot."""
    name = raw.lower()
    if name.endswith("."):
        name = name[:-1]
    if not name:
        raise InvalidNameError(f"invalid domain name {raw!r}")
    return name


_OCTET = r"(?:25[0-5]|2[0-4][0-9]|1[0-9][0-9]|[1-9]?[0-9])"
_IPV4 = re.compile(rf"{_OCTET}\.{_OCTET}\.{_OCTET}\.{_OCTET}\Z")


def is_ipv4(text: str) -> bool:
    """Strict dotted quad: four decimal octets, no leading zeros."""
    return _IPV4.match(text) is not None


# Validated addresses and normalized names, each mapped to one shared string
# instance. Busy logs repeat both heavily, so this skips re-validation and
# keeps long histories from holding millions of equal strings.
_INTERN_LIMIT = 1 << 20
_ips: dict[str, str] = {}
_names: dict[str, str] = {}


def _canonical_ip(ip) -> str | None:
    if type(ip) is not str:
        return None
    cached = _ips.get(ip)
    if cached is None and _IPV4.match(ip) is not None:
        if len(_ips) >= _INTERN_LIMIT:
            _ips.clear()
        cached = _ips[ip] = ip
    return cached


def _canonical_name(raw: str) -> str:
    name = _names.get(raw)
    if name is None:
        name = normalize_qname(raw)
        if len(_names) >= _INTERN_LIMIT:
            _names.clear()
        _names[raw] = name
    return name


# --------------------------------------------------------------------------
# JSON-lines passive-DNS log
# --------------------------------------------------------------------------

_REQUIRED_KEYS = ("ts", "qname", "ttl", "ips")


def parse_log_line(line: str, lineno: int = 0) -> DnsAnswerRecord:
    """Parse one JSON-lines log entry.

    Raises LogParseError carrying ``lineno`` on any schema violation.
    """
    try:
        obj = orjson.loads(line)
    except orjson.JSONDecodeError as exc:
        raise LogParseError(lineno, f"invalid JSON ({exc.msg})") from None
    if not isinstance(obj, dict):
        raise LogParseError(lineno, "entry is not a JSON object")
    for key in _REQUIRED_KEYS:
        if key not in obj:
            raise LogParseError(lineno, f"missing required key {key!r}")

    ts, qname, ttl, ips = obj["ts"], obj["qname"], obj["ttl"], obj["ips"]
    if type(ts) is not int:
        raise LogParseError(lineno, "ts must be an integer")
    if type(ttl) is not int:
        raise LogParseError(lineno, "ttl must be an integer")
    if ttl < 0:
        raise LogParseError(lineno, "negative ttl")
    if type(qname) is not str:
        raise LogParseError(lineno, "qname must be a string")
    if type(ips) is not list:
        raise LogParseError(lineno, "ips must be an array")
    if not ips:
        raise LogParseError(lineno, "empty answer")
    try:
        canon = tuple(_ips.get(ip) or _canonical_ip(ip) for ip in ips)
    except TypeError:  # unhashable element
        canon = (None,)
    if None in canon:
        bad = next(ip for ip in ips if _canonical_ip(ip) is None)
        raise LogParseError(lineno, f"malformed IP {bad!r}")
    try:
        name = _canonical_name(qname)
    except InvalidNameError as exc:
        raise LogParseError(lineno, str(exc)) from None
    return DnsAnswerRecord(ts, name, ttl, canon)


def format_log_line(record: DnsAnswerRecord) -> str:
    """Serialize ``record`` to the JSON-lines schema (no trailing newline)."""
    return json.dumps(
        {"ts": record.timestamp, "qname": record.qname, "ttl": record.ttl, "ips": list(record.ips)},
        separators=(",", ":"),
    )


@dataclass
class LogStats:
    lines: int = 0
    records: int = 0
    errors: int = 0


def read_log(
    lines: Iterable[str], stats: LogStats | None = None, strict: bool = False
) -> Iterator[DnsAnswerRecord]:
    """Yield records from JSON-lines text; blank lines are ignored.

    Malformed lines are logged and counted, or raised when ``strict``.
    """
    if stats is None:
        stats = LogStats()
    n_lines = n_records = 0
    try:
        for lineno, line in enumerate(lines, start=1):
            if not line or line.isspace():
                continue
            n_lines += 1
            try:
                record = parse_log_line(line, lineno)
            except LogParseError as exc:
                if strict:
                    raise
                stats.errors += 1
                logger.warning("skipping %s", exc)
                continue
            n_records += 1
            yield record
    finally:
        stats.lines += n_lines
        stats.records += n_records


def write_log(records: Iterable[DnsAnswerRecord], out: TextIO) -> int:
    n = 0
    for record in records:
        out.write(format_log_line(record))
        out.write("\n")
        n += 1
    return n


# --------------------------------------------------------------------------
# pcap
# --------------------------------------------------------------------------

LINKTYPE_ETHERNET = 1
LINKTYPE_RAW = 101
LINKTYPE_IPV4 = 228

_ETH_IPV4 = 0x0800
_ETH_VLAN = (0x8100, 0x88A8)


@dataclass
class PcapStats:
    packets: int = 0
    records: int = 0
    truncated: int = 0
    malformed: int = 0
    non_dns: int = 0
    non_a: int = 0
    queries: int = 0
    tcp_dns: int = 0

    @property
    def skipped_count(self) -> int:
        """Packets lost to truncation or malformed DNS payloads."""
        return self.truncated + self.malformed


class _Truncated(Exception):
    pass


class _Malformed(Exception):
    pass


class PcapReader:
    """Iterate A-type DNS responses in a libpcap capture.

    The global header is validated on construction; bad packets never abort
    the iteration, they only bump a counter in ``stats``.
    """

    def __init__(self, stream: BinaryIO):
        self._stream = stream
        self.stats = PcapStats()
        header = stream.read(24)
        if len(header) < 24:
            raise PcapFormatError("short pcap global header")
        magic = header[:4]
        if magic in (b"\xd4\xc3\xb2\xa1", b"\x4d\x3c\xb2\xa1"):
            self._endian = "<"
        elif magic in (b"\xa1\xb2\xc3\xd4", b"\xa1\xb2\x3c\x4d"):
            self._endian = ">"
        else:
            raise PcapFormatError(f"bad pcap magic {magic.hex()}")
        _, _, _, _, _, self.linktype = struct.unpack(self._endian + "HHiIII", header[4:])
        if self.linktype not in (LINKTYPE_ETHERNET, LINKTYPE_RAW, LINKTYPE_IPV4):
            raise PcapFormatError(f"unsupported link type {self.linktype}")
        self._rec_header = struct.Struct(self._endian + "IIII")

    def __iter__(self) -> Iterator[DnsAnswerRecord]:
        read = self._stream.read
        rec_header = self._rec_header
        while True:
            raw = read(16)
            if not raw:
                return
            self.stats.packets += 1
            if len(raw) < 16:
                self.stats.truncated += 1
                return
            ts_sec, _, incl_len, _ = rec_header.unpack(raw)
            data = read(incl_len)
            if len(data) < incl_len:
                self.stats.truncated += 1
                return
            try:
                record = self._decode_packet(ts_sec, data)
            except _Truncated:
                self.stats.truncated += 1
                continue
            except _Malformed:
                self.stats.malformed += 1
                continue
            if record is not None:
                self.stats.records += 1
                yield record

    def _decode_packet(self, ts: int, data: bytes) -> DnsAnswerRecord | None:
        if self.linktype == LINKTYPE_ETHERNET:
            if len(data) < 14:
                raise _Truncated
            offset = 12
            (ethertype,) = struct.unpack_from("!H", data, offset)
            offset += 2
            while ethertype in _ETH_VLAN:
                if len(data) < offset + 4:
                    raise _Truncated
                (ethertype,) = struct.unpack_from("!H", data, offset + 2)
                offset += 4
            if ethertype != _ETH_IPV4:
                self.stats.non_dns += 1
                return None
            ip = data[offset:]
        else:
            ip = data

        if len(ip) < 20:
            raise _Truncated
        if ip[0] >> 4 != 4:
            self.stats.non_dns += 1
            return None
        ihl = (ip[0] & 0x0F) * 4
        total_len = struct.unpack_from("!H", ip, 2)[0]
        if ihl < 20 or total_len < ihl:
            raise _Malformed
        if len(ip) < total_len:
            raise _Truncated
        flags_frag = struct.unpack_from("!H", ip, 6)[0]
        proto = ip[9]
        if flags_frag & 0x3FFF:
            # fragments are not reassembled
            self.stats.non_dns += 1
            return None
        payload = ip[ihl:total_len]

        if proto == 6:
            if len(payload) >= 4:
                sport, dport = struct.unpack_from("!HH", payload)
                if DNS_PORT in (sport, dport):
                    self.stats.tcp_dns += 1
                    return None
            self.stats.non_dns += 1
            return None
        if proto != 17:
            self.stats.non_dns += 1
            return None
        if len(payload) < 8:
            raise _Truncated
        sport, dport, udp_len = struct.unpack_from("!HHH", payload)
        if DNS_PORT not in (sport, dport):
            self.stats.non_dns += 1
            return None
        if udp_len < 8:
            raise _Malformed
        if udp_len > len(payload):
            raise _Truncated
        return self._decode_dns(ts, payload[8:udp_len])

    def _decode_dns(self, ts: int, msg: bytes) -> DnsAnswerRecord | None:
        if len(msg) < 12:
            raise _Truncated
        _, flags, qdcount, ancount = struct.unpack_from("!HHHH", msg)
        if not flags & 0x8000:
            self.stats.queries += 1
            return None
        if qdcount != 1:
            self.stats.non_a += 1
            return None
        offset = 12
        qname, offset = _read_name(msg, offset)
        if len(msg) < offset + 4:
            raise _Truncated
        qtype, qclass = struct.unpack_from("!HH", msg, offset)
        offset += 4
        if qtype != QTYPE_A or qclass != QCLASS_IN:
            self.stats.non_a += 1
            return None

        ips: list[str] = []
        ttl: int | None = None
        for _ in range(ancount):
            _, offset = _read_name(msg, offset)
            if len(msg) < offset + 10:
                raise _Truncated
            rtype, rclass, rttl, rdlen = struct.unpack_from("!HHIH", msg, offset)
            offset += 10
            if len(msg) < offset + rdlen:
                raise _Truncated
            if rtype == QTYPE_A and rclass == QCLASS_IN:
                if rdlen != 4:
                    raise _Malformed
                ips.append(_canonical_ip("%d.%d.%d.%d" % tuple(msg[offset:offset + 4])))
                ttl = rttl if ttl is None else min(ttl, rttl)
            offset += rdlen
        if not ips:
            self.stats.non_a += 1
            return None
        try:
            name = _canonical_name(qname)
        except InvalidNameError:
            raise _Malformed from None
        return DnsAnswerRecord(int(ts), name, int(ttl), tuple(ips))


def _read_name(msg: bytes, offset: int) -> tuple[str, int]:
    """Decode a possibly compressed domain name; return (name, next offset)."""
    labels: list[str] = []
    end = None
    jumps = 0
    while True:
        if offset >= len(msg):
            raise _Truncated
        length = msg[offset]
        if length & 0xC0 == 0xC0:
            if offset + 1 >= len(msg):
                raise _Truncated
            pointer = ((length & 0x3F) << 8) | msg[offset + 1]
            if end is None:
                end = offset + 2
            jumps += 1
            if jumps > 64 or pointer >= len(msg):
                raise _Malformed
            offset = pointer
            continue
        if length & 0xC0:
            raise _Malformed
        offset += 1
        if length == 0:
            break
        if offset + length > len(msg):
            raise _Truncated
        labels.append(msg[offset:offset + length].decode("ascii", errors="replace"))
        offset += length
    return ".".join(labels) + ".", (end if end is not None else offset)


def parse_pcap_stream(stream: BinaryIO, stats: PcapStats | None = None) -> Iterator[DnsAnswerRecord]:
    """Eagerly validate the pcap header, then lazily yield records.

    When ``stats`` is given it is filled in as the iterator advances.
    """
    reader = PcapReader(stream)
    if stats is not None:
        reader.stats = stats
    return iter(reader)
