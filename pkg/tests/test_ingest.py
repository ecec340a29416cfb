from __future__ import annotations

import io
import struct

import dpkt
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fastflux.ingest import (
    DnsAnswerRecord,
    InvalidNameError,
    LogParseError,
    LogStats,
    PcapFormatError,
    PcapReader,
    format_log_line,
    normalize_qname,
    parse_log_line,
    parse_pcap_stream,
    read_log,
)

# --------------------------------------------------------------------------
# capture construction
# --------------------------------------------------------------------------


def _name(qname: str) -> bytes:
    out = b""
    for label in qname.strip(".").split("."):
        out += bytes([len(label)]) + label.encode()
    return out + b"\x00"


def dns_response(qname: str, answers, qtype: int = 1, is_response: bool = True) -> bytes:
    """answers: list of (rtype, ttl, rdata bytes); names use a pointer to the question."""
    flags = 0x8180 if is_response else 0x0100
    msg = struct.pack("!HHHHHH", 0x1234, flags, 1, len(answers), 0, 0)
    msg += _name(qname) + struct.pack("!HH", qtype, 1)
    for rtype, ttl, rdata in answers:
        msg += b"\xc0\x0c" + struct.pack("!HHIH", rtype, 1, ttl, len(rdata)) + rdata
    return msg


def a_rdata(ip: str) -> bytes:
    return bytes(int(o) for o in ip.split("."))


def udp_ip(payload: bytes, sport: int = 53, dport: int = 40000, proto: int = 17) -> bytes:
    if proto == 17:
        l4 = struct.pack("!HHHH", sport, dport, 8 + len(payload), 0) + payload
    else:
        l4 = struct.pack("!HHIIBBHHH", sport, dport, 0, 0, 0x50, 0x18, 1024, 0, 0) + payload
    header = struct.pack(
        "!BBHHHBBH4s4s", 0x45, 0, 20 + len(l4), 1, 0, 64, proto, 0, bytes([8, 8, 8, 8]), bytes([10, 0, 0, 1])
    )
    return header + l4


def ethernet(ip_packet: bytes) -> bytes:
    return b"\x00\x11\x22\x33\x44\x55" + b"\x66\x77\x88\x99\xaa\xbb" + b"\x08\x00" + ip_packet


def pcap(frames, linktype: int = 1, ts0: int = 1_520_600_000) -> bytes:
    out = struct.pack("<IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, 65535, linktype)
    for i, frame in enumerate(frames):
        out += struct.pack("<IIII", ts0 + i, 0, len(frame), len(frame)) + frame
    return out


def read(capture: bytes):
    reader = PcapReader(io.BytesIO(capture))
    return list(reader), reader.stats


def dpkt_records(capture: bytes):
    """The same extraction done by an independent dissector."""
    out = []
    for ts, buf in dpkt.pcap.Reader(io.BytesIO(capture)):
        eth = dpkt.ethernet.Ethernet(buf)
        udp = eth.data.data
        msg = dpkt.dns.DNS(udp.data)
        ips = [".".join(str(b) for b in rr.rdata) for rr in msg.an if rr.type == dpkt.dns.DNS_A]
        ttls = [rr.ttl for rr in msg.an if rr.type == dpkt.dns.DNS_A]
        if msg.qr == dpkt.dns.DNS_R and ips:
            out.append((int(ts), msg.qd[0].name.lower(), min(ttls), tuple(ips)))
    return out


# --------------------------------------------------------------------------
# pcap
# --------------------------------------------------------------------------


def test_two_a_records_match_reference_dissector():
    msg = dns_response("Www.Example.COM", [(1, 300, a_rdata("1.2.3.4")), (1, 300, a_rdata("5.6.7.8"))])
    capture = pcap([ethernet(udp_ip(msg))])
    records, stats = read(capture)
    assert len(records) == 1
    r = records[0]
    assert r.answer_length == 2 and r.ttl == 300
    assert [(r.timestamp, r.qname, r.ttl, r.ips) for r in records] == dpkt_records(capture)
    assert stats.records == 1 and stats.skipped_count == 0


def test_aaaa_only_capture_is_empty():
    aaaa = bytes(16)
    msg = dns_response("v6.example.com", [(28, 60, aaaa)], qtype=28)
    records, stats = read(pcap([ethernet(udp_ip(msg))] * 3))
    assert records == []
    assert stats.non_a == 3


def test_truncated_packet_is_skipped_and_counted():
    good = [ethernet(udp_ip(dns_response(f"d{i}.example", [(1, 60, a_rdata(f"9.9.9.{i}"))]))) for i in range(3)]
    cut = good[0][:-6]  # snap length shorter than the IP total length
    records, stats = read(pcap([good[0], cut, good[1], good[2]]))
    assert len(records) == 3
    assert stats.skipped_count == 1
    assert stats.truncated == 1


def test_multi_record_ttl_is_minimum():
    msg = dns_response("x.example", [(1, 300, a_rdata("1.1.1.1")), (1, 120, a_rdata("1.1.1.2"))])
    (r,), _ = read(pcap([ethernet(udp_ip(msg))]))
    assert r.ttl == 120


def test_cname_records_are_skipped_inside_an_answer():
    cname = _name("edge.cdn.example")
    msg = dns_response("www.example", [(5, 30, cname), (1, 60, a_rdata("4.4.4.4"))])
    (r,), _ = read(pcap([ethernet(udp_ip(msg))]))
    assert r.ips == ("4.4.4.4",) and r.ttl == 60


def test_queries_tcp_and_other_traffic_are_not_records():
    query = dns_response("q.example", [], is_response=False)
    frames = [
        ethernet(udp_ip(query)),
        ethernet(udp_ip(b"payload", sport=123, dport=123)),
        ethernet(udp_ip(dns_response("t.example", [(1, 60, a_rdata("1.2.3.4"))]), proto=6)),
    ]
    records, stats = read(pcap(frames))
    assert records == []
    assert stats.queries == 1 and stats.non_dns == 1 and stats.tcp_dns == 1


def test_raw_ip_link_type():
    msg = dns_response("raw.example", [(1, 60, a_rdata("7.7.7.7"))])
    records, _ = read(pcap([udp_ip(msg)], linktype=101))
    assert records == [DnsAnswerRecord(1_520_600_000, "raw.example", 60, ("7.7.7.7",))]


def test_big_endian_header():
    msg = dns_response("be.example", [(1, 60, a_rdata("7.7.7.7"))])
    frame = ethernet(udp_ip(msg))
    capture = struct.pack(">IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, 65535, 1)
    capture += struct.pack(">IIII", 5, 0, len(frame), len(frame)) + frame
    records, _ = read(capture)
    assert records[0].timestamp == 5


def test_bad_global_header():
    with pytest.raises(PcapFormatError):
        PcapReader(io.BytesIO(b"\x00" * 24))
    with pytest.raises(PcapFormatError):
        PcapReader(io.BytesIO(b"\xd4\xc3\xb2\xa1"))


def test_compression_loop_is_malformed_not_fatal():
    msg = bytearray(dns_response("loop.example", [(1, 60, a_rdata("1.2.3.4"))]))
    # point the answer name at itself
    at = msg.index(b"\xc0\x0c")
    msg[at:at + 2] = struct.pack("!H", 0xC000 | at)
    good = dns_response("ok.example", [(1, 60, a_rdata("1.2.3.5"))])
    records, stats = read(pcap([ethernet(udp_ip(bytes(msg))), ethernet(udp_ip(good))]))
    assert [r.qname for r in records] == ["ok.example"]
    assert stats.malformed == 1


@given(st.lists(st.tuples(st.booleans(), st.integers(1, 4)), max_size=12))
def test_record_count_equals_well_formed_a_responses(spec):
    frames, expected = [], 0
    for i, (is_a, n) in enumerate(spec):
        if is_a:
            answers = [(1, 60, a_rdata(f"10.0.{i}.{k}")) for k in range(n)]
            frames.append(ethernet(udp_ip(dns_response(f"h{i}.example", answers))))
            expected += 1
        else:
            frames.append(ethernet(udp_ip(dns_response(f"h{i}.example", [(28, 60, bytes(16))] * n, qtype=28))))
    records = list(parse_pcap_stream(io.BytesIO(pcap(frames))))
    assert len(records) == expected


# --------------------------------------------------------------------------
# JSON-lines log
# --------------------------------------------------------------------------


def test_parse_log_line_normalizes():
    r = parse_log_line('{"ts":1520600000,"qname":"Example.COM.","ttl":60,"ips":["1.2.3.4"]}')
    assert r == DnsAnswerRecord(1520600000, "example.com", 60, ("1.2.3.4",))


def test_parse_log_line_boundaries():
    r = parse_log_line('{"ts":0,"qname":"a.b","ttl":0,"ips":["0.0.0.0"]}')
    assert r.ttl == 0 and r.timestamp == 0 and r.ips == ("0.0.0.0",)


@pytest.mark.parametrize(
    "line, message",
    [
        ('{"ts":1,"qname":"a.b","ttl":1,"ips":[]}', "empty answer"),
        ('{"ts":1,"qname":"a.b","ttl":1}', "missing required key 'ips'"),
        ('{"ts":"1","qname":"a.b","ttl":1,"ips":["1.1.1.1"]}', "ts must be an integer"),
        ('{"ts":1,"qname":"a.b","ttl":-1,"ips":["1.1.1.1"]}', "negative ttl"),
        ('{"ts":1,"qname":"a.b","ttl":1,"ips":["1.1.1.256"]}', "malformed IP"),
        ('{"ts":1,"qname":"a.b","ttl":1,"ips":["01.1.1.1"]}', "malformed IP"),
        ('{"ts":1,"qname":"a.b","ttl":1,"ips":[[1]]}', "malformed IP"),
        ('{"ts":1,"qname":".","ttl":1,"ips":["1.1.1.1"]}', "invalid domain name"),
        ("[1,2]", "not a JSON object"),
        ("{nope", "invalid JSON"),
    ],
)
def test_parse_log_line_errors(line, message):
    with pytest.raises(LogParseError, match=message) as info:
        parse_log_line(line, lineno=7)
    assert info.value.lineno == 7


def test_normalize_qname():
    assert normalize_qname("MisCapoerasun.WS.") == "miscapoerasun.ws"
    assert normalize_qname("a.b.c") == "a.b.c"
    with pytest.raises(InvalidNameError):
        normalize_qname(".")


def test_read_log_counts_and_skips():
    lines = [
        '{"ts":1,"qname":"a.b","ttl":1,"ips":["1.1.1.1"]}\n',
        "\n",
        "garbage\n",
        '{"ts":2,"qname":"a.b","ttl":1,"ips":["1.1.1.2"]}\n',
    ]
    stats = LogStats()
    records = list(read_log(lines, stats))
    assert [r.timestamp for r in records] == [1, 2]
    assert (stats.lines, stats.records, stats.errors) == (3, 2, 1)
    with pytest.raises(LogParseError):
        list(read_log(lines, strict=True))


_ip = st.tuples(*[st.integers(0, 255)] * 4).map(lambda t: "%d.%d.%d.%d" % t)
_label = st.text("abcdefghijklmnopqrstuvwxyz0123456789-", min_size=1, max_size=12)


@given(
    st.integers(0, 2**40),
    st.lists(_label, min_size=1, max_size=4).map(".".join),
    st.integers(0, 2**31),
    st.lists(_ip, min_size=1, max_size=8),
)
def test_log_round_trip(ts, qname, ttl, ips):
    record = DnsAnswerRecord(ts, qname, ttl, tuple(ips))
    assert parse_log_line(format_log_line(record)) == record
