from __future__ import annotations

import pytest

from fastflux.enrichment import IpDatabase, IpMeta
from fastflux.synthgen import (
    ScenarioError,
    cdn_preset,
    ffsn_preset,
    generate_corpus,
    generate_stream,
)


def test_same_seed_same_stream():
    for preset in (ffsn_preset, cdn_preset):
        a = generate_stream(preset(42))
        b = generate_stream(preset(42))
        assert a.records == b.records and a.layout == b.layout
        assert generate_stream(preset(43)).records != a.records


def test_corpus_determinism_and_labels():
    a = generate_corpus(3, 5, seed=9)
    b = generate_corpus(3, 5, seed=9)
    assert a.records == b.records and a.labels == b.labels
    assert sorted(a.labels.values()).count("ffsn") == 3
    stamps = [r.timestamp for r in a.records]
    assert stamps == sorted(stamps)
    assert {r.qname for r in a.records} == set(a.labels)


def test_presets_follow_as_ranges():
    for seed in range(30):
        assert 30 <= ffsn_preset(seed).n_as <= 60
        assert 1 <= cdn_preset(seed).n_as <= 5


def test_layout_is_disjoint_and_covers_every_answer():
    corpus = generate_corpus(4, 10, seed=1)
    db = IpDatabase((b.cidr, IpMeta(b.cidr, b.asn, b.country)) for b in corpus.layout)  # raises on overlap
    for r in corpus.records:
        for ip in r.ips:
            assert db.lookup(ip) is not None


def test_ffsn_uses_many_as_and_cdn_few():
    corpus = generate_corpus(2, 2, seed=4)
    db = IpDatabase((b.cidr, IpMeta(b.cidr, b.asn, b.country)) for b in corpus.layout)
    for qname, label in corpus.labels.items():
        ases = {db.lookup(ip).asn for r in corpus.records if r.qname == qname for ip in r.ips}
        assert (len(ases) >= 20) if label == "ffsn" else (len(ases) <= 5)


def test_invalid_params():
    with pytest.raises(ScenarioError):
        generate_stream(ffsn_preset(1, churn_rate=2.0))
    with pytest.raises(ScenarioError):
        generate_stream(cdn_preset(1, n_as=50, n_ips_pool=3))
    with pytest.raises(ScenarioError):
        generate_stream(ffsn_preset(1, label="other"))
