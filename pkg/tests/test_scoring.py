from __future__ import annotations

import itertools

import pytest
from conftest import T0, rec
from hypothesis import given
from hypothesis import strategies as st
from oracles import adjusted_weights, rescale

from fastflux.history import DomainHistory
from fastflux.metrics import HistoryMetrics, StaticMetrics
from fastflux.scoring import (
    DYNAMIC_METRICS,
    STATIC_METRICS,
    ScoringParams,
    Verdict,
    adjust_weights,
    aggregate_dynamic,
    aggregate_static,
    calibrate,
    calibrate_and_classify,
    final_score,
    prefilter_dispersion,
    score_domain,
    score_key,
    score_metrics,
    square_exp_rescale,
)

P = ScoringParams()
unit = st.floats(0.0, 1.0)
maybe_unit = st.one_of(st.none(), unit)


def static(n_ip=10, n_net=3, n_as=3, m_al=2, f_as=0.3, d_ip=0.1, n_ip_avail=True) -> StaticMetrics:
    return StaticMetrics(n_ip, n_net, n_as, m_al, f_as, f_as, d_ip, n_ip_avail)


# --------------------------------------------------------------------------
# rescaling
# --------------------------------------------------------------------------


def test_rescale_examples():
    assert square_exp_rescale(33, 1, 24) == pytest.approx(0.831, abs=5e-4)
    assert square_exp_rescale(1, 1, 24) == 0.0
    assert square_exp_rescale(1276, 1, 24) == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(ValueError):
        square_exp_rescale(0, 1, 24)


@given(st.floats(0, 1e4), st.floats(0.1, 100))
def test_rescale_matches_oracle(dx, s):
    assert square_exp_rescale(1 + dx, 1, s) == pytest.approx(rescale(1 + dx, 1, s), rel=1e-12, abs=1e-15)


# --------------------------------------------------------------------------
# aggregation
# --------------------------------------------------------------------------


def test_static_aggregate_examples():
    zeros = dict.fromkeys(STATIC_METRICS, 0.0)
    ones = dict.fromkeys(STATIC_METRICS, 1.0)
    assert aggregate_static(zeros)[0] == 0.0
    assert aggregate_static(ones)[0] == pytest.approx(1.0, abs=1e-12)


def test_single_available_metric_takes_the_freed_weight():
    # every missing weight ends at exactly w/20; n_IP gets the remainder
    a, weights = aggregate_static({"n_ip": 1.0})
    assert weights[0] == pytest.approx(1 - 0.97 / 20, abs=1e-12)
    assert a == pytest.approx(0.9515, abs=1e-12)
    for w, w0 in zip(weights[1:], P.static_weights[1:]):
        assert w == pytest.approx(w0 / 20, abs=1e-15)


def test_dynamic_aggregate_examples():
    assert aggregate_dynamic(dict.fromkeys(DYNAMIC_METRICS, 0.0))[0] == 0.0
    assert aggregate_dynamic(dict.fromkeys(DYNAMIC_METRICS, 1.0))[0] == pytest.approx(1.0, abs=1e-12)
    assert aggregate_dynamic({"c_ip": 0.0, "c_net": 0.0, "c_as": 1.0})[0] == pytest.approx(0.7, abs=1e-12)
    assert aggregate_dynamic({}) == (None, None)


def test_final_score_examples():
    assert final_score(1.0, 1.0, 1.0, 0.9)[0] == pytest.approx(1.0, abs=1e-12)
    a, branch, _ = final_score(1.0, 0.0, 1.0, 0.2)
    assert (a, branch) == (0.0, "geometric")
    a, branch, _ = final_score(0.8, 0.9, 0.5, 0.9)
    assert branch == "arithmetic"
    assert a == pytest.approx(0.27 * 0.8 + 0.38 * 0.9 + 0.35 * 0.5, abs=1e-12)
    assert a == pytest.approx(0.733, abs=5e-4)
    # unknown AS fraction takes the geometric branch
    assert final_score(0.8, 0.9, 0.5, None)[1] == "geometric"


def test_calibration_examples():
    assert calibrate(0.25) == pytest.approx(0.5, abs=1e-12)
    assert calibrate(0.0) == 0.0
    assert calibrate(1.0) == 1.0
    assert calibrate(0.09) == pytest.approx(0.3, abs=1e-12)


def test_prefilter_examples():
    assert not prefilter_dispersion(static(n_ip=1, d_ip=0.0))
    assert prefilter_dispersion(static(d_ip=4.7e-10))
    assert prefilter_dispersion(static(d_ip=0.77))


def test_params_validation():
    with pytest.raises(ValueError):
        ScoringParams(w_ip=0.5)
    with pytest.raises(ValueError):
        ScoringParams(a_th=1.0)
    with pytest.raises(ValueError):
        ScoringParams(s_ip=0)


# --------------------------------------------------------------------------
# properties
# --------------------------------------------------------------------------


def test_weight_adjustment_exhaustive():
    for group in (P.static_weights, P.final_weights, P.dynamic_weights):
        for pattern in itertools.product((True, False), repeat=len(group)):
            got = adjust_weights(group, pattern)
            want = adjusted_weights(group, pattern)
            if not any(pattern):
                assert got is None and want is None
                continue
            assert abs(sum(got) - 1.0) <= 1e-12
            assert got == pytest.approx(list(want), abs=1e-15)


@given(
    st.lists(maybe_unit, min_size=6, max_size=6).filter(lambda v: any(x is not None for x in v)),
    st.lists(maybe_unit, min_size=3, max_size=3),
    maybe_unit,
    maybe_unit,
)
def test_scores_stay_in_unit_interval(svals, dvals, c_al, f_as):
    a_stat, _ = aggregate_static(dict(zip(STATIC_METRICS, svals)))
    a_dyn, _ = aggregate_dynamic(dict(zip(DYNAMIC_METRICS, dvals)))
    a_raw, _, _ = final_score(a_stat, a_dyn, c_al, f_as)
    a_cal, _ = calibrate_and_classify(a_raw)
    for x in (a_stat, a_raw, a_cal) + ((a_dyn,) if a_dyn is not None else ()):
        assert 0.0 <= x <= 1.0


@given(st.lists(unit, min_size=3, max_size=3), st.integers(0, 2), st.floats(0, 1), st.floats(0.5, 1.0))
def test_arithmetic_branch_monotone(values, i, bump, f_as):
    bigger = list(values)
    bigger[i] = min(1.0, values[i] + bump)
    assert final_score(*bigger, f_as)[0] >= final_score(*values, f_as)[0]


@given(st.lists(st.floats(1e-6, 1.0), min_size=3, max_size=3), st.integers(0, 2), st.floats(0, 1),
       st.floats(0.0, 0.4999))
def test_geometric_branch_monotone(values, i, bump, f_as):
    bigger = list(values)
    bigger[i] = min(1.0, values[i] + bump)
    assert final_score(*bigger, f_as)[0] >= final_score(*values, f_as)[0] * (1 - 1e-12)


@given(unit, st.floats(0.01, 0.99))
def test_verdict_consistency(a_raw, a_th):
    params = ScoringParams(a_th=a_th)
    a_cal, verdict = calibrate_and_classify(a_raw, params)
    assert (verdict is Verdict.FAST_FLUX) == (a_raw > a_th) == (a_cal > 0.5)


@given(st.lists(st.floats(0.01, 1.0), min_size=6, max_size=6), st.floats(0.0, 0.4999))
def test_stable_domain_scores_zero_in_geometric_branch(svals, f_as):
    a_stat, _ = aggregate_static(dict(zip(STATIC_METRICS, svals)))
    a_dyn, _ = aggregate_dynamic(dict.fromkeys(DYNAMIC_METRICS, 0.0))
    assert final_score(a_stat, a_dyn, 0.0, f_as)[0] == 0.0


# --------------------------------------------------------------------------
# end-to-end scoring of one history
# --------------------------------------------------------------------------

REPORT_KEYS = {"qname", "verdict", "a_stat", "a_dyn", "a_raw", "a_calibrated", "calibration", "branch",
               "n_records", "closed_chunks", "db_misses", "metrics"}


def test_score_metrics_breakdown():
    r = score_metrics("x.example", static(), HistoryMetrics(0.5, 0.2, 0.1, 0.0), n_records=12, closed_chunks=3)
    out = r.to_json()
    assert set(out) == REPORT_KEYS
    assert set(out["metrics"]) == set(STATIC_METRICS) | set(DYNAMIC_METRICS) | {"c_al", "a_stat", "a_dyn"}
    assert out["metrics"]["n_ip"]["raw"] == 10
    assert (out["n_records"], out["closed_chunks"]) == (12, 3)


def test_prefiltered_result_keeps_counts():
    r = score_metrics("x.example", static(n_ip=1, d_ip=0.0), HistoryMetrics(), n_records=4, closed_chunks=1)
    assert r.verdict is Verdict.PREFILTERED and r.a_raw is None
    assert (r.n_records, r.closed_chunks) == (4, 1)


def test_score_domain_and_key(small_db):
    h = DomainHistory("x.example")
    for i in range(30):
        h.add(rec(T0 + i * 400, [f"1.1.1.{i % 5}", f"3.3.3.{i}"], qname="x.example"))
    key = score_key(h)
    result = score_domain(h, small_db)
    assert result.n_records == 30 and result.closed_chunks == 3
    assert result.verdict in (Verdict.FAST_FLUX, Verdict.LEGIT)
    h.add(rec(T0 + 30 * 400, ["1.1.1.0"], qname="x.example"))
    assert score_key(h) == key  # nothing score-relevant changed
    h.add(rec(T0 + 31 * 400, ["2.2.2.2"], qname="x.example"))
    assert score_key(h) != key
