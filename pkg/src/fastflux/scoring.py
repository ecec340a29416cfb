"""Aggregation of the indicators into the anomaly score and verdict."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, fields
from typing import Mapping, NamedTuple, Sequence

from .enrichment import IpDatabase
from .history import DomainHistory
from .metrics import (
    HistoryMetrics,
    MetricParams,
    StaticMetrics,
    compute_history_metrics,
    compute_static_metrics,
)

STATIC_METRICS = ("n_ip", "n_net", "n_as", "m_al", "f_as", "d_ip")
DYNAMIC_METRICS = ("c_ip", "c_net", "c_as")


class Verdict(str, enum.Enum):
    FAST_FLUX = "fast-flux"
    LEGIT = "legit"
    PREFILTERED = "prefiltered"


@dataclass(frozen=True)
class ScoringParams:
    # square-exponential scales; count metrics start at 1, churn ratios at 0
    s_ip: float = 24.0
    s_net: float = 12.0
    s_as: float = 6.0
    s_al: float = 10.0
    static_x0: float = 1.0
    hs_ip: float = 1.0
    hs_net: float = 1.0
    hs_as: float = 0.5
    hs_al: float = 0.5
    history_x0: float = 0.0
    w_ip: float = 0.03
    w_net: float = 0.03
    w_as: float = 0.13
    w_al: float = 0.09
    w_f: float = 0.54
    w_d: float = 0.18
    wd_ip: float = 0.07
    wd_net: float = 0.23
    wd_as: float = 0.70
    w_stat: float = 0.27
    w_dyn: float = 0.38
    w_cal: float = 0.35
    a_th: float = 0.25
    missing_weight_divisor: float = 20.0
    fas_branch_threshold: float = 0.5

    def __post_init__(self):
        for name in ("s_ip", "s_net", "s_as", "s_al", "hs_ip", "hs_net", "hs_as", "hs_al"):
            if getattr(self, name) <= 0:
                raise ValueError(f"scale {name} must be positive")
        for group in (self.static_weights, self.dynamic_weights, self.final_weights):
            if any(w < 0 for w in group) or abs(sum(group) - 1.0) > 1e-9:
                raise ValueError(f"weight group {group} must be non-negative and sum to 1")
        if not 0.0 < self.a_th < 1.0:
            raise ValueError("a_th must lie in (0, 1)")
        if self.missing_weight_divisor < 1:
            raise ValueError("missing_weight_divisor must be >= 1")

    @property
    def static_weights(self) -> tuple[float, ...]:
        return (self.w_ip, self.w_net, self.w_as, self.w_al, self.w_f, self.w_d)

    @property
    def dynamic_weights(self) -> tuple[float, ...]:
        return (self.wd_ip, self.wd_net, self.wd_as)

    @property
    def final_weights(self) -> tuple[float, ...]:
        return (self.w_stat, self.w_dyn, self.w_cal)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def square_exp_rescale(x: float, x0: float, s: float) -> float:
    """Map ``x >= x0`` onto [0, 1): 0 at x0, about 0.63 at x0 + s."""
    if x < x0:
        raise ValueError(f"rescale input {x} below its minimum {x0}")
    if s <= 0:
        raise ValueError("scale must be positive")
    return 1.0 - math.exp(-(((x - x0) / s) ** 2))


def adjust_weights(weights: Sequence[float], available: Sequence[bool], divisor: float = 20.0) -> list[float] | None:
    """Shrink the weight of each missing entry by ``divisor`` and stretch the rest.

    Missing weights end at exactly ``w / divisor``; available ones share a
    common factor so the total is 1. None if nothing is available.
    """
    present = missing = 0.0
    for w, ok in zip(weights, available):
        if ok:
            present += w
        else:
            missing += w
    if present <= 0:
        return None
    k = (1.0 - missing / divisor) / present
    return [w * k if ok else w / divisor for w, ok in zip(weights, available)]


def weighted_mean(values: Sequence[float | None], weights: Sequence[float], divisor: float = 20.0):
    """Arithmetic mean with the missing-value rule; returns (mean, weights used)."""
    adjusted = adjust_weights(weights, [v is not None for v in values], divisor)
    if adjusted is None:
        return None, None
    total = sum(w * v for w, v in zip(adjusted, values) if v is not None)
    return min(1.0, max(0.0, total)), adjusted


def aggregate_static(values: Mapping[str, float | None], params: ScoringParams = ScoringParams()):
    """Static aggregate from rescaled metric values (None = unavailable)."""
    return weighted_mean([values.get(k) for k in STATIC_METRICS], params.static_weights, params.missing_weight_divisor)


def aggregate_dynamic(values: Mapping[str, float | None], params: ScoringParams = ScoringParams()):
    return weighted_mean([values.get(k) for k in DYNAMIC_METRICS], params.dynamic_weights, params.missing_weight_divisor)


def final_score(
    a_stat: float,
    a_dyn: float | None,
    c_al: float | None,
    f_as: float | None,
    params: ScoringParams = ScoringParams(),
):
    """Combine the aggregates; returns (A_raw, branch, weights used).

    A large AS fraction takes the arithmetic mean. Otherwise, or when the AS
    fraction is unknown, the weighted geometric mean applies, so any zero
    component, missing ones included, drives the score to 0.
    """
    values = [a_stat, a_dyn, c_al]
    weights = adjust_weights(params.final_weights, [v is not None for v in values], params.missing_weight_divisor)
    if weights is None:
        raise ValueError("final score needs at least one component")
    filled = [0.0 if v is None else v for v in values]
    if f_as is not None and f_as >= params.fas_branch_threshold:
        branch = "arithmetic"
        a = sum(w * v for w, v in zip(weights, filled))
    else:
        branch = "geometric"
        a = 1.0
        for w, v in zip(weights, filled):
            a *= v**w
    return min(1.0, max(0.0, a)), branch, weights


def calibrate(a_raw: float, a_th: float = 0.25) -> float:
    """Power map fixing 0 and 1 and sending ``a_th`` to 0.5."""
    gamma = math.log(0.5) / math.log(a_th)
    a_cal = a_raw**gamma
    # keep the verdict equivalence exact under rounding
    if a_raw > a_th and a_cal <= 0.5:
        a_cal = math.nextafter(0.5, 1.0)
    elif a_raw <= a_th and a_cal > 0.5:
        a_cal = 0.5
    return a_cal


def calibrate_and_classify(a_raw: float, params: ScoringParams = ScoringParams()) -> tuple[float, Verdict]:
    verdict = Verdict.FAST_FLUX if a_raw > params.a_th else Verdict.LEGIT
    return calibrate(a_raw, params.a_th), verdict


def prefilter_dispersion(static: StaticMetrics) -> bool:
    """True to keep the domain; IP-dispersion 0 means no flux is possible."""
    return static.d_ip > 0


class MetricDetail(NamedTuple):
    raw: float | None
    rescaled: float | None
    weight: float | None
    available: bool

    def to_json(self) -> dict:
        return self._asdict()


@dataclass(frozen=True)
class ScoreResult:
    qname: str
    verdict: Verdict
    a_stat: float | None = None
    a_dyn: float | None = None
    a_raw: float | None = None
    a_calibrated: float | None = None
    branch: str | None = None
    breakdown: dict[str, MetricDetail] = field(default_factory=dict)
    n_records: int = 0
    closed_chunks: int = 0
    db_misses: int = 0

    def to_json(self) -> dict:
        return {
            "qname": self.qname,
            "verdict": self.verdict.value,
            "a_stat": self.a_stat,
            "a_dyn": self.a_dyn,
            "a_raw": self.a_raw,
            "a_calibrated": self.a_calibrated,
            "calibration": "power",
            "branch": self.branch,
            "n_records": self.n_records,
            "closed_chunks": self.closed_chunks,
            "db_misses": self.db_misses,
            "metrics": {k: v.to_json() for k, v in self.breakdown.items()},
        }


def rescale_static(m: StaticMetrics, p: ScoringParams) -> dict[str, float | None]:
    ok = m.available
    x0 = p.static_x0
    return {
        "n_ip": square_exp_rescale(m.n_ip, x0, p.s_ip) if ok["n_ip"] else None,
        "n_net": square_exp_rescale(m.n_net, x0, p.s_net) if ok["n_net"] else None,
        "n_as": square_exp_rescale(m.n_as, x0, p.s_as) if ok["n_as"] else None,
        "m_al": square_exp_rescale(m.m_al, x0, p.s_al) if ok["m_al"] else None,
        "f_as": m.f_as,
        "d_ip": m.d_ip if ok["d_ip"] else None,
    }


def rescale_history(h: HistoryMetrics, p: ScoringParams) -> dict[str, float | None]:
    x0 = p.history_x0
    scales = {"c_ip": p.hs_ip, "c_net": p.hs_net, "c_as": p.hs_as, "c_al": p.hs_al}
    out = {}
    for name, s in scales.items():
        v = getattr(h, name)
        out[name] = None if v is None else square_exp_rescale(v, x0, s)
    return out


def score_metrics(
    qname: str,
    static: StaticMetrics,
    hist: HistoryMetrics,
    params: ScoringParams = ScoringParams(),
    n_records: int = 0,
    closed_chunks: int = 0,
) -> ScoreResult:
    """Score precomputed metrics; the dispersion pre-filter applies first."""
    if not prefilter_dispersion(static):
        return ScoreResult(
            qname, Verdict.PREFILTERED, n_records=n_records, closed_chunks=closed_chunks, db_misses=static.db_misses
        )

    s_res = rescale_static(static, params)
    h_res = rescale_history(hist, params)
    a_stat, w_stat = aggregate_static(s_res, params)
    a_dyn, w_dyn = aggregate_dynamic(h_res, params)
    a_raw, branch, w_fin = final_score(a_stat, a_dyn, h_res["c_al"], static.f_as, params)
    a_cal, verdict = calibrate_and_classify(a_raw, params)

    raw_static = {
        "n_ip": static.n_ip,
        "n_net": static.n_net,
        "n_as": static.n_as,
        "m_al": static.m_al,
        "f_as": static.f_as_raw,
        "d_ip": static.d_ip,
    }
    breakdown = {}
    for i, name in enumerate(STATIC_METRICS):
        breakdown[name] = MetricDetail(raw_static[name], s_res[name], w_stat[i], s_res[name] is not None)
    for i, name in enumerate(DYNAMIC_METRICS):
        ok = h_res[name] is not None
        breakdown[name] = MetricDetail(getattr(hist, name), h_res[name], w_dyn[i] if w_dyn else None, ok)
    breakdown["c_al"] = MetricDetail(hist.c_al, h_res["c_al"], w_fin[2], h_res["c_al"] is not None)
    breakdown["a_stat"] = MetricDetail(a_stat, a_stat, w_fin[0], True)
    breakdown["a_dyn"] = MetricDetail(a_dyn, a_dyn, w_fin[1], a_dyn is not None)
    return ScoreResult(
        qname=qname,
        verdict=verdict,
        a_stat=a_stat,
        a_dyn=a_dyn,
        a_raw=a_raw,
        a_calibrated=a_cal,
        branch=branch,
        breakdown=breakdown,
        n_records=n_records,
        closed_chunks=closed_chunks,
        db_misses=static.db_misses,
    )


def score_domain(
    history: DomainHistory,
    db: IpDatabase,
    params: ScoringParams = ScoringParams(),
    metric_params: MetricParams = MetricParams(),
) -> ScoreResult:
    static = compute_static_metrics(history, db, metric_params)
    # the pre-filter runs before the churn metrics are worth computing
    hist = compute_history_metrics(history, db) if prefilter_dispersion(static) else HistoryMetrics()
    return score_metrics(history.qname, static, hist, params, history.n_records, len(history.closed_chunks))


def score_key(history: DomainHistory) -> tuple[int, int, int]:
    """Changes whenever the score of ``history`` may change.

    The score is a function of the distinct IP set, the closed chunks and the
    maximum answer length; only ``n_records`` can move without this key.
    """
    return history.ip_version, history.chunk_version, history.max_al
