import json

import pytest

from qostrust.core import FactorKind, FactorLevel, TrustWeights
from qostrust.dqmm import DataQualityLevel, EDQStore
from qostrust.errors import EmptyRanking, InvalidInput, MissingFactor
from qostrust.pmm import PerfDB
from qostrust.tmm import (
    TrustEngine,
    TrustHistory,
    TrustRecord,
    parse_weights,
    rank_services,
    trust_history,
    trust_report,
)


def engine_with(perf: dict, dq: dict, at=300.0, max_age=600.0, history=None):
    perfdb, edq = PerfDB(), EDQStore()
    for sid, value in perf.items():
        perfdb.add(FactorLevel(sid, FactorKind.PERFORMANCE, value, at))
    for sid, value in dq.items():
        edq.add(DataQualityLevel(sid, at, value, 1.0, value))
    return TrustEngine(perfdb.latest, edq.latest, history, max_age=max_age)


def test_weighted_combination():
    engine = engine_with({"S": 0.9}, {"S": 0.3})
    record = engine.evaluate_trust("S", TrustWeights(0.7, 0.3), 310.0)
    assert record.trust == pytest.approx(0.72, abs=1e-12)
    assert record.performance == 0.9 and record.data_quality == 0.3
    assert record.performance_evaluated_at == 300.0


def test_extreme_weights_reproduce_single_factor():
    engine = engine_with({"S": 0.9}, {"S": 0.3})
    assert engine.evaluate_trust("S", TrustWeights(1.0, 0.0), 310.0).trust == 0.9
    assert engine.evaluate_trust("S", TrustWeights(0.0, 1.0), 310.0).trust == 0.3


def test_missing_factor_is_reported():
    engine = engine_with({"S": 0.9}, {})
    with pytest.raises(MissingFactor) as info:
        engine.evaluate_trust("S", TrustWeights(0.5, 0.5), 310.0)
    assert info.value.kind == "DataQuality"
    with pytest.raises(MissingFactor):
        engine_with({}, {"S": 0.3}).evaluate_trust("S", TrustWeights(0.5, 0.5), 310.0)


def test_stale_factor_counts_as_missing():
    engine = engine_with({"S": 0.9}, {"S": 0.3}, at=300.0, max_age=600.0)
    assert engine.evaluate_trust("S", TrustWeights(0.5, 0.5), 900.0).trust == pytest.approx(0.6)
    with pytest.raises(MissingFactor, match="stale"):
        engine.evaluate_trust("S", TrustWeights(0.5, 0.5), 900.5)
    no_guard = engine_with({"S": 0.9}, {"S": 0.3}, max_age=None)
    assert no_guard.evaluate_trust("S", TrustWeights(0.5, 0.5), 1e9).trust == pytest.approx(0.6)


def test_latest_level_wins():
    perfdb, edq = PerfDB(), EDQStore()
    perfdb.add(FactorLevel("S", FactorKind.PERFORMANCE, 0.2, 300.0))
    perfdb.add(FactorLevel("S", FactorKind.PERFORMANCE, 0.8, 600.0))
    edq.add(DataQualityLevel("S", 600.0, 0.5, 1.0, 0.5))
    engine = TrustEngine(perfdb.latest, edq.latest)
    assert engine.evaluate_trust("S", TrustWeights(1.0, 0.0), 600.0).trust == 0.8


def test_ranking_sorted_with_id_tie_break():
    engine = engine_with({"B": 0.5, "A": 0.5, "C": 0.9}, {"B": 0.5, "A": 0.5, "C": 0.1})
    ranking = engine.rank_services(["B", "C", "A"], TrustWeights(0.5, 0.5), 300.0)
    assert ranking.order == ["A", "B", "C"]
    ranking = engine.rank_services(["B", "C", "A"], TrustWeights(1.0, 0.0), 300.0)
    assert ranking.order == ["C", "A", "B"]
    assert [t for _, t in ranking.entries] == sorted((t for _, t in ranking.entries), reverse=True)


def test_ranking_omits_and_reports():
    engine = engine_with({"A": 0.5, "B": 0.7}, {"A": 0.5})
    ranking = rank_services(engine, ["A", "B", "C"], TrustWeights(0.5, 0.5), 300.0)
    assert ranking.order == ["A"]
    assert [sid for sid, _ in ranking.omitted] == ["B", "C"]


def test_empty_ranking():
    engine = engine_with({}, {})
    with pytest.raises(EmptyRanking) as info:
        engine.rank_services(["A", "B"], TrustWeights(0.5, 0.5), 0.0)
    assert [sid for sid, _ in info.value.omitted] == ["A", "B"]


def test_extreme_sweeps_sort_by_single_factor():
    perf = {"A": 0.9, "B": 0.6, "C": 0.3, "D": 0.75}
    dq = {"A": 0.1, "B": 0.8, "C": 0.4, "D": 0.2}
    engine = engine_with(perf, dq)
    low, high = engine.sweep(perf, [TrustWeights(1.0, 0.0), TrustWeights(0.0, 1.0)], 300.0)
    assert low.order == sorted(perf, key=lambda s: -perf[s])
    assert high.order == sorted(dq, key=lambda s: -dq[s])


def test_sweep_reads_each_factor_once():
    calls = []
    levels = {"A": 0.4, "B": 0.6}

    def source(kind):
        def read(sid):
            calls.append((kind, sid))
            return FactorLevel(sid, kind, levels[sid], 0.0)
        return read

    engine = TrustEngine(source(FactorKind.PERFORMANCE), source(FactorKind.DATA_QUALITY))
    rankings = engine.sweep(["A", "B"], [TrustWeights(a / 10, 1 - a / 10) for a in range(11)], 0.0)
    assert len(rankings) == 11
    assert len(calls) == 4
    assert len(engine.history.records()) == 22


def test_history_order_and_range():
    history = TrustHistory()
    engine = engine_with({"S": 0.9, "T": 0.1}, {"S": 0.3, "T": 0.1}, history=history)
    for t in (300.0, 400.0, 500.0, 600.0):
        engine.evaluate_trust("S", TrustWeights(0.5, 0.5), t)
        engine.evaluate_trust("T", TrustWeights(0.5, 0.5), t)
    records = trust_history(history, "S")
    assert [r.requested_at for r in records] == [300.0, 400.0, 500.0, 600.0]
    assert all(r.service_id == "S" for r in records)
    assert [r.requested_at for r in trust_history(history, "S", 400.0, 600.0)] == [400.0, 500.0]
    assert trust_history(history, "nobody") == []


def test_history_survives_restart_and_stays_consistent(tmp_path):
    path = str(tmp_path / "trust_history.log")
    history = TrustHistory(path)
    engine = engine_with({"S": 0.1 + 0.2, "T": 1 / 3}, {"S": 0.7, "T": 2 / 7}, history=history)
    engine.sweep(["S", "T"], [TrustWeights(a / 10, 1 - a / 10) for a in range(11)], 300.0)
    reloaded = TrustHistory(path)
    assert reloaded.records() == history.records()
    assert len(reloaded.records()) == 22
    assert reloaded.inconsistent() == []
    assert all(r.trust == r.recompute() for r in reloaded.records())


def test_tampered_record_is_inconsistent():
    history = TrustHistory()
    history.append(TrustRecord("S", 0.0, 0.5, 0.5, 0.9, 0.3, 0.61))
    assert len(history.inconsistent()) == 1


def test_report_shape():
    engine = engine_with({"A": 0.9, "B": 0.6}, {"A": 0.1}, at=300.0)
    report = trust_report(engine.rank_services(["A", "B"], TrustWeights(0.7, 0.3), 320.0))
    assert json.loads(json.dumps(report)) == report
    assert set(report) == {"requested_at", "weights", "ranking", "omitted"}
    assert report["weights"] == {"alpha": 0.7, "beta": 0.3}
    entry = report["ranking"][0]
    assert entry["rank"] == 1 and entry["service_id"] == "A"
    assert entry["trust"] == pytest.approx(0.66)
    assert entry["performance_evaluated_at"] == 300.0
    assert entry["data_quality_evaluated_at"] == 300.0
    assert report["omitted"][0]["service_id"] == "B"


def test_parse_weights():
    assert parse_weights("0.7", "0.3") == TrustWeights(0.7, 0.3)
    for alpha, beta in (("0.9", "0.3"), ("x", "0.5"), ("-0.5", "1.5")):
        with pytest.raises(InvalidInput):
            parse_weights(alpha, beta)
