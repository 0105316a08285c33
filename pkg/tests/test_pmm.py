import statistics
import threading

import pytest

from qostrust import core
from qostrust.core import FactorKind, FactorLevel, PerformanceWeights
from qostrust.errors import InvalidInput, NoData, NotFound
from qostrust.gateway import in_process_transport
from qostrust.pmm import (
    ObservationWindow,
    PerfDB,
    PerformanceMonitor,
    ProbeRecord,
    TimeSeriesStore,
    aggregate,
    classify,
    evaluate_performance,
    schedule_probes,
)
from qostrust.sim import Outcome, Response, ServiceProfile, VirtualClock, spawn_service

EQUAL = PerformanceWeights.equal()


def probed_testbed(profiles, duration, probe_period=15.0, deadlines=None):
    clock = VirtualClock()
    services = {p.service_id: spawn_service(p, clock) for p in profiles}
    store = TimeSeriesStore()
    monitor = PerformanceMonitor(services, in_process_transport(services, clock), store, deadlines)
    schedule_probes(monitor, clock, probe_period)
    clock.run_until(duration)
    return store


def svc(sid="S", **kw):
    base = dict(service_id=sid, production_period=5, insertion_period=20, base_latency=40, cpu_tier=2)
    base.update(kw)
    return ServiceProfile(**base)


def test_probe_schedule_yields_twenty_records_per_window():
    store = probed_testbed([svc("A"), svc("B")], 600)
    for sid in ("A", "B"):
        assert len(store.window(sid, 0, 300).records) == 20
        assert len(store.window(sid, 300, 600).records) == 20


def test_denied_response_mapping():
    record = classify("S", Response(Outcome.DENIED, 3.0))
    assert (record.accepted, record.success, record.response_time) == (False, False, None)


def test_failed_response_mapping():
    record = classify("S", Response(Outcome.FAILED, 3.0, 12.0))
    assert (record.accepted, record.success, record.response_time) == (True, False, None)


def test_response_slower_than_deadline_is_accepted_but_failed():
    # 900 ms latency against a 400 ms consumer deadline
    store = probed_testbed([svc(base_latency=900)], 60, deadlines={"S": 400.0})
    records = store.records("S")
    assert records and all(r.accepted and not r.success for r in records)
    store = probed_testbed([svc(base_latency=300)], 60, deadlines={"S": 400.0})
    assert all(r.success for r in store.records("S"))


def test_probe_record_invariants():
    with pytest.raises(InvalidInput):
        ProbeRecord("S", 0.0, accepted=False, success=True, response_time=1.0)
    with pytest.raises(InvalidInput):
        ProbeRecord("S", 0.0, accepted=True, success=True)
    with pytest.raises(InvalidInput):
        ProbeRecord("S", 0.0, accepted=True, success=False, response_time=5.0)


def synthetic_store(sid="S", start=0.0):
    # 20 probes: 4 denied, 2 failed, 14 successes averaging 100 ms
    store = TimeSeriesStore()
    times = [start + 15 * i for i in range(20)]
    rts = [80.0, 120.0] * 7
    for i, t in enumerate(times):
        if i < 4:
            store.append(ProbeRecord(sid, t, False, False))
        elif i < 6:
            store.append(ProbeRecord(sid, t, True, False))
        else:
            store.append(ProbeRecord(sid, t, True, True, rts[i - 6]))
    return store


def test_evaluate_performance_arithmetic_chain():
    store = synthetic_store()
    inputs = aggregate(store.records("S"), 400.0)
    assert (inputs.n_total, inputs.n_accepted, inputs.n_success, inputs.rt_mean) == (20, 16, 14, 100.0)
    assert core.availability(inputs) == 0.8
    assert core.task_success_ratio(inputs) == 0.875
    assert core.time_efficiency(inputs) == 0.75
    db = PerfDB()
    level = evaluate_performance(store, "S", ObservationWindow(0, 300), 400.0, EQUAL, db)
    assert level.value == pytest.approx((0.8 + 0.875 + 0.75) / 3, abs=1e-12)
    assert level.value == pytest.approx(0.8083333333333332, abs=1e-12)
    assert (level.kind, level.evaluated_at) == (FactorKind.PERFORMANCE, 300)
    assert db.latest("S") == level


def test_dead_service_end_to_end_has_zero_performance():
    store = probed_testbed([svc(accept_probability=0.0)], 300)
    records = store.window("S", 0, 300).records
    assert len(records) == 20
    inputs = aggregate(records, 400.0)
    assert core.availability(inputs) == 0.0
    assert core.task_success_ratio(inputs) == 0.0
    assert core.time_efficiency(inputs) == 0.0
    assert evaluate_performance(store, "S", ObservationWindow(0, 300), 400.0, EQUAL).value == 0.0


def test_empty_window_is_no_data():
    with pytest.raises(NoData):
        evaluate_performance(TimeSeriesStore(), "S", ObservationWindow(0, 300), 400.0, EQUAL)


def test_solo_tier2_service_outperforms_tier1_services():
    profiles = [svc("S31", base_latency=500, host="sos")]
    profiles += [svc(f"S1{i}", base_latency=500, cpu_tier=1, host="phone", rng_seed=i) for i in range(3)]
    store = probed_testbed(profiles, 600)
    levels = {p.service_id: evaluate_performance(store, p.service_id, ObservationWindow(300, 600), 4000.0, EQUAL).value
              for p in profiles}
    assert all(levels["S31"] > levels[f"S1{i}"] for i in range(3))


def test_window_concatenation_sums_counts():
    profiles = [svc(accept_probability=0.7, success_probability_given_accept=0.8, latency_jitter=50, rng_seed=3)]
    store = probed_testbed(profiles, 900)
    a = aggregate(store.records("S", 0, 300), 400.0)
    b = aggregate(store.records("S", 300, 600), 400.0)
    ab = aggregate(store.records("S", 0, 600), 400.0)
    assert ab.n_total == a.n_total + b.n_total
    assert ab.n_accepted == a.n_accepted + b.n_accepted
    assert ab.n_success == a.n_success + b.n_success
    weighted = (a.rt_mean * a.n_success + b.rt_mean * b.n_success) / (a.n_success + b.n_success)
    assert ab.rt_mean == pytest.approx(weighted, rel=1e-12)


def test_time_efficiency_is_delegated_to_core():
    store = synthetic_store()
    level = evaluate_performance(store, "S", ObservationWindow(0, 300), 400.0, PerformanceWeights(0, 0, 1))
    assert level.value == core.time_efficiency(aggregate(store.records("S"), 400.0))


def test_lower_availability_never_raises_mean_performance():
    def mean_perf(accept):
        store = probed_testbed([svc(accept_probability=accept, latency_jitter=20, rng_seed=9)], 3000)
        return statistics.mean(
            evaluate_performance(store, "S", ObservationWindow(s, s + 300), 400.0, EQUAL).value
            for s in range(0, 3000, 300)
        )

    values = [mean_perf(a) for a in (1.0, 0.9, 0.7, 0.5, 0.2, 0.0)]
    assert values == sorted(values, reverse=True)


def test_latest_performance_wins_by_time():
    db = PerfDB()
    db.add(FactorLevel("S", FactorKind.PERFORMANCE, 0.4, 600.0))
    db.add(FactorLevel("S", FactorKind.PERFORMANCE, 0.9, 300.0))
    assert db.latest("S").value == 0.4
    with pytest.raises(NotFound):
        db.latest("unknown")


def test_perfdb_survives_restart(tmp_path):
    path = str(tmp_path / "perfdb.log")
    db = PerfDB(path)
    levels = [FactorLevel("S", FactorKind.PERFORMANCE, v, t) for v, t in ((1 / 3, 300.0), (0.1 + 0.2, 600.0))]
    for lv in levels:
        db.add(lv)
    assert PerfDB(path).levels() == levels
    assert (tmp_path / "perfdb.log").read_text().splitlines()[0] == "service_id,evaluated_at,value"


def test_concurrent_reader_never_sees_partial_levels():
    db = PerfDB()
    stop = threading.Event()
    errors = []

    def writer():
        for i in range(3000):
            db.add(FactorLevel("S", FactorKind.PERFORMANCE, (i % 100) / 100, float(i)))
        stop.set()

    def reader():
        while not stop.is_set():
            try:
                lv = db.latest("S")
                assert 0 <= lv.value <= 1 and lv.value == (int(lv.evaluated_at) % 100) / 100
            except NotFound:
                pass
            except Exception as exc:  # pragma: no cover - reported below
                errors.append(exc)

    threads = [threading.Thread(target=writer)] + [threading.Thread(target=reader) for _ in range(3)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
    assert db.latest("S").evaluated_at == 2999.0


def test_store_rejects_out_of_order_append():
    store = TimeSeriesStore()
    store.append(ProbeRecord("S", 10.0, True, True, 1.0))
    with pytest.raises(InvalidInput):
        store.append(ProbeRecord("S", 5.0, True, True, 1.0))


def test_window_bounds_are_half_open():
    with pytest.raises(InvalidInput):
        ObservationWindow(0, 300, (ProbeRecord("S", 300.0, False, False),))
    store = synthetic_store()
    assert len(store.window("S", 0, 285).records) == 19


def test_probe_csv_export_round_trip():
    store = synthetic_store()
    text = store.to_csv()
    lines = text.splitlines()
    assert lines[0] == "service_id,probed_at,accepted,success,response_time_ms"
    assert lines[1] == "S,0.0,false,false,"
    assert TimeSeriesStore.from_csv(text).records("S") == store.records("S")
