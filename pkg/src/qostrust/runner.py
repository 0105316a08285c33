"""Scenario driver: builds the testbed and the monitors, runs, writes reports.

Output directory layout after ``run_scenario``::

    trust_report_a<alpha>_b<beta>.json   one per sweep point
    summary.csv / summary.json           rank rows x sweep columns of service ids
    probes.csv                           every probe record
    samples.csv                          every sample snapshot
    perfdb.log, edq.log, trust_history.log
    events.log                           simulator event log (virtual mode)
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from contextlib import ExitStack
from dataclasses import dataclass, field
from typing import Optional

from .config import ScenarioConfig
from .dqmm import DataQualityMonitor, EDQStore, KnowledgeBase, evaluate_data_quality, schedule_sampling
from .errors import EmptyRanking, InsufficientSamples, NoData, QosTrustError
from .gateway import HttpTransport, in_process_transport, serve_service, serve_trust_api
from .pmm import (ObservationWindow, PerfDB, PerformanceMonitor, TimeSeriesStore,
                  evaluate_performance, schedule_probes)
from .sim import VirtualClock, WallClock, format_event_log, spawn_service
from .tmm import Ranking, TrustEngine, TrustHistory, trust_report

logger = logging.getLogger(__name__)


@dataclass
class Detect:
    """The monitoring side of a run: stores, monitors and trust engine."""

    config: ScenarioConfig
    clock: object
    store: TimeSeriesStore
    perfdb: PerfDB
    kb: KnowledgeBase
    edq: EDQStore
    engine: TrustEngine
    performance_monitor: Optional[PerformanceMonitor] = None
    quality_monitor: Optional[DataQualityMonitor] = None
    evaluation_errors: list = field(default_factory=list)

    def evaluate_window(self, start: float, end: float) -> None:
        cfg = self.config
        for svc in cfg.services:
            sid = svc.profile.service_id
            window = ObservationWindow(start, end)
            try:
                evaluate_performance(self.store, sid, window, svc.sla_ert, cfg.performance_weights, self.perfdb)
            except NoData as exc:
                self.evaluation_errors.append((end, sid, str(exc)))
            try:
                evaluate_data_quality(self.kb, sid, start, end, cfg.validity_interval, self.edq)
            except InsufficientSamples as exc:
                self.evaluation_errors.append((end, sid, str(exc)))


def _build_detect(config: ScenarioConfig, clock, transport, out_dir: Optional[str], executor=None,
                  warmed_up: bool = False) -> Detect:
    """Wire stores and monitors to ``clock``; probing and sampling stop at the end of the run.

    With ``warmed_up`` the caller has already taken the sample at ``clock.start``.
    """

    def path(name):
        return os.path.join(out_dir, name) if out_dir else None

    deadlines = {s.profile.service_id: s.probe_deadline for s in config.services}
    store = TimeSeriesStore()
    perfdb = PerfDB(path("perfdb.log"), fresh=True)
    kb = KnowledgeBase()
    edq = EDQStore(path("edq.log"), fresh=True)
    history = TrustHistory(path("trust_history.log"), fresh=True)
    engine = TrustEngine(perfdb.latest, edq.latest, history, max_age=config.factor_max_age)
    pm = PerformanceMonitor(config.service_ids, transport, store, deadlines, executor)
    dm = DataQualityMonitor(config.service_ids, transport, kb, config.validity_interval, deadlines, executor)
    end = clock.start + config.duration
    schedule_probes(pm, clock, config.probe_period, until=end)
    first_sample = clock.start + config.sampling_period if warmed_up else clock.start
    schedule_sampling(dm, clock, config.sampling_period, first=first_sample, until=end)
    return Detect(config, clock, store, perfdb, kb, edq, engine, pm, dm)


def _schedule_evaluations(detect: Detect, clock, settle: float = 0.0) -> list[float]:
    """Tumbling windows from the start; a trailing partial window is included."""
    cfg = detect.config
    start = clock.start
    ends = []
    t = start + cfg.evaluation_window
    while t <= start + cfg.duration:
        ends.append(t)
        t += cfg.evaluation_window
    if not ends or ends[-1] < start + cfg.duration:
        ends.append(start + cfg.duration)
    prev = start
    for end in ends:
        clock.schedule(end + settle, lambda s=prev, e=end: detect.evaluate_window(s, e))
        prev = end
    return ends


@dataclass
class RunResult:
    config: ScenarioConfig
    detect: Detect
    rankings: list
    requested_at: float
    events: list = field(default_factory=list)
    files: list = field(default_factory=list)


def weights_label(weights) -> str:
    return f"alpha={weights.alpha:g}/beta={weights.beta:g}"


def report_filename(weights) -> str:
    return f"trust_report_a{weights.alpha:g}_b{weights.beta:g}.json"


def summary_table(rankings: list[Ranking]) -> dict:
    """Rank rows by sweep columns, each cell a service id ("" past a column's end)."""
    columns = [weights_label(r.weights) for r in rankings]
    depth = max((len(r.records) for r in rankings), default=0)
    rows = []
    for i in range(depth):
        rows.append([r.order[i] if i < len(r.records) else "" for r in rankings])
    return {"columns": columns, "rows": rows}


def summary_csv(summary: dict) -> str:
    lines = [",".join(["rank"] + summary["columns"])]
    for i, row in enumerate(summary["rows"], start=1):
        lines.append(",".join([str(i)] + row))
    return "\n".join(lines) + "\n"


def report_csv(report: dict) -> str:
    header = ["rank", "service_id", "trust", "performance", "data_quality"]
    lines = [",".join(header)]
    for entry in report["ranking"]:
        lines.append(",".join([str(entry["rank"]), entry["service_id"]]
                              + [repr(entry[k]) for k in header[2:]]))
    return "\n".join(lines) + "\n"


def dumps(doc) -> str:
    return json.dumps(doc, indent=2) + "\n"


def export(doc: dict, fmt: str, path: str) -> str:
    """Write a trust report or a summary as JSON or CSV."""
    if fmt == "json":
        text = dumps(doc)
    elif fmt == "csv":
        text = summary_csv(doc) if "columns" in doc else report_csv(doc)
    else:
        raise ValueError(f"unknown export format {fmt!r}")
    with open(path, "w") as fh:
        fh.write(text)
    return path


def _write_outputs(result: RunResult, out_dir: str) -> None:
    files = []

    def write(name, text):
        p = os.path.join(out_dir, name)
        with open(p, "w") as fh:
            fh.write(text)
        files.append(p)

    for ranking in result.rankings:
        write(report_filename(ranking.weights), dumps(trust_report(ranking)))
    summary = summary_table(result.rankings)
    write("summary.json", dumps(summary))
    write("summary.csv", summary_csv(summary))
    write("probes.csv", result.detect.store.to_csv())
    write("samples.csv", result.detect.kb.to_csv())
    if result.events:
        write("events.log", format_event_log(result.events))
    result.files = files


def _sweep(detect: Detect, at: float) -> list[Ranking]:
    try:
        return detect.engine.sweep(detect.config.service_ids, detect.config.sweep, at)
    except EmptyRanking as exc:
        logger.warning("no service could be ranked: %s", exc.omitted)
        return [Ranking(at, w, (), tuple(exc.omitted)) for w in detect.config.sweep]


def run_virtual(config: ScenarioConfig, out_dir: Optional[str] = None) -> RunResult:
    clock = VirtualClock(start=0.0)
    services = {s.profile.service_id: spawn_service(s.profile, clock, config.max_tier) for s in config.services}
    transport = in_process_transport(services, clock, config.sample_limit)
    detect = _build_detect(config, clock, transport, out_dir)
    _schedule_evaluations(detect, clock)
    events = clock.run_until(clock.start + config.duration)
    at = clock.now
    result = RunResult(config, detect, _sweep(detect, at), at, events)
    if out_dir:
        _write_outputs(result, out_dir)
    return result


def run_wall(
    config: ScenarioConfig,
    out_dir: Optional[str] = None,
    host: str = "127.0.0.1",
    trust_port: Optional[int] = None,
    speed: float = 1.0,
) -> RunResult:
    """Run over real HTTP endpoints in (optionally accelerated) wall time."""
    clock = WallClock(speed=speed)
    services = {s.profile.service_id: spawn_service(s.profile, clock, config.max_tier) for s in config.services}
    with ExitStack() as stack:
        endpoints = {sid: stack.enter_context(serve_service(svc, host)) for sid, svc in services.items()}
        timeouts = {s.profile.service_id: s.probe_deadline for s in config.services}
        transport = HttpTransport({sid: ep.url for sid, ep in endpoints.items()}, clock,
                                  config.sample_limit, timeouts)
        executor = stack.enter_context(ThreadPoolExecutor(max_workers=4 * len(services) + 4))
        # Warm up while the clock still stands at its start, so the first
        # evaluation window does not begin before warm-up completes.
        detect = _build_detect(config, clock, transport, out_dir, executor, warmed_up=True)
        for sid in config.service_ids:
            detect.quality_monitor.sample(sid)
        if trust_port is not None:
            api = stack.enter_context(serve_trust_api(detect.engine, config.service_ids, clock, host, trust_port))
            logger.info("trust API at %s/trust/ranking", api.url)
        settle = max(s.probe_deadline for s in config.services) / 1000.0 * speed
        _schedule_evaluations(detect, clock, settle)
        end = clock.start + config.duration + settle
        clock.begin()
        try:
            clock.sleep_until(end)
            clock.sleep_until(end + 0.05 * speed)
        finally:
            clock.stop()
        executor.shutdown(wait=True)
        at = clock.start + config.duration
        result = RunResult(config, detect, _sweep(detect, at), at, clock.log)
    if out_dir:
        _write_outputs(result, out_dir)
    return result


def run_scenario(config: ScenarioConfig, mode: str = "virtual", out_dir: Optional[str] = None, **wall_options) -> RunResult:
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    if mode == "virtual":
        return run_virtual(config, out_dir)
    if mode == "wall":
        return run_wall(config, out_dir, **wall_options)
    raise QosTrustError(f"unknown mode {mode!r}")
