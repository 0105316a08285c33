"""Performance measurement: probing, the time-series store and PerfDB."""

from __future__ import annotations

import bisect
import csv
import io
import math
import threading
from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

from . import core
from .core import FactorKind, FactorLevel, PerformanceInputs, PerformanceWeights
from .errors import InvalidInput, NoData, NotFound
from .persist import AppendLog
from .sim import Outcome, Response

DEFAULT_PROBE_PERIOD = 15.0
DEFAULT_EVALUATION_WINDOW = 300.0
PROBE_CSV_HEADER = ("service_id", "probed_at", "accepted", "success", "response_time_ms")


@dataclass(frozen=True)
class ProbeRecord:
    service_id: str
    probed_at: float
    accepted: bool
    success: bool
    response_time: Optional[float] = None  # ms

    def __post_init__(self):
        if self.success and not self.accepted:
            raise InvalidInput("a successful probe must have been accepted")
        if (self.response_time is not None) != self.success:
            raise InvalidInput("response_time is present exactly when the probe succeeded")


def classify(service_id: str, response: Response, deadline_ms: Optional[float] = None) -> ProbeRecord:
    """Map a service response to a probe record.

    A response slower than the consumer deadline counts as accepted but failed.
    """
    if response.outcome is Outcome.DENIED:
        return ProbeRecord(service_id, response.requested_at, False, False)
    if response.outcome is Outcome.FAILED:
        return ProbeRecord(service_id, response.requested_at, True, False)
    if deadline_ms is not None and response.latency > deadline_ms:
        return ProbeRecord(service_id, response.requested_at, True, False)
    return ProbeRecord(service_id, response.requested_at, True, True, response.latency)


class TimeSeriesStore:
    """Append-only probe records per service, ordered by ``probed_at``.

    One writer, many readers; reads return immutable snapshots.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._records: dict[str, list[ProbeRecord]] = defaultdict(list)
        self._times: dict[str, list[float]] = defaultdict(list)

    def append(self, record: ProbeRecord) -> None:
        with self._lock:
            times = self._times[record.service_id]
            if times and record.probed_at < times[-1]:
                raise InvalidInput(
                    f"{record.service_id}: probe at {record.probed_at!r} is older than the last stored one"
                )
            times.append(record.probed_at)
            self._records[record.service_id].append(record)

    def service_ids(self) -> list[str]:
        with self._lock:
            return sorted(self._records)

    def records(self, service_id: str, start: float = -math.inf, end: float = math.inf) -> tuple[ProbeRecord, ...]:
        """Records with ``start <= probed_at < end``."""
        with self._lock:
            times = self._times.get(service_id, [])
            lo = bisect.bisect_left(times, start)
            hi = bisect.bisect_left(times, end)
            return tuple(self._records[service_id][lo:hi])

    def window(self, service_id: str, start: float, end: float) -> "ObservationWindow":
        return ObservationWindow(start, end, self.records(service_id, start, end))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(PROBE_CSV_HEADER)
        for sid in self.service_ids():
            for r in self.records(sid):
                writer.writerow([
                    r.service_id,
                    repr(r.probed_at),
                    "true" if r.accepted else "false",
                    "true" if r.success else "false",
                    "" if r.response_time is None else repr(r.response_time),
                ])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TimeSeriesStore":
        store = cls()
        reader = csv.DictReader(io.StringIO(text))
        if tuple(reader.fieldnames or ()) != PROBE_CSV_HEADER:
            raise InvalidInput(f"unexpected probe CSV header {reader.fieldnames!r}")
        for row in reader:
            rt = row["response_time_ms"]
            store.append(ProbeRecord(
                row["service_id"],
                float(row["probed_at"]),
                row["accepted"] == "true",
                row["success"] == "true",
                float(rt) if rt else None,
            ))
        return store


@dataclass(frozen=True)
class ObservationWindow:
    window_start: float
    window_end: float
    records: tuple = ()

    def __post_init__(self):
        if not self.window_start < self.window_end:
            raise InvalidInput("window_start must precede window_end")
        for r in self.records:
            if not (self.window_start <= r.probed_at < self.window_end):
                raise InvalidInput(f"probe at {r.probed_at!r} lies outside the window")


def aggregate(records: Iterable[ProbeRecord], ert: float) -> PerformanceInputs:
    """Counters and mean response time (over successes) for a set of probes."""
    n_total = n_accepted = n_success = 0
    rt_sum = 0.0
    for r in records:
        n_total += 1
        n_accepted += r.accepted
        if r.success:
            n_success += 1
            rt_sum += r.response_time
    rt_mean = rt_sum / n_success if n_success else None
    return PerformanceInputs(n_total, n_accepted, n_success, rt_mean, ert)


class PerfDB:
    """Performance levels keyed by service and evaluation time.

    Line format: ``service_id,evaluated_at,value``.
    """

    HEADER = ("service_id", "evaluated_at", "value")

    def __init__(self, path: Optional[str] = None, fresh: bool = False):
        self._log = AppendLog(self.HEADER, path, fresh)

    @staticmethod
    def _parse(row) -> FactorLevel:
        return FactorLevel(row[0], FactorKind.PERFORMANCE, float(row[2]), float(row[1]))

    def add(self, level: FactorLevel) -> None:
        if level.kind is not FactorKind.PERFORMANCE:
            raise InvalidInput("PerfDB only stores performance levels")
        self._log.append((level.service_id, float(level.evaluated_at), float(level.value)))

    def levels(self, service_id: Optional[str] = None) -> list[FactorLevel]:
        out = self._log.decode(self._parse)
        if service_id is not None:
            out = [lv for lv in out if lv.service_id == service_id]
        return out

    def latest(self, service_id: str) -> FactorLevel:
        candidates = self.levels(service_id)
        if not candidates:
            raise NotFound(f"no performance level recorded for {service_id}")
        return max(candidates, key=lambda lv: lv.evaluated_at)


def evaluate_performance(
    store: TimeSeriesStore,
    service_id: str,
    window: ObservationWindow,
    sla_ert: float,
    weights: PerformanceWeights,
    perfdb: Optional[PerfDB] = None,
) -> FactorLevel:
    """Evaluate one service over ``window`` and persist the level to ``perfdb``."""
    records = store.records(service_id, window.window_start, window.window_end)
    if not records:
        raise NoData(f"{service_id}: no probes in [{window.window_start}, {window.window_end})")
    inputs = aggregate(records, sla_ert)
    level = FactorLevel(
        service_id,
        FactorKind.PERFORMANCE,
        core.performance(inputs, weights),
        window.window_end,
    )
    if perfdb is not None:
        perfdb.add(level)
    return level


class PerformanceMonitor:
    """Probes every target on a fixed period and appends to the store.

    ``transport(service_id)`` performs one request and returns a
    :class:`~qostrust.sim.Response`. With an ``executor`` probes run
    asynchronously (wall-clock mode); otherwise inline.
    """

    def __init__(
        self,
        targets: Iterable[str],
        transport: Callable[[str], Response],
        store: TimeSeriesStore,
        deadlines_ms: Optional[dict] = None,
        executor=None,
    ):
        self.targets = list(targets)
        self.transport = transport
        self.store = store
        self.deadlines_ms = deadlines_ms or {}
        self.executor = executor
        self._append_lock = threading.Lock()

    def probe(self, service_id: str) -> ProbeRecord:
        response = self.transport(service_id)
        record = classify(service_id, response, self.deadlines_ms.get(service_id))
        with self._append_lock:
            self.store.append(record)
        return record

    def probe_all(self) -> None:
        for sid in self.targets:
            if self.executor is None:
                self.probe(sid)
            else:
                self.executor.submit(self.probe, sid)


def schedule_probes(
    monitor: PerformanceMonitor,
    clock,
    probe_period: float = DEFAULT_PROBE_PERIOD,
    until: Optional[float] = None,
) -> None:
    """Probe every target at ``clock.start``, then every ``probe_period`` seconds until ``until``."""
    if not probe_period > 0:
        raise InvalidInput("probe_period must be > 0")
    clock.every(probe_period, monitor.probe_all, first=clock.start, until=until)
