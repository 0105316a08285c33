"""Data quality measurement for services seen only through their API.

The knowledge constructor samples each service periodically. Comparing the
item ids of a sample against every id seen before reveals insertions that
happened since the previous sample; counting the sampling instants at which
something new appeared gives an estimate of the update frequency. Item
timestamps give per-sample data timeliness.

Sample at most every half of the smallest insertion period you want to
resolve; coarser sampling merges consecutive insertions into one detection.
"""

from __future__ import annotations

import csv
import io
import math
import threading
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

from . import core
from .core import FactorKind, FactorLevel, TimelinessInputs
from .errors import InsufficientSamples, InvalidInput, NotFound
from .persist import AppendLog
from .sim import Outcome, Response

DEFAULT_SAMPLING_PERIOD = 5.0


@dataclass(frozen=True)
class SampleSnapshot:
    service_id: str
    requested_at: float
    sampled_at: float
    item_ids: frozenset
    new_item_ids: frozenset
    mean_item_timeliness: float
    miss: bool = False
    warmup: bool = False

    def __post_init__(self):
        if not self.new_item_ids <= self.item_ids:
            raise InvalidInput("new_item_ids must be a subset of item_ids")
        if not (0.0 <= self.mean_item_timeliness <= 1.0):
            raise InvalidInput("mean_item_timeliness must be in [0, 1]")


def mean_timeliness(items, t_request: float, validity_interval: float) -> float:
    """Average per-item timeliness; an empty sample carries no fresh data."""
    if not items:
        return 0.0
    return math.fsum(
        core.data_timeliness(TimelinessInputs(t_request, item.produced_at, validity_interval))
        for item in items
    ) / len(items)


class _ServiceKnowledge:
    def __init__(self):
        self.first_seen: dict[str, float] = {}
        self.snapshots: list[SampleSnapshot] = []
        self.warmup_at: Optional[float] = None


class KnowledgeBase:
    """Seen item ids and sample history, per service.

    Different services may be written from different threads; a single
    service is only ever written by its own sampler.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._services: dict[str, _ServiceKnowledge] = {}

    def _state(self, service_id: str) -> _ServiceKnowledge:
        with self._lock:
            return self._services.setdefault(service_id, _ServiceKnowledge())

    def record(self, service_id: str, response: Response, validity_interval: float, deadline_ms: Optional[float] = None) -> SampleSnapshot:
        """Turn one sampling response into a snapshot and fold it into the seen-set."""
        state = self._state(service_id)
        sampled_at = response.delivered_at
        late = deadline_ms is not None and response.latency > deadline_ms
        if response.outcome is not Outcome.DATA or late:
            snap = SampleSnapshot(service_id, response.requested_at, sampled_at, frozenset(), frozenset(), 0.0, miss=True)
        else:
            ids = frozenset(item.item_id for item in response.items)
            warmup = state.warmup_at is None
            new = frozenset() if warmup else frozenset(i for i in ids if i not in state.first_seen)
            snap = SampleSnapshot(
                service_id,
                response.requested_at,
                sampled_at,
                ids,
                new,
                mean_timeliness(response.items, sampled_at, validity_interval),
                warmup=warmup,
            )
            for item_id in sorted(ids - state.first_seen.keys()):
                state.first_seen[item_id] = sampled_at
            if warmup:
                state.warmup_at = response.requested_at
        with self._lock:
            state.snapshots.append(snap)
        return snap

    def service_ids(self) -> list[str]:
        with self._lock:
            return sorted(self._services)

    def warmup_at(self, service_id: str) -> Optional[float]:
        return self._state(service_id).warmup_at

    def seen(self, service_id: str) -> dict[str, float]:
        with self._lock:
            return dict(self._services[service_id].first_seen) if service_id in self._services else {}

    def snapshots(self, service_id: str, start: float = -math.inf, end: float = math.inf) -> tuple[SampleSnapshot, ...]:
        """Snapshots whose request instant falls in ``[start, end)``."""
        with self._lock:
            state = self._services.get(service_id)
            if state is None:
                return ()
            return tuple(s for s in state.snapshots if start <= s.requested_at < end)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["service_id", "requested_at", "sampled_at", "items", "new_items",
                         "mean_item_timeliness", "miss", "warmup"])
        for sid in self.service_ids():
            for s in self.snapshots(sid):
                writer.writerow([sid, repr(s.requested_at), repr(s.sampled_at), len(s.item_ids),
                                 len(s.new_item_ids), repr(s.mean_item_timeliness),
                                 str(s.miss).lower(), str(s.warmup).lower()])
        return buf.getvalue()


def take_sample(
    service_id: str,
    transport: Callable[[str], Response],
    kb: KnowledgeBase,
    validity_interval: float,
    deadline_ms: Optional[float] = None,
) -> SampleSnapshot:
    return kb.record(service_id, transport(service_id), validity_interval, deadline_ms)


def _post_warmup(kb: KnowledgeBase, service_id: str, start: float, end: float) -> tuple[SampleSnapshot, ...]:
    warm = kb.warmup_at(service_id)
    if warm is None:
        raise InsufficientSamples(f"{service_id}: warm-up sample not taken yet")
    if start < warm:
        raise InsufficientSamples(f"{service_id}: window starts at {start!r}, before warm-up at {warm!r}")
    return tuple(s for s in kb.snapshots(service_id, start, end) if not s.warmup)


def estimate_update_frequency(kb: KnowledgeBase, service_id: str, start: float, end: float) -> float:
    """Insertions per second: sampling instants that revealed new items, over the window length."""
    if not start < end:
        raise InvalidInput("window start must precede its end")
    samples = _post_warmup(kb, service_id, start, end)
    if len(samples) < 2:
        raise InsufficientSamples(f"{service_id}: {len(samples)} post-warm-up samples in window, need 2")
    detections = {s.requested_at for s in samples if s.new_item_ids}
    return len(detections) / (end - start)


@dataclass(frozen=True)
class DataQualityLevel:
    service_id: str
    evaluated_at: float
    t_d_avg: float
    t_db: float
    value: float

    def __post_init__(self):
        for name in ("t_d_avg", "t_db", "value"):
            if not (0.0 <= getattr(self, name) <= 1.0):
                raise InvalidInput(f"{name} must be in [0, 1]")
        if self.value != self.t_d_avg * self.t_db:
            raise InvalidInput("value must equal t_d_avg * t_db")

    @property
    def kind(self) -> FactorKind:
        return FactorKind.DATA_QUALITY

    def to_factor(self) -> FactorLevel:
        return FactorLevel(self.service_id, FactorKind.DATA_QUALITY, self.value, self.evaluated_at)


class EDQStore:
    """Evaluated data-quality levels. Line format: ``service_id,evaluated_at,t_d_avg,t_db,value``."""

    HEADER = ("service_id", "evaluated_at", "t_d_avg", "t_db", "value")

    def __init__(self, path: Optional[str] = None, fresh: bool = False):
        self._log = AppendLog(self.HEADER, path, fresh)

    @staticmethod
    def _parse(row) -> DataQualityLevel:
        return DataQualityLevel(row[0], float(row[1]), float(row[2]), float(row[3]), float(row[4]))

    def add(self, level: DataQualityLevel) -> None:
        self._log.append((level.service_id, float(level.evaluated_at), level.t_d_avg, level.t_db, level.value))

    def levels(self, service_id: Optional[str] = None) -> list[DataQualityLevel]:
        out = self._log.decode(self._parse)
        if service_id is not None:
            out = [lv for lv in out if lv.service_id == service_id]
        return out

    def latest(self, service_id: str) -> DataQualityLevel:
        candidates = self.levels(service_id)
        if not candidates:
            raise NotFound(f"no data-quality level recorded for {service_id}")
        return max(candidates, key=lambda lv: lv.evaluated_at)


def evaluate_data_quality(
    kb: KnowledgeBase,
    service_id: str,
    start: float,
    end: float,
    validity_interval: float,
    edq: Optional[EDQStore] = None,
) -> DataQualityLevel:
    if not validity_interval > 0:
        raise InvalidInput("validity_interval must be > 0")
    samples = [s for s in _post_warmup(kb, service_id, start, end) if not s.miss]
    if not samples:
        raise InsufficientSamples(f"{service_id}: no usable sample in [{start}, {end})")
    t_d_avg = math.fsum(s.mean_item_timeliness for s in samples) / len(samples)
    t_d_avg = min(t_d_avg, 1.0)
    frequency = estimate_update_frequency(kb, service_id, start, end)
    t_db = core.database_timeliness(frequency * validity_interval)
    level = DataQualityLevel(service_id, end, t_d_avg, t_db, core.data_quality(t_d_avg, t_db))
    if edq is not None:
        edq.add(level)
    return level


class DataQualityMonitor:
    """Knowledge constructor: samples every target on a fixed period."""

    def __init__(
        self,
        targets: Iterable[str],
        transport: Callable[[str], Response],
        kb: KnowledgeBase,
        validity_interval: float,
        deadlines_ms: Optional[dict] = None,
        executor=None,
    ):
        self.targets = list(targets)
        self.transport = transport
        self.kb = kb
        self.validity_interval = validity_interval
        self.deadlines_ms = deadlines_ms or {}
        self.executor = executor

    def sample(self, service_id: str) -> SampleSnapshot:
        return take_sample(service_id, self.transport, self.kb, self.validity_interval,
                           self.deadlines_ms.get(service_id))

    def sample_all(self) -> None:
        for sid in self.targets:
            if self.executor is None:
                self.sample(sid)
            else:
                self.executor.submit(self.sample, sid)


def schedule_sampling(
    monitor: DataQualityMonitor,
    clock,
    sampling_period: float = DEFAULT_SAMPLING_PERIOD,
    first: Optional[float] = None,
    until: Optional[float] = None,
) -> None:
    """Sample every target from ``first`` (default ``clock.start``) every ``sampling_period`` seconds."""
    if not sampling_period > 0:
        raise InvalidInput("sampling_period must be > 0")
    clock.every(sampling_period, monitor.sample_all,
                first=clock.start if first is None else first, until=until)
