"""Deterministic simulation of black-box data services.

A service produces timestamped items on one periodic schedule and inserts
(flushes) its buffer into the queryable store on another. Clients only see
flushed items, through :func:`handle_request`.

Service state is a pure function of time: every entry point first catches
the service up to the instant it is asked about, so the order in which
same-time events fire cannot change what a request observes.
"""

from __future__ import annotations

import enum
import heapq
import itertools
import logging
import random
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

from .errors import DuplicateServiceId, InvalidInput

logger = logging.getLogger(__name__)

DEFAULT_QUERY_LIMIT = 10
DEFAULT_MAX_TIER = 2


@dataclass(frozen=True)
class ServiceProfile:
    """Behaviour of one simulated service.

    Latencies are in milliseconds, periods in seconds. ``host`` names the
    server the service is deployed on; services sharing a host share its
    CPU and get proportionally slower. ``downtime`` lists ``(start, end)``
    windows, relative to the simulation start, during which every request
    is denied.
    """

    service_id: str
    production_period: float
    insertion_period: float
    accept_probability: float = 1.0
    success_probability_given_accept: float = 1.0
    base_latency: float = 0.0
    latency_jitter: float = 0.0
    cpu_tier: int = 1
    rng_seed: int = 0
    host: Optional[str] = None
    downtime: tuple = ()

    def __post_init__(self):
        if not self.service_id:
            raise InvalidInput("service_id must be non-empty")
        if not self.production_period > 0:
            raise InvalidInput(f"{self.service_id}: production_period must be > 0")
        if not self.insertion_period > 0:
            raise InvalidInput(f"{self.service_id}: insertion_period must be > 0")
        for name in ("accept_probability", "success_probability_given_accept"):
            p = getattr(self, name)
            if not (0.0 <= p <= 1.0):
                raise InvalidInput(f"{self.service_id}: {name} must be in [0, 1]")
        if self.base_latency < 0 or self.latency_jitter < 0:
            raise InvalidInput(f"{self.service_id}: latencies must be >= 0")
        if not (isinstance(self.cpu_tier, int) and self.cpu_tier >= 1):
            raise InvalidInput(f"{self.service_id}: cpu_tier must be a positive integer")
        for window in self.downtime:
            start, end = window
            if not start < end:
                raise InvalidInput(f"{self.service_id}: downtime window {window} is empty")


@dataclass(frozen=True)
class DataItem:
    item_id: str
    produced_at: float
    payload: float


@dataclass(frozen=True)
class EventRecord:
    time: float
    service_id: str
    kind: str
    detail: str = ""

    def to_line(self) -> str:
        return f"{self.time:.6f},{self.service_id},{self.kind},{self.detail}"


def format_event_log(events) -> str:
    return "".join(e.to_line() + "\n" for e in events)


class Outcome(str, enum.Enum):
    DENIED = "denied"
    FAILED = "failed"
    DATA = "data"


@dataclass(frozen=True)
class Response:
    outcome: Outcome
    requested_at: float
    latency: float = 0.0  # ms
    items: tuple = ()

    @property
    def delivered_at(self) -> float:
        return self.requested_at + self.latency / 1000.0


@dataclass(frozen=True)
class DataQuery:
    limit: int = DEFAULT_QUERY_LIMIT


@dataclass(order=True)
class _Event:
    due: float
    seq: int
    callback: Callable = field(compare=False)


class _Scheduler:
    """Event queue shared by the virtual and wall clocks.

    Events fire in due-time order; equal due times fire in insertion order.
    """

    def __init__(self, start: float = 0.0):
        self.start = start
        self._queue: list[_Event] = []
        self._seq = itertools.count()
        self._log: list[EventRecord] = []
        self._log_lock = threading.Lock()
        self.services: dict[str, "SimulatedService"] = {}

    @property
    def now(self) -> float:
        raise NotImplementedError

    def schedule(self, due: float, callback: Callable[[], None]) -> None:
        heapq.heappush(self._queue, _Event(due, next(self._seq), callback))

    def every(
        self,
        period: float,
        callback: Callable[[], None],
        first: Optional[float] = None,
        until: Optional[float] = None,
    ) -> None:
        """Fire ``callback`` at ``first``, ``first + period``, ... without drift, stopping before ``until``."""
        if not period > 0:
            raise InvalidInput(f"period must be > 0, got {period!r}")
        base = self.now + period if first is None else first
        counter = itertools.count(1)

        def fire():
            callback()
            due = base + next(counter) * period
            if until is None or due < until:
                self.schedule(due, fire)

        if until is None or base < until:
            self.schedule(base, fire)

    def record(self, when: float, service_id: str, kind: str, detail: str = "") -> None:
        with self._log_lock:
            self._log.append(EventRecord(when, service_id, kind, detail))

    @property
    def log(self) -> list[EventRecord]:
        with self._log_lock:
            return list(self._log)


class VirtualClock(_Scheduler):
    """Simulated time that only moves inside :meth:`run_until`."""

    def __init__(self, start: float = 0.0):
        super().__init__(start)
        self._now = start

    @property
    def now(self) -> float:
        return self._now

    def schedule(self, due: float, callback: Callable[[], None]) -> None:
        if due < self._now:
            raise InvalidInput(f"cannot schedule at {due!r}, clock is at {self._now!r}")
        super().schedule(due, callback)

    def run_until(self, t_end: float) -> list[EventRecord]:
        """Fire every event due at or before ``t_end`` and return what they logged."""
        if t_end < self._now:
            raise InvalidInput(f"t_end {t_end!r} is before now {self._now!r}")
        mark = len(self._log)
        while self._queue and self._queue[0].due <= t_end:
            event = heapq.heappop(self._queue)
            self._now = event.due
            event.callback()
        self._now = t_end
        return self._log[mark:]


class WallClock(_Scheduler):
    """Real time, optionally sped up, with a background thread firing events.

    ``speed`` is simulated seconds per wall second. ``start`` defaults to the
    current epoch second so item timestamps are real epoch times. Time stands
    still at ``start`` until :meth:`begin`.
    """

    def __init__(self, start: Optional[float] = None, speed: float = 1.0):
        if not speed > 0:
            raise InvalidInput("speed must be > 0")
        super().__init__(float(int(time.time())) if start is None else start)
        self.speed = speed
        self._origin: Optional[float] = None
        self._cond = threading.Condition()
        self._stopped = False
        self._thread: Optional[threading.Thread] = None

    @property
    def now(self) -> float:
        if self._origin is None:
            return self.start
        return self.start + (time.perf_counter() - self._origin) * self.speed

    def wall_delay(self, t: float) -> float:
        return max(0.0, (t - self.now) / self.speed)

    def schedule(self, due: float, callback: Callable[[], None]) -> None:
        with self._cond:
            super().schedule(due, callback)
            self._cond.notify()

    def begin(self) -> None:
        self._origin = time.perf_counter()
        self._thread = threading.Thread(target=self._loop, name="wall-clock", daemon=True)
        self._thread.start()

    def _loop(self) -> None:
        while True:
            with self._cond:
                if self._stopped:
                    return
                if not self._queue:
                    self._cond.wait()
                    continue
                delay = self.wall_delay(self._queue[0].due)
                if delay > 0:
                    self._cond.wait(delay)
                    continue
                event = heapq.heappop(self._queue)
            try:
                event.callback()
            except Exception:
                logger.exception("wall-clock event failed")

    def sleep_until(self, t: float) -> None:
        time.sleep(self.wall_delay(t))

    def stop(self) -> None:
        with self._cond:
            self._stopped = True
            self._cond.notify()
        if self._thread is not None:
            self._thread.join()


Clock = _Scheduler


class SimulatedService:
    """Runtime state of one spawned service. Create with :func:`spawn_service`."""

    def __init__(self, profile: ServiceProfile, clock: _Scheduler, max_tier: int):
        self.profile = profile
        self.clock = clock
        self.max_tier = max_tier
        self.lock = threading.Lock()
        self._rng = random.Random(profile.rng_seed)
        self._payload_rng = random.Random(f"{profile.rng_seed}:payload")
        self._buffer: list[DataItem] = []
        self._store: list[DataItem] = []
        self._produced = 0
        self._flushes = 0
        self._next_production = clock.start + profile.production_period
        self._next_flush = clock.start + profile.insertion_period

    @property
    def service_id(self) -> str:
        return self.profile.service_id

    @property
    def tier_multiplier(self) -> int:
        return self.max_tier + 1 - self.profile.cpu_tier

    @property
    def co_tenants(self) -> int:
        host = self.profile.host
        if host is None:
            return 1
        return sum(1 for s in self.clock.services.values() if s.profile.host == host)

    @property
    def produced_count(self) -> int:
        return self._produced

    @property
    def flush_count(self) -> int:
        return self._flushes

    def visible_items(self) -> list[DataItem]:
        return list(self._store)

    def advance_to(self, t: float) -> None:
        """Run production and insertion up to ``t``; production wins ties."""
        p = self.profile
        while True:
            if self._next_production <= t and self._next_production <= self._next_flush:
                self._produce(self._next_production)
                self._produced_at_next()
            elif self._next_flush <= t:
                self._flush(self._next_flush)
                self._flushes += 1
                self._next_flush = self.clock.start + (self._flushes + 1) * p.insertion_period
            else:
                return

    def _produced_at_next(self) -> None:
        self._next_production = self.clock.start + (self._produced + 1) * self.profile.production_period

    def _produce(self, at: float) -> None:
        self._produced += 1
        item = DataItem(
            item_id=f"{self.service_id}-{self._produced:06d}",
            produced_at=at,
            payload=round(36.6 + self._payload_rng.gauss(0.0, 0.4), 2),
        )
        self._buffer.append(item)
        self.clock.record(at, self.service_id, "produce", item.item_id)

    def _flush(self, at: float) -> None:
        moved = len(self._buffer)
        self._store.extend(self._buffer)
        self._buffer.clear()
        self.clock.record(at, self.service_id, "flush", f"items={moved}")

    def latency_for(self, jitter_draw: float) -> float:
        p = self.profile
        return p.base_latency * self.tier_multiplier * self.co_tenants + jitter_draw * p.latency_jitter

    def in_downtime(self, t: float) -> bool:
        rel = t - self.clock.start
        return any(start <= rel < end for start, end in self.profile.downtime)


def spawn_service(profile: ServiceProfile, clock: _Scheduler, max_tier: int = DEFAULT_MAX_TIER) -> SimulatedService:
    """Register a service on ``clock`` with its production and insertion events."""
    if profile.service_id in clock.services:
        raise DuplicateServiceId(profile.service_id)
    if profile.cpu_tier > max_tier:
        raise InvalidInput(f"{profile.service_id}: cpu_tier {profile.cpu_tier} exceeds max_tier {max_tier}")
    service = SimulatedService(profile, clock, max_tier)
    clock.services[profile.service_id] = service

    def tick():
        with service.lock:
            service.advance_to(clock.now)

    clock.every(profile.production_period, tick, first=clock.start + profile.production_period)
    clock.every(profile.insertion_period, tick, first=clock.start + profile.insertion_period)
    return service


def handle_request(service: SimulatedService, request: Optional[DataQuery] = None, at: Optional[float] = None) -> Response:
    """Serve one query; the response reflects the store at request time.

    Three draws are taken from the service generator on every request so the
    random stream stays aligned whatever the outcome.
    """
    request = request or DataQuery()
    with service.lock:
        at = service.clock.now if at is None else at
        service.advance_to(at)
        u_accept = service._rng.random()
        u_success = service._rng.random()
        u_jitter = service._rng.random()
        p = service.profile
        if service.in_downtime(at) or u_accept >= p.accept_probability:
            response = Response(Outcome.DENIED, at)
        else:
            latency = service.latency_for(u_jitter)
            if u_success >= p.success_probability_given_accept:
                response = Response(Outcome.FAILED, at, latency)
            else:
                items = tuple(reversed(service._store[-request.limit:])) if request.limit > 0 else ()
                response = Response(Outcome.DATA, at, latency, items)
    service.clock.record(
        at, service.service_id, "request",
        f"{response.outcome.value};latency_ms={response.latency:.3f};items={len(response.items)}",
    )
    return response


def run_until(clock: VirtualClock, t_end: float) -> list[EventRecord]:
    return clock.run_until(t_end)
