"""Trust measuring: collectors, trust engine, trust history and rankings."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from . import core
from .core import FactorKind, FactorLevel, TrustWeights
from .errors import EmptyRanking, InvalidInput, MissingFactor, NotFound
from .persist import AppendLog


@dataclass(frozen=True)
class TrustRecord:
    service_id: str
    requested_at: float
    alpha: float
    beta: float
    performance: float
    data_quality: float
    trust: float
    performance_evaluated_at: Optional[float] = field(default=None, compare=False)
    data_quality_evaluated_at: Optional[float] = field(default=None, compare=False)

    def recompute(self) -> float:
        return core.trust_index(self.performance, self.data_quality, TrustWeights(self.alpha, self.beta))

    def is_consistent(self) -> bool:
        return self.trust == self.recompute()


class TrustHistory:
    """Every trust evaluation ever made, in request order.

    Line format: ``service_id,requested_at,alpha,beta,performance,data_quality,trust``.
    """

    HEADER = ("service_id", "requested_at", "alpha", "beta", "performance", "data_quality", "trust")

    def __init__(self, path: Optional[str] = None, fresh: bool = False):
        self._log = AppendLog(self.HEADER, path, fresh)

    @staticmethod
    def _parse(row) -> TrustRecord:
        return TrustRecord(row[0], *(float(v) for v in row[1:]))

    def append(self, record: TrustRecord) -> None:
        self._log.append((
            record.service_id, float(record.requested_at), float(record.alpha), float(record.beta),
            float(record.performance), float(record.data_quality), float(record.trust),
        ))

    def records(self, service_id: Optional[str] = None, start: float = -math.inf, end: float = math.inf) -> list[TrustRecord]:
        """Records for ``service_id`` (all services if None) with ``start <= requested_at < end``."""
        out = [
            r for r in self._log.decode(self._parse)
            if (service_id is None or r.service_id == service_id) and start <= r.requested_at < end
        ]
        out.sort(key=lambda r: r.requested_at)
        return out

    def inconsistent(self) -> list[TrustRecord]:
        return [r for r in self.records() if not r.is_consistent()]


def trust_history(history: TrustHistory, service_id: str, start: float = -math.inf, end: float = math.inf) -> list[TrustRecord]:
    return history.records(service_id, start, end)


@dataclass(frozen=True)
class Ranking:
    requested_at: float
    weights: TrustWeights
    records: tuple  # TrustRecords, best first
    omitted: tuple = ()  # (service_id, reason)

    @property
    def entries(self) -> list[tuple[str, float]]:
        return [(r.service_id, r.trust) for r in self.records]

    @property
    def order(self) -> list[str]:
        return [r.service_id for r in self.records]


class TrustEngine:
    """Combines the latest performance and data-quality levels on demand.

    ``performance_source`` and ``quality_source`` map a service id to its
    latest :class:`FactorLevel` and raise :class:`NotFound` when there is
    none. Levels older than ``max_age`` seconds at request time are treated
    as missing.
    """

    def __init__(
        self,
        performance_source: Callable[[str], FactorLevel],
        quality_source: Callable[[str], FactorLevel],
        history: Optional[TrustHistory] = None,
        max_age: Optional[float] = 2 * 300.0,
    ):
        self.performance_source = performance_source
        self.quality_source = quality_source
        self.history = history if history is not None else TrustHistory()
        self.max_age = max_age

    def _collect(self, service_id: str, kind: FactorKind, source, at: float) -> FactorLevel:
        try:
            level = source(service_id)
        except NotFound:
            raise MissingFactor(service_id, kind.value) from None
        if hasattr(level, "to_factor"):
            level = level.to_factor()
        if self.max_age is not None and at - level.evaluated_at > self.max_age:
            raise MissingFactor(service_id, kind.value, f"stale, evaluated at {level.evaluated_at!r}")
        return level

    def snapshot(self, service_id: str, at: float) -> tuple[FactorLevel, FactorLevel]:
        """Read both latest levels once."""
        perf = self._collect(service_id, FactorKind.PERFORMANCE, self.performance_source, at)
        dq = self._collect(service_id, FactorKind.DATA_QUALITY, self.quality_source, at)
        return perf, dq

    @staticmethod
    def _score(service_id: str, perf: FactorLevel, dq: FactorLevel, weights: TrustWeights, at: float) -> TrustRecord:
        return TrustRecord(
            service_id, at, weights.alpha, weights.beta, perf.value, dq.value,
            core.trust_index(perf.value, dq.value, weights),
            perf.evaluated_at, dq.evaluated_at,
        )

    def evaluate_trust(self, service_id: str, weights: TrustWeights, at: float) -> TrustRecord:
        perf, dq = self.snapshot(service_id, at)
        record = self._score(service_id, perf, dq, weights, at)
        self.history.append(record)
        return record

    def rank_services(self, service_ids: Iterable[str], weights: TrustWeights, at: float) -> Ranking:
        return self.sweep(service_ids, [weights], at)[0]

    def sweep(self, service_ids: Iterable[str], weight_list, at: float) -> list[Ranking]:
        """Rank the same factor snapshot under each weighting in turn.

        Services without usable factors are left out and reported in
        ``Ranking.omitted``.
        """
        weight_list = list(weight_list)
        snapshots = {}
        omitted = []
        for sid in service_ids:
            try:
                snapshots[sid] = self.snapshot(sid, at)
            except MissingFactor as exc:
                omitted.append((sid, str(exc)))
        if not snapshots:
            raise EmptyRanking(omitted)
        rankings = []
        for weights in weight_list:
            records = []
            for sid in sorted(snapshots):
                perf, dq = snapshots[sid]
                record = self._score(sid, perf, dq, weights, at)
                self.history.append(record)
                records.append(record)
            records.sort(key=lambda r: (-r.trust, r.service_id))
            rankings.append(Ranking(at, weights, tuple(records), tuple(omitted)))
        return rankings


def rank_services(engine: TrustEngine, service_ids, weights: TrustWeights, at: float) -> Ranking:
    return engine.rank_services(service_ids, weights, at)


def trust_report(ranking: Ranking) -> dict:
    """JSON-ready trust report for one ranking.

    Shape::

        {"requested_at": float,
         "weights": {"alpha": float, "beta": float},
         "ranking": [{"rank", "service_id", "trust", "performance",
                      "data_quality", "performance_evaluated_at",
                      "data_quality_evaluated_at"}, ...],
         "omitted": [{"service_id", "reason"}, ...]}
    """
    return {
        "requested_at": ranking.requested_at,
        "weights": {"alpha": ranking.weights.alpha, "beta": ranking.weights.beta},
        "ranking": [
            {
                "rank": i,
                "service_id": r.service_id,
                "trust": r.trust,
                "performance": r.performance,
                "data_quality": r.data_quality,
                "performance_evaluated_at": r.performance_evaluated_at,
                "data_quality_evaluated_at": r.data_quality_evaluated_at,
            }
            for i, r in enumerate(ranking.records, start=1)
        ],
        "omitted": [{"service_id": sid, "reason": reason} for sid, reason in ranking.omitted],
    }


def parse_weights(alpha, beta) -> TrustWeights:
    try:
        return TrustWeights(float(alpha), float(beta))
    except (TypeError, ValueError) as exc:
        raise InvalidInput(str(exc)) from None
