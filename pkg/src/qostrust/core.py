"""Trust model arithmetic.

Every function here is pure: value types in, a float in [0, 1] out.
The monitoring modules (pmm, dqmm, tmm) call these and never re-derive
a formula themselves.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass
from typing import Optional

from .errors import InvalidInput, InvalidSLA, NoData

logger = logging.getLogger(__name__)

WEIGHT_TOLERANCE = 1e-9


def _check_unit(name: str, value: float) -> None:
    if not (0.0 <= value <= 1.0):
        raise InvalidInput(f"{name} must be in [0, 1], got {value!r}")


def _check_weights(names: tuple[str, ...], values: tuple[float, ...]) -> None:
    for name, value in zip(names, values):
        if math.isnan(value) or value < 0.0 or value > 1.0:
            raise InvalidInput(f"weight {name} must be in [0, 1], got {value!r}")
    total = math.fsum(values)
    if abs(total - 1.0) > WEIGHT_TOLERANCE:
        raise InvalidInput(
            f"weights {', '.join(names)} must sum to 1 (got {total!r})"
        )


@dataclass(frozen=True)
class TrustWeights:
    """Relative importance of performance (alpha) and data quality (beta)."""

    alpha: float
    beta: float

    def __post_init__(self):
        _check_weights(("alpha", "beta"), (self.alpha, self.beta))


@dataclass(frozen=True)
class PerformanceWeights:
    w_av: float
    w_tsr: float
    w_te: float

    def __post_init__(self):
        _check_weights(("w_av", "w_tsr", "w_te"), (self.w_av, self.w_tsr, self.w_te))

    @classmethod
    def equal(cls) -> "PerformanceWeights":
        return cls(1 / 3, 1 / 3, 1 / 3)


@dataclass(frozen=True)
class PerformanceInputs:
    """Request counters and response times gathered over one window.

    ``rt_mean`` is the mean response time (ms) of the successful requests;
    it is ``None`` when there were none.
    """

    n_total: int
    n_accepted: int
    n_success: int
    rt_mean: Optional[float]
    ert: float

    def __post_init__(self):
        if not (0 <= self.n_success <= self.n_accepted <= self.n_total):
            raise InvalidInput(
                "counts must satisfy 0 <= n_success <= n_accepted <= n_total, got "
                f"{self.n_success}, {self.n_accepted}, {self.n_total}"
            )
        if self.rt_mean is not None and not self.rt_mean >= 0:
            raise InvalidInput(f"rt_mean must be >= 0, got {self.rt_mean!r}")
        if not self.ert > 0:
            raise InvalidSLA(f"expected response time must be > 0, got {self.ert!r}")


@dataclass(frozen=True)
class TimelinessInputs:
    t_request: float
    t_produced: float
    validity_interval: float

    def __post_init__(self):
        if not self.validity_interval > 0:
            raise InvalidInput(
                f"validity_interval must be > 0, got {self.validity_interval!r}"
            )

    @property
    def t_min(self) -> float:
        return self.t_produced

    @property
    def t_max(self) -> float:
        return self.t_produced + self.validity_interval


class FactorKind(str, enum.Enum):
    PERFORMANCE = "Performance"
    DATA_QUALITY = "DataQuality"


@dataclass(frozen=True)
class FactorLevel:
    service_id: str
    kind: FactorKind
    value: float
    evaluated_at: float

    def __post_init__(self):
        _check_unit("factor level", self.value)


def availability(inputs: PerformanceInputs) -> float:
    """Fraction of submitted requests that the service accepted."""
    if inputs.n_total == 0:
        raise NoData("availability is undefined without any submitted request")
    return inputs.n_accepted / inputs.n_total


def task_success_ratio(inputs: PerformanceInputs) -> float:
    """Fraction of accepted requests that delivered data.

    A service that accepted nothing delivered nothing, so the ratio is 0.
    """
    if inputs.n_accepted == 0:
        return 0.0
    return inputs.n_success / inputs.n_accepted


def time_efficiency(inputs: PerformanceInputs) -> float:
    """Slack of the mean response time under the expected response time.

    Zero once the mean reaches the SLA bound, and zero when no request
    succeeded (there is no response time to speak of).
    """
    if not inputs.ert > 0:
        raise InvalidSLA(f"expected response time must be > 0, got {inputs.ert!r}")
    if inputs.rt_mean is None or inputs.rt_mean >= inputs.ert:
        return 0.0
    return 1.0 - inputs.rt_mean / inputs.ert


def performance(inputs: PerformanceInputs, weights: PerformanceWeights) -> float:
    av = availability(inputs)
    tsr = task_success_ratio(inputs)
    te = time_efficiency(inputs)
    value = weights.w_av * av + weights.w_tsr * tsr + weights.w_te * te
    # weights summing to 1 within 1e-9 can push the sum a hair outside [min, max]
    return min(max(value, min(av, tsr, te)), max(av, tsr, te))


def data_timeliness(inputs: TimelinessInputs) -> float:
    """Linear freshness decay of one item over its validity interval."""
    age = inputs.t_request - inputs.t_produced
    if age < 0:
        logger.warning(
            "clock skew: item produced at %r after request at %r; timeliness clamped to 1",
            inputs.t_produced,
            inputs.t_request,
        )
        return 1.0
    if inputs.t_request >= inputs.t_max:
        return 0.0
    return 1.0 - age / inputs.validity_interval


def database_timeliness(insertions_per_validity_interval: float) -> float:
    """Saturating score n/(n+1) of how often the store receives insertions."""
    n = insertions_per_validity_interval
    if math.isnan(n) or n < 0:
        raise InvalidInput(f"insertion count must be >= 0, got {n!r}")
    if math.isinf(n):
        return 1.0
    return n / (n + 1.0)


def data_quality(t_d: float, t_db: float) -> float:
    _check_unit("data timeliness", t_d)
    _check_unit("database timeliness", t_db)
    return t_d * t_db


def trust_index(performance: float, data_quality: float, weights: TrustWeights) -> float:
    _check_unit("performance", performance)
    _check_unit("data quality", data_quality)
    value = weights.alpha * performance + weights.beta * data_quality
    # rounding in the two products can leave the convex hull by one ulp
    return min(max(value, min(performance, data_quality)), max(performance, data_quality))
