"""QoS-based trust evaluation for data services observed as black boxes."""

from .core import (
    FactorKind,
    FactorLevel,
    PerformanceInputs,
    PerformanceWeights,
    TimelinessInputs,
    TrustWeights,
    availability,
    data_quality,
    data_timeliness,
    database_timeliness,
    performance,
    task_success_ratio,
    time_efficiency,
    trust_index,
)
from .errors import (
    ConfigError,
    EmptyRanking,
    InsufficientSamples,
    InvalidInput,
    InvalidSLA,
    MissingFactor,
    NoData,
    NotFound,
    QosTrustError,
)

__version__ = "0.1.0"
