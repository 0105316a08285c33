"""Scenario files.

A scenario is a TOML document::

    [scenario]
    name = "paper_scenario"
    duration = 3600            # seconds of simulated (or wall) time
    validity_interval = 60     # seconds an item stays fresh
    probe_period = 15
    sampling_period = 5
    evaluation_window = 300
    sample_limit = 10          # items requested per sample (optional)
    rng_seed = 2021
    max_tier = 2               # optional, defaults to the highest cpu_tier
    max_factor_age = 600       # optional, defaults to 2 evaluation windows

    [performance_weights]      # optional, defaults to equal weights
    availability = 0.3333333333333333
    task_success_ratio = 0.3333333333333333
    time_efficiency = 0.3333333333333334

    [trust]
    sweep = [[1.0, 0.0], [0.5, 0.5], [0.0, 1.0]]   # (alpha, beta) pairs

    [[services]]
    id = "S11"
    host = "smartphone"        # optional; co-hosted services share CPU
    cpu_tier = 1
    production_period = 5
    insertion_period = 20
    accept_probability = 0.98
    success_probability = 0.99
    base_latency_ms = 500
    latency_jitter_ms = 200
    sla_ert_ms = 4000
    probe_deadline_ms = 8000   # optional, defaults to 2 * sla_ert_ms
    rng_seed = 7               # optional, derived from the scenario seed
    downtime = [[600, 900]]    # optional, seconds after start
"""

from __future__ import annotations

import math
import random
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .core import PerformanceWeights, TrustWeights
from .errors import ConfigError, InvalidInput
from .sim import DEFAULT_QUERY_LIMIT, ServiceProfile

BUNDLED = ("paper_scenario",)


@dataclass(frozen=True)
class ServiceConfig:
    profile: ServiceProfile
    sla_ert: float  # ms
    probe_deadline: float  # ms


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    duration: float
    validity_interval: float
    probe_period: float
    sampling_period: float
    evaluation_window: float
    rng_seed: int
    performance_weights: PerformanceWeights
    sweep: tuple
    services: tuple
    sample_limit: int = DEFAULT_QUERY_LIMIT
    max_tier: int = 2
    max_factor_age: Optional[float] = None
    explicit_seeds: frozenset = field(default=frozenset(), compare=False)

    @property
    def service_ids(self) -> list[str]:
        return [s.profile.service_id for s in self.services]

    @property
    def factor_max_age(self) -> float:
        return 2 * self.evaluation_window if self.max_factor_age is None else self.max_factor_age

    def with_seed(self, seed: int) -> "ScenarioConfig":
        """Re-derive every service seed that the file did not pin explicitly."""
        services = tuple(
            s if s.profile.service_id in self.explicit_seeds
            else replace(s, profile=replace(s.profile, rng_seed=derive_seed(seed, s.profile.service_id)))
            for s in self.services
        )
        return replace(self, rng_seed=seed, services=services)


def derive_seed(seed: int, service_id: str) -> int:
    return random.Random(f"{seed}:{service_id}").getrandbits(64)


class _Locator:
    """Best-effort line numbers for fields, for error messages."""

    def __init__(self, text: str):
        self.lines = text.splitlines()

    def find(self, table: Optional[str], key: Optional[str], index: Optional[int] = None) -> Optional[int]:
        start = 0
        if table is not None:
            header = re.compile(rf"^\s*\[\[?\s*{re.escape(table)}\s*\]\]?\s*$")
            seen = -1
            for i, line in enumerate(self.lines):
                if header.match(line):
                    seen += 1
                    if index is None or seen == index:
                        start = i
                        break
            else:
                return None
            if key is None:
                return start + 1
        pattern = re.compile(rf"^\s*{re.escape(key)}\s*=")
        for i in range(start, len(self.lines)):
            if i > start and table is not None and self.lines[i].lstrip().startswith("["):
                break
            if pattern.match(self.lines[i]):
                return i + 1
        return None


class _Reader:
    def __init__(self, data: dict, path: str, table: Optional[str], locator: _Locator, index: Optional[int] = None):
        self.data = data
        self.table = table
        self.locator = locator
        self.index = index
        self.path = path

    def error(self, key: Optional[str], message: str) -> ConfigError:
        line = self.locator.find(self.table, key, self.index)
        return ConfigError(message, field=self.path + (f".{key}" if key else ""), line=line)

    def number(self, key: str, default=None, positive=False, nonneg=False, unit=False, required=True):
        if key not in self.data:
            if default is not None or not required:
                return default
            raise self.error(None, f"missing required field '{key}'")
        value = self.data[key]
        if isinstance(value, bool) or not isinstance(value, (int, float)) or math.isnan(value):
            raise self.error(key, f"expected a number, got {value!r}")
        value = float(value)
        if positive and not value > 0:
            raise self.error(key, f"must be > 0, got {value!r}")
        if nonneg and value < 0:
            raise self.error(key, f"must be >= 0, got {value!r}")
        if unit and not 0 <= value <= 1:
            raise self.error(key, f"must be in [0, 1], got {value!r}")
        return value

    def integer(self, key: str, default=None, minimum=None):
        if key not in self.data:
            if default is not None:
                return default
            raise self.error(None, f"missing required field '{key}'")
        value = self.data[key]
        if isinstance(value, bool) or not isinstance(value, int):
            raise self.error(key, f"expected an integer, got {value!r}")
        if minimum is not None and value < minimum:
            raise self.error(key, f"must be >= {minimum}, got {value!r}")
        return value

    def string(self, key: str, default=None):
        if key not in self.data:
            if default is not None:
                return default
            raise self.error(None, f"missing required field '{key}'")
        value = self.data[key]
        if not isinstance(value, str) or not value or "," in value:
            raise self.error(key, f"expected a non-empty string without commas, got {value!r}")
        return value

    def reject_unknown(self, known: set) -> None:
        for key in self.data:
            if key not in known:
                raise self.error(key, f"unknown field '{key}'")


def bundled_path(name: str):
    return resources.files("qostrust").joinpath("scenarios", f"{name}.toml")


def load_scenario(path_or_name: str) -> ScenarioConfig:
    """Load a scenario file, or a bundled scenario by name."""
    if path_or_name in BUNDLED:
        text = bundled_path(path_or_name).read_text()
    else:
        try:
            with open(path_or_name) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read scenario {path_or_name!r}: {exc}") from None
    return parse_scenario(text)


def parse_scenario(text: str) -> ScenarioConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"syntax error: {exc}", line=int(m.group(1)) if m else None) from None
    loc = _Locator(text)
    top = _Reader(doc, "", None, loc)
    top.reject_unknown({"scenario", "performance_weights", "trust", "services"})
    for key in ("scenario", "trust", "services"):
        if key not in doc:
            raise ConfigError(f"missing required section [{key}]", field=key)

    sc = _Reader(doc["scenario"], "scenario", "scenario", loc)
    sc.reject_unknown({"name", "duration", "validity_interval", "probe_period", "sampling_period",
                       "evaluation_window", "sample_limit", "rng_seed", "max_tier", "max_factor_age"})
    name = sc.string("name", default="scenario")
    duration = sc.number("duration", positive=True)
    validity = sc.number("validity_interval", positive=True)
    probe_period = sc.number("probe_period", positive=True)
    sampling_period = sc.number("sampling_period", positive=True)
    window = sc.number("evaluation_window", positive=True)
    sample_limit = sc.integer("sample_limit", default=DEFAULT_QUERY_LIMIT, minimum=1)
    seed = sc.integer("rng_seed", minimum=0)
    max_age = sc.number("max_factor_age", positive=True, required=False)
    if window < probe_period:
        raise sc.error("evaluation_window", "evaluation_window must be >= probe_period")
    if duration < window:
        raise sc.error("duration", f"duration {duration!r} is shorter than one evaluation window ({window!r}); "
                                   "no factor would ever be evaluated")

    pw_data = doc.get("performance_weights")
    if pw_data is None:
        perf_weights = PerformanceWeights.equal()
    else:
        pw = _Reader(pw_data, "performance_weights", "performance_weights", loc)
        pw.reject_unknown({"availability", "task_success_ratio", "time_efficiency"})
        try:
            perf_weights = PerformanceWeights(
                pw.number("availability", unit=True),
                pw.number("task_success_ratio", unit=True),
                pw.number("time_efficiency", unit=True),
            )
        except InvalidInput as exc:
            raise pw.error(None, str(exc)) from None

    tr = _Reader(doc["trust"], "trust", "trust", loc)
    tr.reject_unknown({"sweep"})
    raw_sweep = doc["trust"].get("sweep")
    if not isinstance(raw_sweep, list) or not raw_sweep:
        raise tr.error("sweep", "sweep must be a non-empty list of [alpha, beta] pairs")
    sweep = []
    for i, pair in enumerate(raw_sweep):
        if (not isinstance(pair, list) or len(pair) != 2
                or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in pair)):
            raise tr.error("sweep", f"sweep[{i}] must be a pair of numbers, got {pair!r}")
        try:
            sweep.append(TrustWeights(float(pair[0]), float(pair[1])))
        except InvalidInput as exc:
            raise tr.error("sweep", f"sweep[{i}]: {exc}") from None

    raw_services = doc["services"]
    if not isinstance(raw_services, list) or not raw_services:
        raise ConfigError("at least one [[services]] entry is required", field="services")
    services = []
    explicit = set()
    ids = set()
    for i, entry in enumerate(raw_services):
        r = _Reader(entry, f"services[{i}]", "services", loc, index=i)
        r.reject_unknown({"id", "host", "cpu_tier", "production_period", "insertion_period",
                          "accept_probability", "success_probability", "base_latency_ms",
                          "latency_jitter_ms", "sla_ert_ms", "probe_deadline_ms", "rng_seed", "downtime"})
        sid = r.string("id")
        if sid in ids:
            raise r.error("id", f"duplicate service id {sid!r}")
        ids.add(sid)
        if "rng_seed" in entry:
            explicit.add(sid)
        service_seed = r.integer("rng_seed", minimum=0) if "rng_seed" in entry else derive_seed(seed, sid)
        downtime = entry.get("downtime", [])
        if not isinstance(downtime, list) or any(
            not isinstance(w, list) or len(w) != 2 or not all(isinstance(v, (int, float)) for v in w) or not w[0] < w[1]
            for w in downtime
        ):
            raise r.error("downtime", "downtime must be a list of [start, end] pairs with start < end")
        sla = r.number("sla_ert_ms", positive=True)
        profile = ServiceProfile(
            service_id=sid,
            production_period=r.number("production_period", positive=True),
            insertion_period=r.number("insertion_period", positive=True),
            accept_probability=r.number("accept_probability", default=1.0, unit=True),
            success_probability_given_accept=r.number("success_probability", default=1.0, unit=True),
            base_latency=r.number("base_latency_ms", default=0.0, nonneg=True),
            latency_jitter=r.number("latency_jitter_ms", default=0.0, nonneg=True),
            cpu_tier=r.integer("cpu_tier", default=1, minimum=1),
            rng_seed=service_seed,
            host=r.string("host") if "host" in entry else None,
            downtime=tuple((float(a), float(b)) for a, b in downtime),
        )
        deadline = r.number("probe_deadline_ms", default=2 * sla, positive=True)
        services.append(ServiceConfig(profile, sla, deadline))

    highest = max(s.profile.cpu_tier for s in services)
    max_tier = sc.integer("max_tier", default=highest, minimum=1)
    if max_tier < highest:
        raise sc.error("max_tier", f"max_tier {max_tier} is below the highest cpu_tier {highest}")

    return ScenarioConfig(
        name=name,
        duration=duration,
        validity_interval=validity,
        probe_period=probe_period,
        sampling_period=sampling_period,
        evaluation_window=window,
        rng_seed=seed,
        performance_weights=perf_weights,
        sweep=tuple(sweep),
        services=tuple(services),
        sample_limit=sample_limit,
        max_tier=max_tier,
        max_factor_age=max_age,
        explicit_seeds=frozenset(explicit),
    )
