"""Exception hierarchy shared by every module of the package."""


class QosTrustError(Exception):
    """Base class for all errors raised by qostrust."""


class InvalidInput(QosTrustError, ValueError):
    pass


class InvalidSLA(InvalidInput):
    """Expected response time is not strictly positive."""


class NoData(QosTrustError):
    """Nothing was observed, so no level can be computed."""


class InsufficientSamples(QosTrustError):
    pass


class NotFound(QosTrustError, LookupError):
    pass


class DuplicateServiceId(QosTrustError):
    pass


class MissingFactor(QosTrustError):
    def __init__(self, service_id, kind, reason="no level recorded"):
        self.service_id = service_id
        self.kind = kind
        self.reason = reason
        super().__init__(f"{service_id}: missing {kind} factor ({reason})")


class EmptyRanking(QosTrustError):
    def __init__(self, omitted=()):
        self.omitted = list(omitted)
        super().__init__("no service could be evaluated")


class ConfigError(QosTrustError):
    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class BindFailure(QosTrustError, OSError):
    pass
