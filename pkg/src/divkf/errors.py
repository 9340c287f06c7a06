"""Exception types raised by the filters and the experiment harness."""


class FilterError(Exception):
    """Base class for numerical failures inside a filter step."""


class NotPositiveDefinite(FilterError):
    pass


class DegenerateEnsemble(FilterError):
    pass


class SingularPoint(FilterError):
    """Measurement Jacobian undefined at the requested state."""


class WeightCollapse(FilterError):
    pass


class DomainError(ValueError):
    pass


class ConfigError(ValueError):
    pass
