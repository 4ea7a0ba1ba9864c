"""Exception hierarchy shared by all modules."""


class MarketModelError(ValueError):
    """Base class for every error raised by this package."""


class InvalidParameterError(MarketModelError):
    pass


class InvalidScheduleError(MarketModelError):
    pass


class WrongRegimeError(MarketModelError):
    """Operation called with a flow distribution of the wrong kind."""


class NoEquilibriumError(MarketModelError):
    pass


class UnsupportedDistributionError(MarketModelError):
    pass


class InconsistentStateError(MarketModelError):
    """Inventories do not aggregate to the stated total."""


class InvalidConstantsError(MarketModelError):
    """Schedule constants violate the admissibility conditions."""


class AdmissibilityError(MarketModelError):
    """A deviation policy leaves the admissible control set."""


class HorizonTooShortError(MarketModelError):
    pass


class RankDeficiencyError(MarketModelError):
    pass


class ConfigurationError(MarketModelError):
    """Bad configuration. ``violations`` lists every problem found."""

    def __init__(self, message, violations=None):
        super().__init__(message)
        self.violations = list(violations or [message])
