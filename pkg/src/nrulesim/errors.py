"""Exception hierarchy shared by every module."""


class NRulesError(Exception):
    pass


class ArgumentError(NRulesError, ValueError):
    pass


class StructureError(NRulesError):
    """Unknown ids, grid mismatches, malformed component sets."""


class InvariantViolation(NRulesError):
    pass


class RuleViolation(NRulesError):
    """A reduction rule would be broken (e.g. a realized component chosen by the trigger)."""


class NumericalError(NRulesError):
    pass


class StepTooLargeError(NRulesError):
    """Total hazard per step exceeds the guard; the caller must subdivide dt."""


class ConfigError(NRulesError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))
