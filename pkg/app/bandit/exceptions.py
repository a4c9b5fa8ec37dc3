"""Domain errors raised by the bandit and simulation code.

These never import Django so they can be raised inside worker processes.
app/exceptions.py maps them onto HTTP responses for the study service.
"""


class BanditError(Exception):
    """Root of all domain errors."""


class InvalidInputError(BanditError, ValueError):
    """Out-of-range probability, reward, user index or malformed array."""


class ConfigError(BanditError, ValueError):
    """Bad configuration file or value."""


class InvalidHyperparametersError(BanditError):
    """Hyperparameters violate positivity or make the objective undefined."""


class IllConditionedError(BanditError):
    """A symmetric solve failed; carries a condition-number diagnostic."""

    def __init__(self, message, condition_number=None):
        self.condition_number = condition_number
        if condition_number is not None:
            message = f"{message} (condition number ~ {condition_number:.3e})"
        super().__init__(message)
