class ContractError(ValueError):
    """A numerical precondition (unitarity, orthonormality) does not hold."""


class CapabilityError(RuntimeError):
    """The request exceeds what the dense engine is built to handle."""


class MissingCacheError(RuntimeError):
    """A required cached artifact (forward cache, checkpoint, run file) is missing."""


class TrainingDiverged(RuntimeError):
    pass


class ConfigError(ValueError):
    """Invalid configuration. ``field`` holds the dotted path of the offending entry."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")
