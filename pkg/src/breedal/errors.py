"""Exception types shared across the package."""


class BreedalError(Exception):
    """Base class for all package errors."""


class ConfigError(BreedalError, ValueError):
    pass


class NonConvergence(BreedalError):
    pass


class OutOfBounds(BreedalError, ValueError):
    pass


class ShapeMismatch(BreedalError, ValueError):
    pass


class NonFiniteLoss(BreedalError, FloatingPointError):
    pass


class NotReady(BreedalError):
    pass


class DegenerateWeights(BreedalError, ValueError):
    pass


class NoCompletedSimulations(BreedalError):
    pass


class UnknownSim(BreedalError, KeyError):
    pass


class MalformedMessage(BreedalError, ValueError):
    pass


class DegenerateInput(BreedalError, ValueError):
    pass


class MissingArtifacts(BreedalError, FileNotFoundError):
    pass
