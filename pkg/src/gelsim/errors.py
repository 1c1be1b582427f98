"""Exception hierarchy shared by all gelsim modules.

Every error raised on purpose by this package derives from SimulationError,
so callers (and the command line driver) can distinguish expected failures
from genuine bugs.
"""


class SimulationError(Exception):
    """Base class for all errors raised deliberately by gelsim."""


class ConfigError(SimulationError):
    """A parameter or input object violates a documented precondition."""


class InputRangeError(ConfigError):
    """A numeric argument lies outside its admissible range."""


class ParseError(SimulationError):
    """A file could not be decoded; the message states where parsing stopped."""


class ContentError(SimulationError):
    """A file decoded fine but its payload is unusable (e.g. an empty mesh)."""


class IntegrityError(SimulationError):
    """Stored data failed a checksum or cross-field consistency check."""


class CalibrationError(SimulationError):
    """Calibration input provided too little or contradictory information."""


class NumericalError(SimulationError):
    """A solver could not reach the requested accuracy; details in message."""
