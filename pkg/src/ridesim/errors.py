"""Exception hierarchy shared across the package."""


class RidesimError(Exception):
    """Base class for all errors raised by this package."""


class GraphParseError(RidesimError):
    """A graph CSV file is malformed; the message names file and row."""


class GraphValidationError(RidesimError):
    """A parsed graph violates an invariant (dangling edge, bad attribute,
    missing strong connectivity); the message names the offending element."""


class ConfigError(RidesimError):
    """A scenario or plan file is invalid.

    ``path`` is the JSON path of the offending element (e.g.
    ``platforms[0].commission_rate``), or the file path for file-level
    problems.
    """

    def __init__(self, path: str, message: str = ""):
        super().__init__(f"{message}: {path}" if message else path)
        self.path = path


class SimulationError(RidesimError):
    """Internal consistency failure during a run (an agent attempted an
    impossible transition). Always a bug signal, never normal output."""


class LogValidationError(RidesimError):
    """An event log failed replay validation."""
