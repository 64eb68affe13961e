"""Exception hierarchy shared by the library and the CLI."""


class ThinlabError(Exception):
    """Base class for all thinlab errors."""


class ConfigError(ThinlabError, ValueError):
    """Malformed or inconsistent configuration / input file."""


class ScheduleError(ThinlabError, ValueError):
    """A management schedule that cannot be executed on the given stand."""


class EconomicsError(ThinlabError, ValueError):
    """Degenerate economic quantity (e.g. no capital at risk)."""


class MissingRunError(ThinlabError):
    """A report was requested for runs that do not exist."""
