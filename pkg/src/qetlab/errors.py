"""Exception hierarchy shared by all qetlab modules."""


class QetlabError(Exception):
    pass


class ConfigError(QetlabError):
    """Invalid model or run configuration (bad ranges, unknown options)."""


class PlacementError(ConfigError):
    """Party placement violates the separation rules."""


class NumericalError(QetlabError):
    """A numerical guarantee failed (solver residual, gap, realness check)."""


class DegenerateProtocolError(QetlabError):
    """Feedback angle undefined because xi = eta = 0."""
