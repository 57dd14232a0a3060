"""Exception types shared across the package."""


class RcpError(Exception):
    """Base class for all rcpfluid errors."""


class DomainError(RcpError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class HistoryUnderflow(RcpError, LookupError):
    """A delayed lookup reached back before the stored rate history."""


class TopologyError(RcpError, ValueError):
    """The network layout does not fit the requested reduction."""


class BracketError(RcpError, ValueError):
    """A root bracket does not actually straddle a sign change."""


class GainTooLarge(RcpError, ValueError):
    """The small-gain product kappa * T_bar * f(0) is not below one."""


class NonContractive(RcpError, RuntimeError):
    """The envelope recursion failed to contract although the global
    condition holds; indicates an implementation bug."""


class ConfigError(RcpError, ValueError):
    """A simulation configuration violates its preconditions."""


class ParseError(RcpError, ValueError):
    """A scenario or sweep file could not be parsed."""


class ValidationError(RcpError, ValueError):
    """A parsed object violates a structural invariant; the message
    names the offending field."""
