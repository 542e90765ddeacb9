"""Exception hierarchy for the sequential net-effect toolkit.

The CLI maps these onto exit codes: input/syntax problems (ParseError,
DomainError, DgpError and plain I/O failures) exit 1, statistical problems
(EstimabilityError and friends, IdentifiabilityError, coverage failures,
diagnostic flags) exit 2.
"""


class SeqEffectsError(Exception):
    """Base class for every error raised by this package."""


class ParseError(SeqEffectsError):
    """Malformed input text: CSV rows, pattern files, DGP files."""


class DomainError(SeqEffectsError):
    """Syntactically valid input holding values outside the domain."""


class UsageError(SeqEffectsError):
    """An API precondition was violated by the caller."""


class EstimabilityError(SeqEffectsError):
    """A requested statistic is not estimable from the data at hand."""


class IncompletenessError(EstimabilityError):
    """An exact computation hit a missing mean or proportion entry."""


class IdentifiabilityError(SeqEffectsError):
    """The constraint system does not pin down the parameter vector."""

    def __init__(self, message: str, null_space=None):
        super().__init__(message)
        self.null_space = null_space


class PatternError(SeqEffectsError):
    """A pattern is malformed relative to the keys it is evaluated on."""


class CoverageError(PatternError):
    """A group-only pattern leaves some stratum unmatched."""


class DgpError(SeqEffectsError):
    """A data-generating rule set is inconsistent or non-positive."""


class DiagnosticError(SeqEffectsError):
    """A diagnostic routine cannot run on the supplied inputs."""
