"""Exception hierarchy shared by every module."""


class SSAIPWError(Exception):
    """Base class; the CLI maps any subclass to a nonzero exit status."""

    kind = "error"


class ConfigurationError(SSAIPWError, ValueError):
    kind = "configuration"


class DataError(SSAIPWError, ValueError):
    kind = "data"


class EstimandError(SSAIPWError, ValueError):
    """Sample cannot support the requested estimand (e.g. no unlabeled rows)."""

    kind = "estimand"


class SolverError(SSAIPWError, ArithmeticError):
    kind = "solver"


class DegenerateFitError(SSAIPWError, ArithmeticError):
    kind = "degenerate_fit"


class RankError(SSAIPWError, ArithmeticError):
    kind = "rank"


class EstimationError(SSAIPWError, ArithmeticError):
    kind = "estimation"


class ParseError(DataError):
    """Malformed input file; the message carries the offending row number."""

    kind = "parse"
