"""Exception hierarchy shared by every module.

Each class carries a short ``category`` string that the CLI prints as the
machine-parseable first token of its one-line error report.
"""


class PixCouplerError(Exception):
    category = "error"


class DomainError(PixCouplerError, ValueError):
    """Input outside the domain of an operation."""

    category = "domain"


class InfiniteLengthError(DomainError):
    """Equal mode propagation constants: no finite maximum-coupling length."""

    category = "domain"


class SolverError(PixCouplerError, RuntimeError):
    """Laplace solve failed to reach its residual target."""

    category = "solver"

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ExtractionError(PixCouplerError, RuntimeError):
    category = "extraction"


class FitnessEvaluationError(PixCouplerError, RuntimeError):
    """A fitness call raised; ``particle`` is the swarm index when known."""

    category = "fitness"

    def __init__(self, message, particle=None, workdir=None):
        super().__init__(message)
        self.particle = particle
        self.workdir = workdir


class ExternalSolverError(FitnessEvaluationError):
    category = "external"


class ExternalTimeoutError(ExternalSolverError):
    category = "timeout"


class FormatError(PixCouplerError, ValueError):
    """Malformed PBM, Touchstone, CSV, checkpoint or config text."""

    category = "format"

    def __init__(self, message, line=None, path=None):
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)
        self.line = line
        self.path = path


class ConfigError(PixCouplerError, ValueError):
    category = "config"
