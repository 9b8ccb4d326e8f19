from typing import Iterable, List, Optional


EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG_ERROR = 2
EXIT_RUNTIME_ERROR = 3


class LabException(Exception):
    """Base exception; carries a human-readable detail and a CLI exit code."""

    exit_code: int = EXIT_RUNTIME_ERROR

    def __init__(self, detail: str, exit_code: Optional[int] = None):
        super().__init__(detail)
        self.detail = detail
        if exit_code is not None:
            self.exit_code = exit_code


class ConfigParseError(LabException):
    """Exception raised when the experiment file is not valid YAML."""

    def __init__(self, path: str, line: Optional[int], problem: str):
        self.path = path
        self.line = line
        where = f"{path}:{line}" if line is not None else path
        super().__init__(f"Cannot parse {where}: {problem}", EXIT_CONFIG_ERROR)


class ConfigValidationError(LabException):
    """Exception raised when an experiment config violates one or more rules."""

    def __init__(self, violations: Iterable[str]):
        self.violations: List[str] = list(violations)
        detail = "Invalid experiment config:\n" + "\n".join(
            f"  - {v}" for v in self.violations
        )
        super().__init__(detail, EXIT_CONFIG_ERROR)


class InvalidParameterError(LabException):
    """Exception raised for an argument outside an operation's domain."""

    def __init__(self, detail: str):
        super().__init__(detail, EXIT_CONFIG_ERROR)


class GridMismatchError(LabException):
    """Exception raised when fields from different grids are combined."""

    def __init__(self, expected: object, got: object):
        super().__init__(
            f"Grid mismatch: expected {expected}, got {got}", EXIT_CONFIG_ERROR
        )


class TemperednessError(LabException):
    """Exception raised when a forcing or family leaves the tempered universe."""

    def __init__(self, detail: str):
        super().__init__(detail, EXIT_CONFIG_ERROR)


class StabilityError(LabException):
    """Exception raised when the imex step violates dt * alpha3 <= 1/2."""

    def __init__(self, dt: float, alpha3: float):
        self.dt = dt
        self.alpha3 = alpha3
        super().__init__(
            f"imex stability margin violated: dt * alpha3 = {dt * alpha3:g} > 0.5",
            EXIT_CONFIG_ERROR,
        )


class SolverError(LabException):
    """Exception raised when time integration fails at a given time."""

    def __init__(self, detail: str, time: Optional[float] = None):
        self.time = time
        if time is not None:
            detail = f"{detail} (t = {time:.17g})"
        super().__init__(detail, EXIT_RUNTIME_ERROR)


class BlowUpError(SolverError):
    """Exception raised when a step produces non-finite samples."""

    def __init__(self, time: float):
        super().__init__("Non-finite values in solution", time)


class NewtonConvergenceError(SolverError):
    """Exception raised when the implicit step's Newton iteration stalls."""

    def __init__(self, time: float, iterations: int, residual: float):
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            f"Newton did not converge after {iterations} iterations "
            f"(residual {residual:.3e})",
            time,
        )


class ArtifactError(LabException):
    """Exception raised for missing or unreadable artifacts."""

    def __init__(self, detail: str, missing: Optional[Iterable[str]] = None):
        self.missing: List[str] = list(missing or [])
        if self.missing:
            detail = detail + ": " + ", ".join(self.missing)
        super().__init__(detail, EXIT_RUNTIME_ERROR)
