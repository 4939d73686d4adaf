"""
errors.py - Exception hierarchy for the percolation laboratory

Every exception carries the process exit code the CLI should return, the way
HTTP errors carry a status code.
"""


class LatticeLabError(Exception):
    """Base class for all errors raised by this project"""

    exit_code = 1


class ValidationError(LatticeLabError, ValueError):
    """Invalid input: flags, configuration values or arguments"""

    exit_code = 2


class DomainError(ValidationError):
    """A parameter lies outside the domain of the requested quantity"""


class PathValidationError(ValidationError):
    """A step sequence does not describe an oriented path"""


class CoordinateBoundsError(ValidationError):
    """A vertex lies beyond the coordinate bound declared for the run"""


class OutputExistsError(ValidationError):
    """An output file already exists and overwriting was not requested"""


class ResourceLimitError(LatticeLabError):
    """A computation would exceed its configured memory budget"""

    exit_code = 3

    def __init__(self, message: str, level: int = None, required_bytes: int = None, budget_bytes: int = None):
        super().__init__(message)
        self.level = level
        self.required_bytes = required_bytes
        self.budget_bytes = budget_bytes


class OracleCapError(ResourceLimitError):
    """Brute-force enumeration refused because the path count exceeds its cap"""
