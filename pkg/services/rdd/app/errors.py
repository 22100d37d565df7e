"""Exception hierarchy for the RD analysis service.

Every error carries the exit code the cli returns for it and the module it
was raised from, so failures can be reported with provenance.
"""

from typing import Optional


class RDDError(Exception):
    """Base error"""

    exit_code: int = 1

    def __init__(self, message: str, module: Optional[str] = None):
        super().__init__(message)
        self.message = message
        self.module = module

    def __str__(self) -> str:
        if self.module:
            return f"[{self.module}] {self.message}"
        return self.message


class ConfigError(RDDError, ValueError):
    exit_code = 2


class DataError(RDDError, ValueError):
    exit_code = 3


class NumericalError(RDDError, ArithmeticError):
    exit_code = 4


# Configuration / argument errors

class InvalidConfig(ConfigError):
    pass


class NonPositiveV(ConfigError):
    pass


class DomainError(ConfigError):
    """Argument outside the domain of a special function"""


# Data errors

class EmptyInput(DataError):
    pass


class NonFiniteValue(DataError):
    def __init__(self, subject_id: str, field: str, module: Optional[str] = None):
        super().__init__(f"Non-finite value in field '{field}' of subject '{subject_id}'", module)
        self.subject_id = subject_id
        self.field = field


class OneSidedDesign(DataError):
    pass


class RaggedCovariates(DataError):
    pass


class BasisMismatch(DataError):
    pass


class MissingColumn(DataError):
    def __init__(self, column: str, module: Optional[str] = None):
        super().__init__(f"Required column '{column}' is missing", module)
        self.column = column


class ParseError(DataError):
    def __init__(self, line: int, column: str, value: str, module: Optional[str] = None):
        super().__init__(f"Cannot parse '{value}' in column '{column}' at line {line}", module)
        self.line = line
        self.column = column


class DuplicateId(DataError):
    pass


class EmptySample(DataError):
    pass


class TraceTooShort(DataError):
    pass


class NoDraws(DataError):
    pass


class TooLarge(DataError):
    pass


class ReportWriteError(DataError):
    """The report file could not be written"""


# Numerical failures

class SolveFailure(NumericalError):
    pass


class NumericalBreakdown(NumericalError):
    pass


class ChainInconsistency(NumericalError):
    """Incremental log kernel drifted from a from-scratch recomputation"""
