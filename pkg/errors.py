"""
Exception hierarchy and diagnostics shared by every stage of the checker.

Parsers are total and report problems as Diagnostic values; builders,
the simulator, the monitors and the analyses raise subclasses of SmcError.
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

from enum_compat import StrEnum


class Severity(StrEnum):
    ERROR = "error"
    WARNING = "warning"


@dataclass(frozen=True)
class Diagnostic:
    """A located message produced by a parser or validator."""
    severity: Severity
    line: int
    column: int
    message: str
    code: Optional[str] = None

    @property
    def is_error(self) -> bool:
        return self.severity == Severity.ERROR

    def __str__(self) -> str:
        tag = f" [{self.code}]" if self.code else ""
        return f"{self.line}:{self.column}: {self.severity}{tag}: {self.message}"


def has_errors(diagnostics: Sequence[Diagnostic]) -> bool:
    return any(d.is_error for d in diagnostics)


class SmcError(Exception):
    """Base class for every error the checker reports to the user."""


# Model core

class ModelError(SmcError):
    pass


class PathNotFound(ModelError):
    def __init__(self, path: Sequence[str], segment: str):
        self.path = tuple(path)
        self.segment = segment
        super().__init__(f"path '{'.'.join(self.path)}' not found: no element named '{segment}'")


class VanishedInstance(PathNotFound):
    """A quantifier-bound instance no longer exists in the state being read."""


class TypeMismatch(ModelError):
    pass


class ClosedSystem(ModelError):
    def __init__(self, operation: str):
        self.operation = operation
        super().__init__(f"cannot {operation}: the system is closed")


class DuplicateName(ModelError):
    def __init__(self, name: str, parent: Sequence[str]):
        self.name = name
        self.parent = tuple(parent)
        where = '.'.join(self.parent) or "<root>"
        super().__init__(f"'{name}' already exists under {where}")


# Expressions and random variables

class EvaluationError(SmcError):
    pass


class DivisionByZero(EvaluationError):
    pass


class InvalidParameters(EvaluationError):
    def __init__(self, variable: str, reason: str):
        self.variable = variable
        super().__init__(f"random variable '{variable}': {reason}")


# Simulation kernel

class SimulationError(SmcError):
    pass


class NegativeRate(SimulationError):
    def __init__(self, command_id: str, rate: float):
        self.command_id = command_id
        self.rate = rate
        super().__init__(f"command '{command_id}' has negative rate {rate}")


class AllRatesZero(SimulationError):
    def __init__(self, command_ids: Sequence[str]):
        self.command_ids = tuple(command_ids)
        super().__init__(f"all enabled commands have rate 0: {', '.join(self.command_ids)}")


class CommandFailed(SimulationError):
    """Evaluating a command's guard, rate or actions raised an error."""

    def __init__(self, command_id: str, part: str, cause: Exception):
        self.command_id = command_id
        self.part = part
        self.cause = cause
        super().__init__(f"command '{command_id}' {part} failed: {cause}")


class ActionFailed(CommandFailed):
    def __init__(self, command_id: str, cause: Exception):
        super().__init__(command_id, "actions", cause)


# Descriptor

class ModelBuildError(SmcError):
    def __init__(self, message: str, diagnostics: Sequence[Diagnostic] = ()):
        self.diagnostics: Tuple[Diagnostic, ...] = tuple(diagnostics)
        super().__init__(message)


class CyclicInit(ModelBuildError):
    def __init__(self, type_name: str, attribute: str, referenced: str):
        self.type_name = type_name
        self.attribute = attribute
        self.referenced = referenced
        super().__init__(
            f"{type_name}.{attribute}: init refers to '{referenced}', which is not initialized yet")


# Contracts

class ContractError(SmcError):
    def __init__(self, message: str, diagnostics: Sequence[Diagnostic] = ()):
        self.diagnostics: Tuple[Diagnostic, ...] = tuple(diagnostics)
        super().__init__(message)


class ContractSyntaxError(ContractError):
    pass


class UnknownPattern(ContractError):
    pass


class UnboundBinder(ContractError):
    pass


class ContractTypeError(ContractError):
    pass


class HorizonTooSmall(ContractError):
    def __init__(self, horizon: int, bound: int):
        self.horizon = horizon
        self.bound = bound
        super().__init__(f"horizon {horizon} is smaller than the pattern bound {bound}")


# Properties and monitors

class PropertyError(SmcError):
    pass


class PropertySyntaxError(PropertyError):
    def __init__(self, message: str, diagnostics: Sequence[Diagnostic] = ()):
        self.diagnostics: Tuple[Diagnostic, ...] = tuple(diagnostics)
        super().__init__(message)


class UnknownPath(PropertyError):
    def __init__(self, path: Sequence[str]):
        self.path = tuple(path)
        super().__init__(f"unknown path '{'.'.join(self.path)}'")


class UnknownComponentType(PropertyError):
    def __init__(self, type_name: str):
        self.type_name = type_name
        super().__init__(f"unknown component type '{type_name}'")


class PropertyTypeError(PropertyError):
    pass


class OutOfOrderState(PropertyError):
    def __init__(self, expected: int, received: int):
        self.expected = expected
        self.received = received
        super().__init__(f"expected state {expected}, received state {received}")


class TraceTooShort(PropertyError):
    def __init__(self, needed: int, available: int):
        self.needed = needed
        self.available = available
        super().__init__(f"trace has {available} states, formula needs {needed}")


# Analyses

class AnalysisError(SmcError):
    pass


class DomainError(AnalysisError):
    pass


class MaxSamplesExceeded(AnalysisError):
    def __init__(self, limit: int):
        self.limit = limit
        super().__init__(f"SPRT undecided after {limit} samples")


class SampleFailed(AnalysisError):
    def __init__(self, trace_index: int, cause: Exception):
        self.trace_index = trace_index
        self.cause = cause
        super().__init__(f"sample {trace_index} failed: {cause}")


# Sessions

class SessionError(SmcError):
    def __init__(self, stage: str, message: str, diagnostics: Sequence[Diagnostic] = ()):
        self.stage = stage
        self.diagnostics: Tuple[Diagnostic, ...] = tuple(diagnostics)
        super().__init__(f"[{stage}] {message}")


class MissingField(SessionError):
    def __init__(self, field: str):
        self.field = field
        super().__init__("session", f"missing field '{field}'")


class UnknownTechnique(SessionError):
    def __init__(self, name: str):
        self.name = name
        super().__init__("session", f"unknown analysis technique '{name}'")
