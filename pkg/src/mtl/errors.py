"""Semantic exception hierarchy shared by all modules."""


class MtlError(Exception):
    """Base error for this package."""


class ValidationError(MtlError, ValueError):
    """Inputs violate an operation's preconditions or a type invariant."""


class FormatError(MtlError, ValueError):
    """A file or serialized payload could not be parsed."""


class SolverError(MtlError, RuntimeError):
    """A numerical solver failed to converge or hit a degenerate instance."""


class EvaluationError(MtlError, RuntimeError):
    """A map or mechanism could not be evaluated at the requested point."""


class DslSyntaxError(FormatError):
    """Structural-equation text failed to parse; carries line/column."""

    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"line {line}, col {col}: {message}")
        self.line = line
        self.col = col
