"""Exception hierarchy shared across the engine."""

from __future__ import annotations


class PolicyGuardError(Exception):
    """Base class for every error raised by the engine."""


class SmtSyntaxError(PolicyGuardError, ValueError):
    """Malformed s-expression or a construct outside the supported fragment."""

    def __init__(self, message: str, position: int | None = None, text: str | None = None):
        self.message = message
        self.position = position
        self.line: int | None = None
        self.column: int | None = None
        if position is not None and text is not None:
            self.line = text.count("\n", 0, position) + 1
            self.column = position - (text.rfind("\n", 0, position) + 1) + 1
        super().__init__(self._render())

    def _render(self) -> str:
        if self.line is not None:
            return f"{self.message} (line {self.line}, column {self.column})"
        if self.position is not None:
            return f"{self.message} (offset {self.position})"
        return self.message


class SortError(PolicyGuardError, TypeError):
    """An operator applied to operands of the wrong sort."""

    def __init__(
        self,
        message: str,
        subterm: str | None = None,
        position: int | None = None,
        arg_index: int | None = None,
    ):
        self.message = message
        self.subterm = subterm
        self.position = position
        self.arg_index = arg_index
        detail = message
        if subterm is not None:
            detail += f" in {subterm}"
        if position is not None:
            detail += f" (offset {position})"
        super().__init__(detail)


class UnknownSymbol(PolicyGuardError, KeyError):
    def __init__(self, name: str, suggestion: str | None = None, position: int | None = None):
        self.name = name
        self.suggestion = suggestion
        self.position = position
        msg = f"unknown symbol {name!r}"
        if suggestion:
            msg += f"; did you mean {suggestion!r}?"
        if position is not None:
            msg += f" (offset {position})"
        super().__init__(msg)

    def __str__(self) -> str:  # KeyError quotes its argument otherwise
        return self.args[0]


class ModelError(PolicyGuardError):
    """A policy model violates one of its structural invariants."""


class SortConflict(ModelError):
    def __init__(self, names: list[str], sorts: list[str]):
        self.names = names
        self.sorts = sorts
        super().__init__(
            "clustered variables have different sorts: "
            + ", ".join(f"{n}: {s}" for n, s in zip(names, sorts))
        )


class FormatError(PolicyGuardError):
    """A policy/test/dataset file does not match its JSON layout."""

    def __init__(self, message: str, pointer: str = ""):
        self.pointer = pointer
        self.message = message
        super().__init__(f"{pointer or '/'}: {message}")


class SolverError(PolicyGuardError):
    pass


class SolverCrash(SolverError):
    def __init__(self, message: str, stderr: str = ""):
        self.stderr = stderr
        super().__init__(f"{message}\n{stderr}".rstrip())


class ProtocolError(SolverError):
    pass


class TranslatorError(PolicyGuardError):
    pass


class BackendUnavailable(TranslatorError):
    pass


class MalformedOutput(TranslatorError):
    """Backend output still fails the parse/sort gate after the repair budget."""

    def __init__(self, message: str, diagnostics: list[str] | None = None):
        self.diagnostics = list(diagnostics or [])
        super().__init__(message)


class RepairRejected(PolicyGuardError):
    def __init__(self, message: str, diagnostics: list[str] | None = None):
        self.diagnostics = list(diagnostics or [])
        super().__init__(message)


class BuildFailed(PolicyGuardError):
    def __init__(self, failures: list):
        self.failures = failures
        super().__init__(f"{len(failures)} span(s) failed to formalize")


class Equivalent(PolicyGuardError):
    """Two claim pairs cannot be told apart under the policy model."""


class ModelUnsat(PolicyGuardError):
    pass


class EmptyCounts(PolicyGuardError, ValueError):
    pass


class DatasetFormat(FormatError):
    pass
