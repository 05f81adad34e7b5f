"""Diagnostics with source locations and stable error codes.

Every user-facing validation failure (machine files, threat files, litmus
JSON) is reported as a `Diagnostic` carrying a stable code so tests and
scripts can match on it rather than on message text.
"""

from dataclasses import dataclass


@dataclass(frozen=True)
class Diagnostic:
    """One problem found in user input."""

    code: str
    message: str
    line: int = 0
    column: int = 0

    def __str__(self) -> str:
        if self.line:
            return f"{self.line}:{self.column}: {self.code}: {self.message}"
        return f"{self.code}: {self.message}"


class InputError(Exception):
    """Raised when an input file or value cannot be accepted.

    Carries the diagnostics that explain why.
    """

    def __init__(self, diagnostics):
        if isinstance(diagnostics, Diagnostic):
            diagnostics = [diagnostics]
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(str(d) for d in self.diagnostics))

    @property
    def codes(self):
        return [d.code for d in self.diagnostics]


def err(code: str, message: str, line: int = 0, column: int = 0) -> InputError:
    return InputError(Diagnostic(code, message, line, column))
