"""Exception hierarchy shared across the package.

Two families matter to callers: ``ConfigError`` (bad user input, CLI exit
code 2) and ``NumericError`` (a solver refused to run or blew up, exit
code 3). Expression-language errors raised while *parsing* user config are
wrapped into ``ConfigError`` by the CLI; at evaluation time they surface
as-is.
"""

from __future__ import annotations


class GxlabError(Exception):
    """Base class for everything raised on purpose by this package."""


class ConfigError(GxlabError):
    """Invalid configuration. ``path`` is the JSON path of the offender."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message


# --- expression language ---------------------------------------------------

class ExprError(GxlabError):
    """Base for expression parsing/evaluation errors."""


class ExprSyntaxError(ExprError):
    """Malformed expression text. ``offset`` is the byte offset of the error."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"syntax error at offset {offset}: {message}")
        self.offset = offset


class UnknownIdentifier(ExprError):
    def __init__(self, name: str, offset: int):
        super().__init__(f"unknown identifier '{name}' at offset {offset}")
        self.name = name
        self.offset = offset


class ArityMismatch(ExprError):
    def __init__(self, name: str, expected: int, got: int, offset: int):
        super().__init__(
            f"function '{name}' takes {expected} argument(s), got {got} (offset {offset})"
        )
        self.name = name
        self.expected = expected
        self.got = got
        self.offset = offset


class MissingBinding(ExprError):
    def __init__(self, name: str):
        super().__init__(f"no value bound for variable '{name}'")
        self.name = name


class DomainError(ExprError):
    """Evaluation hit a guarded singularity (division by ~0)."""


class UnboundedDetected(ExprError):
    """A sampled difference quotient exceeded the Lipschitz cap."""


# --- numerics ---------------------------------------------------------------

class NumericError(GxlabError):
    """Base for solver-side failures (CLI exit code 3)."""


class DimensionMismatch(NumericError):
    pass


class CflViolation(NumericError):
    pass


class NonFiniteValue(NumericError):
    pass


class LipschitzBlowup(NumericError):
    pass


class BudgetExceeded(NumericError):
    pass


class ScenarioOutOfRange(NumericError):
    pass


class UnsupportedArity(NumericError):
    pass


class FitIllConditioned(NumericError):
    pass


class InconclusiveTolerance(NumericError):
    """A claimed violation is smaller than solver noise; verdict withheld."""
