"""Exception hierarchy.

Each family carries the process exit code the CLI uses for it.
"""

from __future__ import annotations


class GexpError(Exception):
    exit_code = 1


class ConfigError(GexpError):
    exit_code = 1


class PayoffError(GexpError, ValueError):
    """Base class for payoff parsing and evaluation failures."""

    exit_code = 2


class PayoffSyntaxError(PayoffError):
    def __init__(self, message: str, offset: int, expected: frozenset[str] = frozenset()):
        self.offset = offset
        self.expected = frozenset(expected)
        detail = f" (expected one of: {', '.join(sorted(self.expected))})" if self.expected else ""
        super().__init__(f"{message} at byte offset {offset}{detail}")


class UnknownIdentifierError(PayoffError):
    def __init__(self, name: str, offset: int):
        self.name = name
        self.offset = offset
        super().__init__(f"unknown identifier {name!r} at byte offset {offset}")


class InvalidExponentError(PayoffError):
    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} at byte offset {offset}")


class DimensionError(PayoffError):
    pass


class NumericalError(GexpError):
    exit_code = 3


class CFLError(NumericalError, ValueError):
    pass


class NonFiniteError(NumericalError):
    def __init__(self, step: int, time: float):
        self.step = step
        self.time = time
        super().__init__(f"non-finite value encountered at time step {step} (t={time!r})")


class PreconditionError(GexpError, ValueError):
    exit_code = 4


class OrderViolationError(PreconditionError):
    """Raised when phi <= psi fails at some evaluation node."""

    def __init__(self, node: tuple[float, ...], lo: float, hi: float):
        self.node = node
        self.lo = lo
        self.hi = hi
        super().__init__(f"order violation at node {node}: lower payoff {lo!r} > upper payoff {hi!r}")


class PolicyError(PreconditionError):
    def __init__(self, sigma: float, path: int, time: float):
        self.sigma = sigma
        self.path = path
        self.time = time
        super().__init__(f"policy emitted sigma={sigma!r} outside the band (path {path}, t={time!r})")
