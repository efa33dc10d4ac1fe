"""Exceptions raised across pyFedFlow.

Plain argument problems raise the builtin ``ValueError``; the classes below carry the
extra context (time, byte offset, round) a caller needs to report a failure.
"""


class NumericalBlowupError(FloatingPointError):
    """Non-finite values appeared in the solver state at time `t`."""

    def __init__(self, t: float, message: str = "non-finite values in solver state"):
        self.t = t
        super().__init__(f"{message} at t={t:.6f}")


class NumericalError(FloatingPointError):
    """Non-finite values in a gradient or parameter update."""


class ConvergenceError(ArithmeticError):
    """An iterative method hit its iteration cap."""

    def __init__(self, sweeps: int, residual: float):
        self.sweeps = sweeps
        self.residual = residual
        super().__init__(f"no convergence after {sweeps} sweeps (off-diagonal norm {residual:.3e})")


class DegenerateDataError(ValueError):
    """Data without spread where a spread is required (e.g. constant training data)."""


class FormatError(ValueError):
    """Malformed binary file; `offset` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (byte offset {offset})")


class ProtocolError(ConnectionError):
    """Malformed or corrupted wire frame; the connection should be closed."""


class StaleRoundError(ProtocolError):
    """A frame tagged with a round other than the one in progress."""

    def __init__(self, expected: int, got: int):
        self.expected = expected
        self.got = got
        super().__init__(f"frame for round {got} received during round {expected}")


class RoundError(RuntimeError):
    """A communication round failed; the cause is chained."""

    def __init__(self, round_index: int, message: str):
        self.round_index = round_index
        super().__init__(f"round {round_index}: {message}")
