"""Exception types shared across the package.

The CLI maps these onto exit codes: validation problems exit with 2,
numerical failures with 3 and I/O or parse problems with 4.
"""


class InvalidArgument(ValueError):
    """A parameter is outside its documented range or shapes disagree."""


class InvalidPlan(InvalidArgument):
    """A sampler plan cannot drive the reverse loop (e.g. zero noise before the endpoint)."""


class Unsupported(InvalidArgument):
    """The request is well-formed but outside what the routine handles (e.g. grid oracle for N > 3)."""


class NumericalFailure(ArithmeticError):
    """A non-finite value appeared during recovery."""

    def __init__(self, message, step=None, inner_step=None, trial=None):
        super().__init__(message)
        self.message = message
        self.step = step
        self.inner_step = inner_step
        self.trial = trial

    def __reduce__(self):
        # keep the location fields when crossing a process pool
        return type(self), (self.message, self.step, self.inner_step, self.trial)

    def __str__(self):
        # trial is filled in by the harness after the failure is raised
        where = [
            f"{name}={val}"
            for name, val in (("trial", self.trial), ("k", self.step), ("inner_step", self.inner_step))
            if val is not None
        ]
        return self.message + (f" ({', '.join(where)})" if where else "")


class ParseError(OSError):
    """A file could not be decoded; ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset=None):
        self.offset = offset
        self.message = message
        if offset is not None:
            message = f"{message} at byte offset {offset}"
        super().__init__(message)
