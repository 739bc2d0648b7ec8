"""Exception and warning types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain where an operation is defined."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration.

    ``line`` is the 1-based line of the offending entry in the source file
    when it is known.
    """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericalFailure(RuntimeError):
    """A numerical routine did not reach its tolerance.

    ``partial`` carries the best estimate available when the routine gave up.
    """

    def __init__(self, message, partial=None, error=None):
        super().__init__(message)
        self.partial = partial
        self.error = error


class DegenerateInput(ValueError):
    """Input at which a 0-homogeneous ratio is undefined (zero denominator)."""


class NoConvergence(RuntimeError):
    """A fixed-point iteration diverged or ran out of iterations."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class ExplosionStop(RuntimeError):
    """A simulation exceeded its population cap.

    The trajectory recorded up to the stop is kept in ``trajectory``.
    """

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class NonSymmetricWarning(UserWarning):
    """A closed form proved only for symmetric profiles was used on another."""


class InconclusiveWarning(UserWarning):
    """An estimate was produced from too little data to be trusted."""
