"""Exception hierarchy shared by all modules."""


class OTDiscError(Exception):
    """Base class for every error raised by this package."""


class InputError(OTDiscError, ValueError):
    """Malformed or inconsistent input (shapes, weights, non-finite values)."""


class DomainError(InputError):
    """A point lies outside the chart it is supposed to belong to."""


class SingularityError(OTDiscError, ArithmeticError):
    """A derivative was requested at a genuinely non-differentiable point."""


class ConvergenceError(OTDiscError, RuntimeError):
    """An iterative solver ran out of iterations before reaching tolerance."""

    def __init__(self, message, violation=float("nan"), n_iter=0):
        super().__init__(message)
        self.violation = violation
        self.n_iter = n_iter


class NumericalStateError(OTDiscError, ArithmeticError):
    """Internal numerical state is inconsistent, typically an unconverged plan."""


class DegenerateInputError(InputError):
    """The sampler keeps producing fewer distinct points than requested atoms."""


class PathologicalInputError(InputError):
    """Rejection rates or recursion depths indicate a pathological distribution."""


class UnsupportedChartError(OTDiscError, TypeError):
    """The operation needs linear structure the chart does not provide."""


class CellFailures(OTDiscError):
    """One or more refinement cells failed; carries the successful results too."""

    def __init__(self, failures, results):
        lines = ", ".join(f"cell {i}: {exc!r}" for i, exc in failures)
        super().__init__(f"{len(failures)} cell(s) failed: {lines}")
        self.failures = failures
        self.results = results


class ConfigError(OTDiscError):
    """Run configuration is missing or does not validate."""
