"""Exception hierarchy shared by all htnet modules."""


class HTNetError(Exception):
    """Base class for htnet errors."""


class ValidationError(HTNetError):
    """Bad input: maps to CLI exit code 1."""


class DimensionMismatch(ValidationError):
    pass


class NonStochasticRow(ValidationError):
    def __init__(self, matrix: str, row: int, row_sum: float):
        self.matrix = matrix
        self.row = row
        self.row_sum = row_sum
        super().__init__(f"row {row} of {matrix} sums to {row_sum!r}, not 1")


class NonPositiveRate(ValidationError):
    pass


class NegativeAllocation(ValidationError):
    pass


class InvalidInput(ValidationError):
    pass


class HTViolated(ValidationError):
    pass


class InsufficientReplications(ValidationError):
    pass


class DeadSystem(HTNetError):
    """Total event rate is zero (no jobs in the network)."""


class NumericalError(HTNetError):
    """Numerical failure: maps to CLI exit code 2."""


class NoConvergence(NumericalError):
    def __init__(self, iterations: int, residual: float):
        self.iterations = iterations
        self.residual = residual
        super().__init__(f"no convergence after {iterations} iterations (last residual {residual:.3e})")


class IndefiniteMatrix(NumericalError):
    pass
