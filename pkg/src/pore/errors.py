"""Exception types shared across the pipeline."""


class SchemaError(ValueError):
    """Invalid data: a record, file, or domain object violates its invariants."""


class FitDivergenceError(ArithmeticError):
    """Iterative fit produced a non-finite step.

    Carries the last finite iterate so callers can inspect how far the
    fit got before blowing up.
    """

    def __init__(self, message, last_params=None):
        super().__init__(message)
        self.last_params = last_params
