class ValidationError(ValueError):
    """Raised when inputs violate a documented precondition."""


class DomainError(ArithmeticError):
    """Raised when a formula is evaluated outside its domain (division by zero noise or time)."""


class SamplingError(RuntimeError):
    """A sampler produced a non-finite intermediate; the message names the step."""

    def __init__(self, msg, step=None):
        super().__init__(msg)
        self.step = step


class DivergenceError(RuntimeError):
    """Training loss became non-finite or exceeded the divergence bound."""

    def __init__(self, msg, iteration=None):
        super().__init__(msg)
        self.iteration = iteration
