class DomainError(ValueError):
    """An argument lies outside the domain of a numerical primitive."""


class NumericError(RuntimeError):
    """A numerical routine produced a non-finite or non-convergent result."""


class ConvergenceError(NumericError):
    pass


class SingularDesignError(NumericError):
    pass


class SeparationError(NumericError):
    """Logistic coefficients diverged, the classes are (quasi) separable."""


class DegenerateFunctionalError(ValueError):
    pass


class DimensionMismatchError(ValueError):
    pass


class EmptySetError(ValueError):
    pass


class SchemaError(ValueError):
    """A summary record is malformed, tampered with, or of an unknown version."""


class InvalidExperimentError(RuntimeError):
    pass


class InfeasibleProjectionError(NumericError):
    def __init__(self, msg: str, lam: float):
        super().__init__(msg)
        self.lam = lam
        """The last penalty level tried before giving up."""


class MajorityRuleUnverifiableError(RuntimeError):
    """No resampled voting matrix produced a clique large enough to satisfy
    the majority rule. The data are then unlikely to contain a prevailing
    set and no region is reported."""

    def __init__(self, msg: str, diagnostics: dict):
        super().__init__(msg)
        self.diagnostics = diagnostics
