"""Exception types shared across the toolkit."""


class ValidationError(ValueError):
    """Raised when inputs violate a documented precondition (bad config,
    failed Cordes check without override, incompatible data)."""


class SolverFailure(RuntimeError):
    """Raised when a linear solve produces an unusable result (singular
    system, non-positive normalization constant, residual blow-up)."""
