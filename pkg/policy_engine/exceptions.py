class PolicyEngineError(Exception):
    """Base class for failures raised by the policy engine."""


class InvalidArgumentError(PolicyEngineError, ValueError):
    """Dimension mismatch, out-of-range index or an invalid constant."""


class SpecMismatchError(InvalidArgumentError):
    """Two function expansions live in different kernel spaces."""


class ModelOrderGuardExceeded(PolicyEngineError):
    """The pruned policy grew past the configured model-order guard."""

    def __init__(self, iteration, model_order, guard, eps_K):
        self.iteration = iteration
        self.model_order = model_order
        self.guard = guard
        self.eps_K = eps_K
        super().__init__(
            f"Model order {model_order} exceeded the guard {guard} at iteration {iteration} "
            f"(eps_K={eps_K:g}); increase compression_K for a larger compression budget"
        )


class InfeasibleConfigurationError(PolicyEngineError):
    """The compression factor K exceeds K_max, so no step size is admissible."""
