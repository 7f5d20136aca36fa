"""Independent reference computations."""
from .affine import (AffineStrategyCoefficients, affine_strategy_cost, basis_from_names,
                     exact_linear_strategy)
from .conditioning import batch_gaussian_conditioning, batch_state_belief, state_maps

__all__ = [
    "AffineStrategyCoefficients", "affine_strategy_cost", "basis_from_names", "exact_linear_strategy",
    "batch_gaussian_conditioning", "batch_state_belief", "state_maps",
]
