"""
Policy Engine for the kernel policy gradient lab.

This module provides:
- Vector-valued RKHS primitives (Gaussian kernels, function expansions)
- Kernel orthogonal matching pursuit (KOMP) for dictionary pruning
- Gaussian RKHS policies and the bundled environments
- The fully online stochastic policy gradient trainer
- Closed-form evaluation of the convergence constants
- Monte Carlo diagnostics (value curves, ascent alignment, trajectory analytics)

Experiments are driven through the `kpg` management command.
"""
