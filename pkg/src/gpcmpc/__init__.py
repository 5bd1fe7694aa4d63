"""Chance-constrained trajectory optimization under parametric uncertainty.

Polynomial-chaos uncertainty propagation, box-limited DDP with an
augmented-Lagrangian constraint loop, and a receding-horizon runtime with
Monte Carlo validation campaigns.
"""

from . import constraints, ddp, gpc, models, orthopoly, runtime

__all__ = ["constraints", "ddp", "gpc", "models", "orthopoly", "runtime"]
__version__ = "0.1.0"
