"""Constrained nonlinear control toolkit: infinitesimal-horizon MPC.

Synthesizes compatible control-Lyapunov / control-barrier certificate pairs
by sum-of-squares programming, evaluates the resulting QP feedback law, and
simulates constrained spacecraft attitude scenarios.
"""

__version__ = "0.1.0"

from .poly import Polynomial, PolyBlock, coeff_distance_sq  # noqa: F401
