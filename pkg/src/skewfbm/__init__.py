"""Numerics for rough fractional Brownian motion (Hurst index below 1/2).

Subpackages cover product-integration fractional calculus on grids,
exact and Volterra-kernel fBm simulation, Gaussian-mollifier local
times, a mollified-drift Euler scheme with Malliavin diagnostics,
Girsanov change-of-measure densities, and an exact/Monte-Carlo
verifier for the algebraic identities the estimates rest on.
"""

__version__ = "0.1.0"

from .frac import FracOrder, GridFunction, rl_integral_left, rl_integral_right
