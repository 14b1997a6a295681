"""Riemann-Liouville fractional integrals and derivatives on grid functions.

All four operators use product integration: the integrand is replaced by
its piecewise-linear interpolant and the singular power weight is
integrated exactly cell by cell.  Naive Riemann sums lose their order
against the (x - y)^(alpha - 1) singularity; the product rule does not.

On a uniform grid the weights are convolutional, so each operator is a
lower- (or upper-) triangular Toeplitz matrix.  The matrix form is
exposed separately because the Girsanov module applies one fixed
operator to thousands of path functionals at once.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import gamma

import numpy as np

__all__ = [
    "FracOrder",
    "GridFunction",
    "rl_integral_left",
    "rl_integral_right",
    "rl_derivative_left",
    "rl_derivative_right",
    "rl_integral_left_matrix",
]


@dataclass(frozen=True)
class FracOrder:
    """Fractional order restricted to (0, 1)."""

    alpha: float

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"fractional order must lie in (0, 1), got {self.alpha}")


@dataclass(frozen=True)
class GridFunction:
    """Real-valued function sampled on a strictly increasing grid.

    Parameters
    ----------
    grid : ndarray
        Nodes a = t_0 < ... < t_n = b, at least two of them.
    values : ndarray
        One finite value per node.  NaN is allowed only to mark nodes a
        previous operator reported as undefined; downstream operators
        reject it.
    """

    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)
        if grid.ndim != 1 or grid.size < 2:
            raise ValueError("grid needs at least two nodes")
        if values.shape != grid.shape:
            raise ValueError("values must match grid shape")
        if np.any(np.diff(grid) <= 0):
            raise ValueError("grid nodes must be strictly increasing")
        if not np.all(np.isfinite(grid)):
            raise ValueError("grid nodes must be finite")

    @property
    def spacing(self) -> float:
        h = np.diff(self.grid)
        if not np.allclose(h, h[0], rtol=1e-9, atol=0.0):
            raise ValueError("operation requires a uniform grid")
        return float(h[0])


def _require_finite(f: GridFunction) -> None:
    if not np.all(np.isfinite(f.values)):
        raise ValueError("grid function carries non-finite values")


def _integral_kernels(n: int, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    # Exact cell integrals of u^(alpha-1) * (hat functions) on [(k-1)h, kh],
    # in units of h^alpha.  A weights the left cell endpoint, B the right.
    k = np.arange(1, n + 1, dtype=float)
    km = k - 1.0
    p1 = (k ** (alpha + 1.0) - km ** (alpha + 1.0)) / (alpha + 1.0)
    p0 = (k ** alpha - km ** alpha) / alpha
    A = p1 - km * p0
    B = k * p0 - p1
    return A, B


def rl_integral_left_matrix(grid: np.ndarray, alpha: float) -> np.ndarray:
    """Lower-triangular matrix W with (W f)(t_i) = (I^alpha_{a+} f)(t_i).

    Uniform grids only; this is the fast path used for batches.
    """
    FracOrder(alpha)
    grid = np.asarray(grid, dtype=float)
    h = np.diff(grid)
    if np.any(h <= 0) or not np.allclose(h, h[0], rtol=1e-9, atol=0.0):
        raise ValueError("matrix form requires a uniform increasing grid")
    n = grid.size - 1
    A, B = _integral_kernels(n, alpha)
    scale = h[0] ** alpha / gamma(alpha)
    W = np.zeros((n + 1, n + 1))
    i, j = np.tril_indices(n + 1, k=-1)
    # f_j seen as the left endpoint of cell j contributes A(i-j);
    # as the right endpoint of cell j-1 it contributes B(i-j+1).
    W[i, j] += A[i - j - 1]
    i, j = np.tril_indices(n + 1, k=0)
    mask = j >= 1
    W[i[mask], j[mask]] += B[i[mask] - j[mask]]
    return scale * W


def _apply_integral_nonuniform(grid, values, alpha):
    n = grid.size
    out = np.zeros(n)
    for i in range(1, n):
        a = grid[i] - grid[1 : i + 1]  # distance to right cell edges
        b = grid[i] - grid[0:i]  # distance to left cell edges
        h = grid[1 : i + 1] - grid[0:i]
        p1 = (b ** (alpha + 1.0) - a ** (alpha + 1.0)) / (alpha + 1.0)
        p0 = (b ** alpha - a ** alpha) / alpha
        wl = (p1 - a * p0) / h
        wr = (b * p0 - p1) / h
        out[i] = np.dot(wl, values[0:i]) + np.dot(wr, values[1 : i + 1])
    return out / gamma(alpha)


def rl_integral_left(f: GridFunction, alpha: FracOrder) -> GridFunction:
    """Left-sided fractional integral I^alpha_{a+} f on the grid of f.

    Exact whenever f is piecewise linear on the grid, which covers the
    closed-form power cases used in the tests.
    """
    _require_finite(f)
    a = alpha.alpha
    grid = f.grid
    h = np.diff(grid)
    if np.allclose(h, h[0], rtol=1e-9, atol=0.0):
        W = rl_integral_left_matrix(grid, a)
        vals = W @ f.values
    else:
        vals = _apply_integral_nonuniform(grid, f.values, a)
    return GridFunction(grid, vals)


def _reflected(f: GridFunction) -> GridFunction:
    a, b = f.grid[0], f.grid[-1]
    return GridFunction((a + b) - f.grid[::-1], f.values[::-1])


def rl_integral_right(f: GridFunction, alpha: FracOrder) -> GridFunction:
    """Right-sided fractional integral I^alpha_{b-} f."""
    out = rl_integral_left(_reflected(f), alpha)
    return GridFunction(f.grid, out.values[::-1])


def _derivative_kernels(n: int, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    # Cell integrals of u^(-alpha-1) * (hat functions), in units of h^(-alpha).
    # k = 1 keeps only the vanishing-at-the-node branch, which is finite.
    k = np.arange(1, n + 1, dtype=float)
    km = k - 1.0
    km[0] = 1.0  # placeholder; the k = 1 entries are overwritten below
    p1 = (k ** (1.0 - alpha) - km ** (1.0 - alpha)) / (1.0 - alpha)
    p0 = (km ** (-alpha) - k ** (-alpha)) / alpha
    A = p1 - km * p0
    B = k * p0 - p1
    A[0] = 1.0 / (1.0 - alpha)
    B[0] = 0.0  # multiplies g(t_i) = 0 exactly
    return A, B


def rl_derivative_left(f: GridFunction, alpha: FracOrder) -> GridFunction:
    """Left-sided fractional derivative D^alpha_{a+} f.

    Uses the difference representation
        D^alpha f(x) = [ f(x)/(x-a)^alpha
                         + alpha * int_a^x (f(x)-f(y))/(x-y)^(alpha+1) dy ]
                       / Gamma(1-alpha),
    with the difference integrated by the product rule.  The value at
    the left endpoint is reported as NaN: the (x-a)^(-alpha) term
    diverges there and no extrapolation is attempted.
    """
    _require_finite(f)
    a = alpha.alpha
    grid, values = f.grid, f.values
    h = f.spacing
    n = grid.size - 1
    A, B = _derivative_kernels(n, a)
    scale = h ** (-a) / gamma(1.0 - a)
    out = np.empty(n + 1)
    out[0] = np.nan
    for i in range(1, n + 1):
        g = values[i] - values[: i + 1]  # g(t_i) = 0
        # cell j spans [t_j, t_{j+1}]; distance index k = i - j
        acc = np.dot(A[i - 1 :: -1], g[:i]) + np.dot(B[i - 1 :: -1], g[1 : i + 1])
        out[i] = scale * (values[i] * (i ** (-a)) + a * acc)
    return GridFunction(grid, out)


def rl_derivative_right(f: GridFunction, alpha: FracOrder) -> GridFunction:
    """Right-sided fractional derivative D^alpha_{b-} f (NaN at t_n)."""
    out = rl_derivative_left(_reflected(f), alpha)
    return GridFunction(f.grid, out.values[::-1])
