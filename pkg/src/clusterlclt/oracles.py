"""Closed-form reference densities used to cross-check the Fourier inversion."""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np


def irwin_hall_pdf(u: float, n: int) -> float:
    """Density of a sum of n iid U[0,1] at u, evaluated in exact rational arithmetic.

    The float argument is converted to its exact binary value, so the
    alternating sum suffers no cancellation.
    """
    if n < 1:
        raise ValueError("n must be positive")
    q = Fraction(u)
    if q < 0 or q > n:
        return 0.0
    if n == 1:
        return 1.0
    total = Fraction(0)
    for j in range(int(math.floor(q)) + 1):
        total += (-1) ** j * math.comb(n, j) * (q - j) ** (n - 1)
    return float(total / math.factorial(n - 1))


def uniform_sum_density(x_grid, k: int, R: float = 1.0) -> np.ndarray:
    """Density of the standardized sum of k iid U[-R, R] spins (the k-fold convolution power)."""
    sqrt_D = math.sqrt(k * R * R / 3.0)
    x = np.asarray(x_grid, dtype=float)
    # S = 2R U - kR with U ~ Irwin-Hall(k); p(x) = sqrt D f_S(sqrt D x)
    u = (x * sqrt_D + k * R) / (2.0 * R)
    return np.array([irwin_hall_pdf(float(v), k) for v in u]) * sqrt_D / (2.0 * R)


def gaussian_pdf(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def uniform_sum_cf(t, k: int, R: float = 1.0) -> np.ndarray:
    """(sin s / s)^k at s = R t / sqrt D."""
    s = R * np.asarray(t, dtype=float) / math.sqrt(k * R * R / 3.0)
    return np.sinc(s / np.pi) ** k
