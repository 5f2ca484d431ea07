"""Averaging kernel model."""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numpy.polynomial import Polynomial
from scipy.integrate import trapezoid


@dataclass(frozen=True)
class Kernel:
    """Even kernel K(t) = P(t^2) (1 - t^2)^(q+1) supported on [-1, 1].

    Attributes:
        p: Number of vanishing moments
        q: Smoothness order, K is C^q across t = -1 and t = 1
        coeffs: Coefficients of P in powers of s = t^2, lowest first
    """

    p: int
    q: int
    coeffs: tuple[float, ...]

    @cached_property
    def polynomial(self) -> Polynomial:
        """K on [-1, 1] as a polynomial in t."""
        even = np.zeros(2 * len(self.coeffs) - 1)
        even[::2] = self.coeffs
        bump = Polynomial([1.0, 0.0, -1.0]) ** (self.q + 1)
        return Polynomial(even) * bump

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        s = t * t
        inside = np.abs(t) <= 1.0
        values = np.polynomial.polynomial.polyval(s, self.coeffs) * (1.0 - s) ** (self.q + 1)
        return np.where(inside, values, 0.0)

    def derivative(self, t, order: int = 1) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        values = self.polynomial.deriv(order)(t)
        return np.where(np.abs(t) <= 1.0, values, 0.0)

    def moment(self, r: int, samples: int = 10_001) -> float:
        """Trapezoidal approximation of the integral of K(t) t^r over [-1, 1]."""
        t = np.linspace(-1.0, 1.0, samples)
        return float(trapezoid(self(t) * t**r, t))
