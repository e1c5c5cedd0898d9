"""Independent references used to cross-check the engine.

* the discrete heat kernel ``G(t, k)`` (constant unit kernel), by periodic
  trapezoidal quadrature of its Fourier integral;
* the lower bound on the absolute charge that follows from it;
* a literal evaluation of the collision operator's four-term double sum.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from .lattice import as_array

DEFAULT_PANELS = 2048


@lru_cache(maxsize=65536)
def heat_green(t: float, k: int, panels: int = DEFAULT_PANELS) -> float:
    """``G(t, k) = e^{-2t}/(2 pi) int_{-pi}^{pi} e^{2t cos th} cos(k th) dth``.

    The integrand is smooth and periodic, so the composite trapezoidal rule
    converges geometrically; 2048 panels give ~1e-15 absolute error for
    ``t <= 10``.
    """
    if t < 0:
        raise ValueError(f"time must be nonnegative, got {t}")
    theta = -math.pi + 2 * math.pi * np.arange(panels) / panels
    vals = np.exp(2 * t * (np.cos(theta) - 1.0)) * np.cos(k * theta)
    return float(math.fsum(vals) / panels)


@lru_cache(maxsize=4096)
def heat_green_time_integral(t: float, panels: int = DEFAULT_PANELS) -> float:
    """``int_0^t G(s, 0) ds`` via ``1/(4 pi) int (1 - e^{-2t(1-cos th)}) / (1 - cos th) dth``."""
    if t < 0:
        raise ValueError(f"time must be nonnegative, got {t}")
    theta = -math.pi + 2 * math.pi * np.arange(panels) / panels
    one_minus_cos = 2.0 * np.sin(theta / 2) ** 2
    safe = np.where(one_minus_cos > 0, one_minus_cos, 1.0)
    vals = np.where(one_minus_cos > 0, -np.expm1(-2 * t * one_minus_cos) / safe, 2.0 * t)
    return float(math.fsum(vals) * (2 * math.pi / panels) / (4 * math.pi))


def heat_abs_charge_lower(t: float, f0_at_0: float, q0_abs: float) -> float:
    """Lower bound ``|q|(f0) + 2 f0(0) int_0^t G(s, 0) ds`` for the discrete heat flow."""
    return q0_abs + 2.0 * f0_at_0 * heat_green_time_integral(float(t))


def heat_green_row(t: float, n: int) -> np.ndarray:
    return np.array([heat_green(float(t), int(k)) for k in range(-n, n + 1)])


def brute_q(kernel, f, g) -> np.ndarray:
    """Direct evaluation of

        Q(f,g)(k) = sum_l  K(l,k-1) g(l) f(k-1) - K(k,l-1) f(k) g(l-1)
                         - K(l,k) g(l) f(k)     + K(k+1,l-1) f(k+1) g(l-1)

    with values outside the window taken as zero.
    """
    fa = as_array(f)
    ga = as_array(g)
    n = (fa.size - 1) // 2

    def at(arr, i):
        i = np.asarray(i)
        inside = np.abs(i) <= n
        return np.where(inside, arr[np.clip(i + n, 0, 2 * n)], 0.0)

    # l ranges over every index where g(l) or g(l-1) can be nonzero
    l = np.arange(-n, n + 2)
    out = np.empty(2 * n + 1)
    for pos, k in enumerate(range(-n, n + 1)):
        terms = (
            kernel(l, k - 1) * at(ga, l) * at(fa, k - 1)
            - kernel(k, l - 1) * at(fa, k) * at(ga, l - 1)
            - kernel(l, k) * at(ga, l) * at(fa, k)
            + kernel(k + 1, l - 1) * at(fa, k + 1) * at(ga, l - 1)
        )
        out[pos] = math.fsum(terms)
    return out
