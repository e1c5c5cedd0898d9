"""Bilinear collision operator ``Q(f, g)`` on a lattice window.

The operator is assembled from per-site exchange rates computed from ``g``::

    R_in(k)  = sum_l K(l, k) g(l)
    R_out(k) = sum_l K(k, l) g(l)
    Q(f, g)(k) = f(k-1) R_in(k-1) - f(k) (R_out(k) + R_in(k)) + f(k+1) R_out(k+1)

Neighbours outside the window count as zero. With a truncated kernel on its
own window this is exact, because reactions never leave ``S_N``.

Every reduction runs in a fixed order (numpy pairwise sums over a fixed axis,
no BLAS), so results do not depend on thread counts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import WindowMismatchError
from .lattice import Window, as_array, l1_norm, l11_norm

L1 = "l1"
L11 = "l11"
_SPACE_CONSTANT = {L1: 4.0, L11: 6.0}


@dataclass(frozen=True)
class RateProfile:
    r_in: np.ndarray
    r_out: np.ndarray
    window: Window


def _pair(f, g):
    fa = as_array(f)
    ga = as_array(g)
    if fa.size != ga.size:
        raise WindowMismatchError(f"f lives on n={(fa.size - 1) // 2}, g on n={(ga.size - 1) // 2}")
    return fa, ga


def rate_profile(kernel, g, use_factors: bool = True) -> RateProfile:
    """In/out exchange rates generated by ``g``.

    Kernels with quadrant-separable factors take the O(n) route through four
    scalar aggregates; all others use the dense O(n^2) table.
    """
    ga = as_array(g)
    n = (ga.size - 1) // 2
    idx = np.arange(-n, n + 1)
    rows = kernel.row_mask(idx)
    cols = kernel.col_mask(idx)
    fac = kernel.factors if use_factors else None
    if fac is not None:
        x = np.asarray(fac.x(idx), dtype=float)
        z = np.asarray(fac.z(idx), dtype=float)
        zg = np.where(cols, z * ga, 0.0)
        xg = np.where(rows, x * ga, 0.0)
        s_all, s_neg = zg.sum(), zg[idx < 0].sum()
        t_all, t_pos = xg.sum(), xg[idx > 0].sum()
        extra = fac.c - 1.0
        r_out = np.where(rows, x * (s_all + extra * np.where(idx > 0, s_neg, 0.0)), 0.0)
        r_in = np.where(cols, z * (t_all + extra * np.where(idx < 0, t_pos, 0.0)), 0.0)
    else:
        m = kernel.matrix(n)
        r_out = (m * ga[None, :]).sum(axis=1)
        r_in = (m * ga[:, None]).sum(axis=0)
    return RateProfile(r_in, r_out, Window(n))


def assemble(f: np.ndarray, rates: RateProfile) -> np.ndarray:
    r_in, r_out = rates.r_in, rates.r_out
    gain_up = f * r_in            # flux k -> k+1
    gain_down = f * r_out         # flux k -> k-1
    out = -(gain_up + gain_down)
    out[1:] += gain_up[:-1]
    out[:-1] += gain_down[1:]
    return out


def q_apply(kernel, f, g=None, use_factors: bool = True) -> np.ndarray:
    """``Q(f, g)`` as a signed array on the window of ``f`` (``g`` defaults to ``f``)."""
    if g is None:
        g = f
    fa, ga = _pair(f, g)
    return assemble(fa, rate_profile(kernel, ga, use_factors))


def q_apply_naive(kernel, f, g=None) -> np.ndarray:
    """Literal four-term double sum; O(n^2) test oracle."""
    from .oracles import brute_q

    if g is None:
        g = f
    _pair(f, g)
    return brute_q(kernel, f, g)


def q_lipschitz_bound(kernel, f, g, space: str = L1) -> float:
    """Local Lipschitz constant ``C_X C_K (|f|_X + |g|_X)`` of ``Q`` in ``space``."""
    if space not in _SPACE_CONSTANT:
        raise ValueError(f"space must be one of {sorted(_SPACE_CONSTANT)}, got {space!r}")
    fa, ga = _pair(f, g)
    norm = l1_norm if space == L1 else l11_norm
    return _SPACE_CONSTANT[space] * kernel.c_upper * (norm(fa) + norm(ga))


def q_operator_bound(kernel, f, g, space: str = L1) -> float:
    """Bound ``C_X C_K |f|_X |g|_1`` on ``|Q(f, g)|_X``."""
    if space not in _SPACE_CONSTANT:
        raise ValueError(f"space must be one of {sorted(_SPACE_CONSTANT)}, got {space!r}")
    fa, ga = _pair(f, g)
    norm = l1_norm if space == L1 else l11_norm
    return _SPACE_CONSTANT[space] * kernel.c_upper * norm(fa) * l1_norm(ga)
