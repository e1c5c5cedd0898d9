"""Detailed-balance equilibria of a kernel.

For a strictly positive kernel the structural sequence

    psi(k) = psi_tilde(k) * kappa**-|k|,   kappa = sqrt(K(1,-1) / K(0,0)),

generates the one-parameter family ``f_phi(k) = psi(k) phi**k / Z(phi)``
for fugacities ``phi`` in ``(phi_minus, phi_plus)``. The total charge of
``f_phi`` is strictly increasing in ``phi``; :func:`phi_of_charge` inverts it
by bisection.

All psi values are kept in log space and memoised per family; series are
summed with :func:`math.fsum`.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptyFugacityIntervalError,
    KernelPositivityError,
    LimitNotCauchyError,
    PartitionDivergenceError,
    PreconditionError,
    SupercriticalChargeError,
)
from .kernels import Kernel
from .lattice import Density, Window

SERIES_RTOL = 1e-15
RATIO_RUN = 8
DEFAULT_BUDGET = 100_000
_CHUNK = 512


class _LogPsiTilde:
    """One-sided cumulative sums of log kernel ratios, grown on demand."""

    def __init__(self, kernel: Kernel):
        self._kernel = kernel
        self._pos = np.zeros(1)
        self._neg = np.zeros(1)
        self._lock = threading.Lock()

    def _grow(self, arr: np.ndarray, upto: int, sign: int) -> np.ndarray:
        start = arr.size
        if upto < start:
            return arr
        stop = max(upto + 1, 2 * start, _CHUNK)
        j = np.arange(start, stop)
        K = self._kernel
        if sign > 0:
            num, den = K(1, j - 1), K(j, 0)
        else:
            num, den = K(1 - j, -1), K(0, -j)
        if np.any(num <= 0) or np.any(den <= 0):
            raise KernelPositivityError(f"kernel {K.name} vanishes while building psi")
        inc = np.log(num) - np.log(den)
        ext = arr[-1] + np.cumsum(inc)
        return np.concatenate([arr, ext])

    def positive(self, upto: int) -> np.ndarray:
        with self._lock:
            self._pos = self._grow(self._pos, upto, +1)
            return self._pos[: upto + 1]

    def negative(self, upto: int) -> np.ndarray:
        with self._lock:
            self._neg = self._grow(self._neg, upto, -1)
            return self._neg[: upto + 1]


def log_psi_table(kernel: Kernel, n: int) -> np.ndarray:
    """``log psi(k)`` for ``k = -n..n`` (no fugacity interval required)."""
    kap = math.sqrt(kernel(1, -1) / kernel(0, 0))
    lt = _LogPsiTilde(kernel)
    pos = lt.positive(n)
    neg = lt.negative(n)
    lpt = np.concatenate([neg[:0:-1], pos])
    return lpt - np.abs(np.arange(-n, n + 1)) * math.log(kap)


@dataclass
class EquilibriumFamily:
    kernel: Kernel
    kappa: float
    lambda_plus: float
    lambda_minus: float
    phi_minus: float
    phi_plus: float
    lambda_source: str = "closed_form"
    budget: int = DEFAULT_BUDGET
    _lpt: _LogPsiTilde = field(default=None, repr=False)

    def __post_init__(self):
        if self._lpt is None:
            self._lpt = _LogPsiTilde(self.kernel)

    @property
    def interval(self) -> tuple[float, float]:
        return self.phi_minus, self.phi_plus

    def log_psi_side(self, m: int, sign: int) -> np.ndarray:
        """``log psi(sign * j)`` for ``j = 0..m``."""
        lt = self._lpt.positive(m) if sign > 0 else self._lpt.negative(m)
        return lt - np.arange(m + 1) * math.log(self.kappa)

    def log_psi(self, k: int) -> float:
        k = int(k)
        return float(self.log_psi_side(abs(k), 1 if k >= 0 else -1)[-1])

    def psi(self, k: int) -> float:
        return math.exp(self.log_psi(k))

    def psi_array(self, n: int) -> np.ndarray:
        neg = self.log_psi_side(n, -1)
        pos = self.log_psi_side(n, 1)
        return np.exp(np.concatenate([neg[:0:-1], pos]))

    def contains(self, phi: float) -> bool:
        return self.phi_minus < phi < self.phi_plus


def _limit(ratio, probe: int, rtol: float = 1e-6) -> float:
    r_full = ratio(probe)
    r_half = ratio(probe // 2)
    if not (r_full > 0 and math.isfinite(r_full)):
        raise LimitNotCauchyError(f"ratio sequence is not positive/finite at depth {probe}")
    if abs(r_full - r_half) > rtol * abs(r_full):
        raise LimitNotCauchyError(
            f"ratio sequence not Cauchy at depth {probe}: {r_half:.6g} vs {r_full:.6g}"
        )
    return r_full


def build_family(kernel: Kernel, limit_probe: int = 4096, budget: int = DEFAULT_BUDGET) -> EquilibriumFamily:
    """Derive kappa, Lambda_+-, and the fugacity interval of ``kernel``.

    Builtin families carry closed-form Lambda values; for other kernels the
    limits are read off the ratio sequences at ``limit_probe`` and accepted only
    if they agree with the value at ``limit_probe // 2`` to 1e-6 relative.
    """
    k00, k1m = kernel(0, 0), kernel(1, -1)
    if not (k00 > 0 and k1m > 0):
        raise KernelPositivityError(f"kernel {kernel.name} must be positive at (0,0) and (1,-1)")
    kap = math.sqrt(k1m / k00)
    if kernel.lambda_plus is not None and kernel.lambda_minus is not None:
        lp, lm, source = kernel.lambda_plus, kernel.lambda_minus, "closed_form"
    else:
        lp = _limit(lambda j: kernel(j, 0) / kernel(1, j - 1), limit_probe)
        lm = _limit(lambda j: kernel(0, -j) / kernel(-j + 1, -1), limit_probe)
        source = f"probe({limit_probe})"
    phi_minus = 1.0 / (lm * kap)
    phi_plus = lp * kap
    if not phi_minus < phi_plus:
        raise EmptyFugacityIntervalError(
            f"no detailed-balance family: I_K empty (kappa={kap:g}, Lambda+={lp:g}, Lambda-={lm:g})"
        )
    return EquilibriumFamily(kernel, kap, lp, lm, phi_minus, phi_plus, source, budget)


def psi(family: EquilibriumFamily, k: int) -> float:
    return family.psi(k)


# series -------------------------------------------------------------------


@dataclass(frozen=True)
class SeriesSums:
    z: float
    first: float
    second: float
    terms_pos: int
    terms_neg: int


def _side_terms(family: EquilibriumFamily, log_phi: float, sign: int, budget: int) -> np.ndarray | None:
    """Terms ``psi(sign*j) phi**(sign*j)`` for j >= 1 up to the certified cutoff, or None."""
    m = _CHUNK
    while True:
        m = min(m, budget)
        lp = family.log_psi_side(m, sign)[1:] + sign * np.arange(1, m + 1) * log_phi
        if np.any(lp > 700.0):
            return None
        t = np.exp(lp)
        j = np.arange(1, m + 1)
        weighted = t * (1.0 + j) ** 2
        partial = 1.0 + np.cumsum(t)
        small = weighted < SERIES_RTOL * partial
        decreasing = np.concatenate([[False], t[1:] < t[:-1]])
        # RATIO_RUN consecutive strictly decreasing terms ending at each index
        run = np.convolve(decreasing.astype(int), np.ones(RATIO_RUN, dtype=int))[:m]
        ok = np.nonzero(small & (run >= RATIO_RUN))[0]
        if ok.size:
            return t[: ok[0] + 1]
        if m >= budget:
            return None
        m *= 4


def series_sums(family: EquilibriumFamily, phi: float, budget: int | None = None) -> SeriesSums:
    """Zeroth, first and second moments of ``psi(k) phi**k`` over the lattice.

    Returns ``z = inf`` when either side fails to decay within the index budget.
    """
    if not phi > 0:
        raise PreconditionError(f"fugacity must be positive, got {phi}")
    if not family.phi_minus <= phi <= family.phi_plus:
        raise PreconditionError(f"phi={phi} outside the closure of ({family.phi_minus}, {family.phi_plus})")
    budget = family.budget if budget is None else budget
    log_phi = math.log(phi)
    pos = _side_terms(family, log_phi, 1, budget)
    neg = _side_terms(family, log_phi, -1, budget)
    if pos is None or neg is None:
        return SeriesSums(math.inf, math.nan, math.nan, 0 if pos is None else pos.size, 0 if neg is None else neg.size)
    jp = np.arange(1, pos.size + 1, dtype=float)
    jn = np.arange(1, neg.size + 1, dtype=float)
    z = math.fsum(np.concatenate([[1.0], pos, neg]))
    # pair k and -k terms before summing to limit cancellation
    npair = min(pos.size, neg.size)
    paired = jp[:npair] * (pos[:npair] - neg[:npair])
    first = math.fsum(np.concatenate([paired, jp[npair:] * pos[npair:], -jn[npair:] * neg[npair:]]))
    second = math.fsum(np.concatenate([jp ** 2 * pos, jn ** 2 * neg]))
    return SeriesSums(z, first, second, pos.size, neg.size)


def partition_z(family: EquilibriumFamily, phi: float, budget: int | None = None) -> float:
    return series_sums(family, phi, budget).z


def charge_of_phi(family: EquilibriumFamily, phi: float, budget: int | None = None) -> float:
    s = series_sums(family, phi, budget)
    if not math.isfinite(s.z):
        raise PartitionDivergenceError(f"partition series diverges at phi={phi}")
    return s.first / s.z


def charge_variance(family: EquilibriumFamily, phi: float) -> float:
    """``phi * d/dphi q(f_phi)``: the variance of the charge under ``f_phi``."""
    s = series_sums(family, phi)
    if not math.isfinite(s.z):
        raise PartitionDivergenceError(f"partition series diverges at phi={phi}")
    mean = s.first / s.z
    return s.second / s.z - mean * mean


@dataclass(frozen=True)
class EquilibriumDensity:
    phi: float
    z: float
    window: Window
    values: np.ndarray
    tail_mass: float

    def as_density(self, normalize: bool = False) -> Density:
        d = Density(self.window, self.values)
        return d.normalized() if normalize else d

    @property
    def charge(self) -> float:
        return math.fsum(self.window.indices * self.values)


def equilibrium_density(family: EquilibriumFamily, phi: float, window: Window | int) -> EquilibriumDensity:
    if not family.contains(phi):
        raise PreconditionError(f"phi={phi} outside I_K=({family.phi_minus}, {family.phi_plus})")
    if not isinstance(window, Window):
        window = Window(window)
    z = partition_z(family, phi)
    if not math.isfinite(z):
        raise PartitionDivergenceError(f"partition series diverges at phi={phi}")
    n = window.n
    logs = np.concatenate([family.log_psi_side(n, -1)[:0:-1], family.log_psi_side(n, 1)])
    values = np.exp(logs + window.indices * math.log(phi) - math.log(z))
    tail = 1.0 - math.fsum(values)
    values.setflags(write=False)
    return EquilibriumDensity(phi, z, window, values, tail)


# charge interval and inversion --------------------------------------------


@dataclass(frozen=True)
class ChargeBracket:
    lower: float
    upper: float
    lower_finite: bool
    upper_finite: bool


def _endpoint_charge(family: EquilibriumFamily, phi: float) -> float | None:
    if not math.isfinite(phi) or phi <= 0:
        return None
    s = series_sums(family, phi)
    if not math.isfinite(s.z):
        return None
    return s.first / s.z


def charge_interval(family: EquilibriumFamily) -> ChargeBracket:
    """Numerically bracketed image of the fugacity interval under the charge map.

    An endpoint is finite when the partition series converges at the
    corresponding boundary fugacity; otherwise it is reported as infinite.
    """
    lo = _endpoint_charge(family, family.phi_minus)
    hi = _endpoint_charge(family, family.phi_plus)
    return ChargeBracket(
        -math.inf if lo is None else lo,
        math.inf if hi is None else hi,
        lo is not None,
        hi is not None,
    )


def _probe_points(family: EquilibriumFamily, upward: bool):
    lo, hi = family.phi_minus, family.phi_plus
    if math.isfinite(hi):
        width = hi - lo
        for j in range(1, 60):
            yield (hi - width * 2.0 ** -j) if upward else (lo + width * 2.0 ** -j)
    else:
        mid = max(2.0 * lo, 1.0)
        for j in range(0, 60):
            yield mid * 2.0 ** j if upward else lo + (mid - lo) * 2.0 ** -j


def phi_of_charge(family: EquilibriumFamily, q_target: float, tol: float = 1e-10, max_iter: int = 200) -> float:
    """Unique fugacity whose equilibrium carries charge ``q_target`` (bisection)."""
    lo_phi = hi_phi = None
    q_lo = q_hi = None
    for phi in _probe_points(family, upward=False):
        try:
            q = charge_of_phi(family, phi)
        except PartitionDivergenceError:
            break
        if q <= q_target:
            lo_phi, q_lo = phi, q
            break
    for phi in _probe_points(family, upward=True):
        try:
            q = charge_of_phi(family, phi)
        except PartitionDivergenceError:
            break
        if q >= q_target:
            hi_phi, q_hi = phi, q
            break
    if lo_phi is None or hi_phi is None:
        bracket = charge_interval(family)
        raise SupercriticalChargeError(
            f"charge {q_target:g} outside the bracketed charge interval "
            f"({bracket.lower:.6g}, {bracket.upper:.6g}) of {family.kernel.name}"
        )
    if abs(q_lo - q_target) < tol:
        return lo_phi
    if abs(q_hi - q_target) < tol:
        return hi_phi
    for _ in range(max_iter):
        mid = 0.5 * (lo_phi + hi_phi)
        if mid <= lo_phi or mid >= hi_phi:
            break
        q = charge_of_phi(family, mid)
        if abs(q - q_target) < tol:
            return mid
        if q < q_target:
            lo_phi = mid
        else:
            hi_phi = mid
    return 0.5 * (lo_phi + hi_phi)


def stationarity_residual(family: EquilibriumFamily, phi: float, window: Window | int, kernel=None) -> float:
    """l1 norm of ``Q(f_phi restricted to the window)`` under the untruncated kernel."""
    from .collision import q_apply
    from .lattice import l1_norm

    eq = equilibrium_density(family, phi, window)
    k = family.kernel if kernel is None else kernel
    return l1_norm(q_apply(k, eq.values, eq.values))
