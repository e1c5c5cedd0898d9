"""Relative entropy, entropy production and the bounds built on them.

Also hosts the quantitative positivity certificate for truncated runs and the
stability probe around a detailed-balance equilibrium.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .equilibria import EquilibriumFamily, equilibrium_density
from .errors import PreconditionError
from .evolution import IntegratorConfig, Trajectory, evolve
from .kernels import TruncatedKernel, truncate
from .lattice import Density, as_array, l11_norm

ROUNDING = 1e-12
DB_TOLERANCE = 1e-10
MONOTONE_SLACK = 1e-9
_EXP_LIMIT = 700.0


class BoundCheck(NamedTuple):
    lhs: float
    rhs: float

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs


def _reference(g) -> np.ndarray:
    if hasattr(g, "as_density"):
        g = g.as_density()
    return as_array(g)


def _weights(h, idx: np.ndarray) -> np.ndarray:
    return np.asarray(h(idx) if callable(h) else h, dtype=float) * np.ones(idx.size)


# relative entropy and production ---------------------------------------------------


def relative_entropy(f, g) -> float:
    """``sum f log(f/g)`` with ``0 log 0 = 0``; ``g`` must be strictly positive."""
    fa = as_array(f)
    ga = _reference(g)
    if fa.size != ga.size:
        raise PreconditionError("f and the reference live on different windows")
    if not np.all(ga > 0):
        raise PreconditionError("reference has a zero or negative entry")
    if np.any(fa < 0):
        raise PreconditionError("f has a negative entry")
    pos = fa > 0
    h = math.fsum(fa[pos] * np.log(fa[pos] / ga[pos]))
    return 0.0 if -ROUNDING <= h < 0 else h


def _flux_square(kernel: TruncatedKernel, g: np.ndarray) -> np.ndarray:
    """``A[k, l] = j_{l+1,k} = K(l+1, k) g(l+1) g(k)`` for ``k, l`` in ``-n..n-1``."""
    n = (g.size - 1) // 2
    m = kernel.matrix(n)                        # m[i, j] = K(i - n, j - n)
    b = m[1:, :-1] * g[1:, None] * g[None, :-1]  # b[l, k] = j_{l+1,k}
    return b.T


def entropy_production(kernel: TruncatedKernel, f) -> float:
    """Truncated entropy production ``W^N``; ``+inf`` when exactly one flux of a pair vanishes."""
    fa = as_array(f)
    if np.any(fa < 0):
        raise PreconditionError("f has a negative entry")
    if not isinstance(kernel, TruncatedKernel):
        kernel = truncate(kernel, (fa.size - 1) // 2)
    a = _flux_square(kernel, fa)
    at = a.T
    both = (a == 0) & (at == 0)
    one = (a == 0) ^ (at == 0)
    if one.any():
        return math.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(both, 0.0, (a - at) * np.log(np.where(both, 1.0, a) / np.where(both, 1.0, at)))
    return max(0.5 * float(terms.sum()), 0.0)


def detailed_balance_defect(kernel: TruncatedKernel, g) -> float:
    """Max relative mismatch ``|j_{l+1,k} - j_{k+1,l}| / max(...)`` over the truncated square."""
    ga = _reference(g)
    if not isinstance(kernel, TruncatedKernel):
        kernel = truncate(kernel, (ga.size - 1) // 2)
    a = _flux_square(kernel, ga)
    scale = np.maximum(a, a.T)
    nz = scale > 0
    if not nz.any():
        return 0.0
    return float(np.max(np.abs(a - a.T)[nz] / scale[nz]))


@dataclass(frozen=True)
class EntropyReport:
    times: np.ndarray
    h_series: np.ndarray
    w_series: np.ndarray
    dissipation_defect: float
    integral_defect: float
    monotone_violation: float

    def h_nonincreasing(self, slack: float = MONOTONE_SLACK) -> bool:
        return self.monotone_violation <= slack

    def as_dict(self) -> dict:
        return {
            "dissipation_defect": self.dissipation_defect,
            "integral_defect": self.integral_defect,
            "monotone_violation": self.monotone_violation,
            "h_initial": float(self.h_series[0]),
            "h_final": float(self.h_series[-1]),
            "w_max_finite": float(np.max(self.w_series[np.isfinite(self.w_series)], initial=0.0)),
            "samples": int(self.times.size),
        }


def dissipation_check(traj: Trajectory, reference, kernel: TruncatedKernel | None = None) -> EntropyReport:
    """Entropy along a run against a detailed-balance reference.

    ``dH/dt`` is taken by central differences at interior samples; samples
    where ``W^N`` is infinite (only possible at ``t = 0``) are left out of both
    defects.
    """
    kernel = traj.kernel if kernel is None else kernel
    ref = _reference(reference)
    if ref.size != traj.values.shape[1]:
        raise PreconditionError("reference and trajectory live on different windows")
    if not np.all(ref > 0):
        raise PreconditionError("reference has a zero or negative entry")
    defect = detailed_balance_defect(kernel, ref)
    if defect > DB_TOLERANCE:
        raise PreconditionError(f"reference violates detailed balance (defect {defect:.3e})")
    t = traj.times
    h = np.array([relative_entropy(v, ref) for v in traj.values])
    w = np.array([entropy_production(kernel, v) for v in traj.values])
    finite = np.isfinite(w)

    diss = 0.0
    if t.size >= 3:
        dh = (h[2:] - h[:-2]) / (t[2:] - t[:-2])
        ok = finite[1:-1] & finite[:-2] & finite[2:]
        if ok.any():
            diss = float(np.max(np.abs(dh + w[1:-1])[ok]))

    start = int(np.argmax(finite)) if finite.any() else t.size
    integ = 0.0
    if t.size - start >= 2:
        ts, hs, ws = t[start:], h[start:], w[start:]
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (ws[1:] + ws[:-1]) * np.diff(ts))])
        e = hs + cum
        integ = float(e.max() - e.min())

    mono = float(max(0.0, np.max(np.diff(h), initial=0.0)))
    return EntropyReport(t.copy(), h, w, diss, integ, mono)


# moment bounds ---------------------------------------------------------------------


def weighted_moment_bound(f, f_star, h, n0: int) -> BoundCheck:
    """``sum h f`` against ``max_{|k|<n0} h + 2 H(f|f*) + sum h e^{-h/2} + 2``."""
    fa = as_array(f)
    ref = _reference(f_star)
    n = (fa.size - 1) // 2
    idx = np.arange(-n, n + 1)
    hw = _weights(h, idx)
    if np.any(hw < 0):
        raise PreconditionError("weight must be nonnegative")
    far = np.abs(idx) >= n0
    bad = far & (ref > np.exp(-hw))
    if bad.any():
        k = int(idx[np.argmax(bad)])
        raise PreconditionError(f"reference exceeds exp(-h) at k={k} (n0={n0})")
    lhs = math.fsum(hw * fa)
    near = hw[~far]
    rhs = (float(near.max()) if near.size else 0.0) + 2.0 * relative_entropy(fa, ref) \
        + math.fsum(hw * np.exp(-hw / 2)) + 2.0
    return BoundCheck(lhs, rhs)


def decay_rate(family: EquilibriumFamily, phi: float) -> float:
    """Exponential decay margin ``min(log(phi+/phi), log(phi/phi-))`` of ``f_phi``."""
    if not family.contains(phi):
        raise PreconditionError(f"phi={phi} outside the fugacity interval {family.interval}")
    return min(math.log(family.phi_plus / phi), math.log(phi / family.phi_minus))


def smallest_n0(f_star, h) -> int:
    """Smallest ``n0`` with ``f*(k) <= exp(-h(k))`` for every window site ``|k| >= n0``."""
    ref = _reference(f_star)
    n = (ref.size - 1) // 2
    idx = np.arange(-n, n + 1)
    bad = ref > np.exp(-_weights(h, idx))
    if not bad.any():
        return 0
    return int(np.abs(idx[bad]).max()) + 1


@dataclass(frozen=True)
class TrajectoryBound:
    sup_l11: float
    bound: float
    delta_h: float
    n0: int

    @property
    def holds(self) -> bool:
        return self.sup_l11 <= self.bound


def trajectory_l11_bound(traj: Trajectory, family: EquilibriumFamily, phi: float, reference=None) -> TrajectoryBound:
    """Check ``sup_t |f(t)|_{1,1}`` against the entropy-based bound with ``h = delta_h |k|``."""
    n = traj.window.n
    ref = _reference(reference) if reference is not None else equilibrium_density(family, phi, n).as_density(True).values
    delta_h = decay_rate(family, phi) / 2.0
    h = lambda k: delta_h * np.abs(k)  # noqa: E731
    n0 = smallest_n0(ref, h)
    _, rhs = weighted_moment_bound(traj.values[0], ref, h, n0)
    sup = float(traj.l11_norms().max())
    return TrajectoryBound(sup, rhs / delta_h + 1.0, delta_h, n0)


def ckp_check(mu, nu, phi_w) -> BoundCheck:
    """Weighted total variation against ``(3/2 + sum e^{2 phi} nu)(sqrt(H) + H/2)``."""
    ma = as_array(mu)
    na = _reference(nu)
    n = (ma.size - 1) // 2
    w = _weights(phi_w, np.arange(-n, n + 1))
    if np.any(w < 0):
        raise PreconditionError("weight must be nonnegative")
    if np.any(2 * w > _EXP_LIMIT):
        raise OverflowError("exponential moment overflows")
    lhs = math.fsum(w * np.abs(ma - na))
    hrel = relative_entropy(ma, na)
    rhs = (1.5 + math.fsum(np.exp(2 * w) * na)) * (math.sqrt(hrel) + 0.5 * hrel)
    return BoundCheck(lhs, rhs)


# stability ------------------------------------------------------------------------------


def perturb(f_star: Density, delta: float, site: int = 0) -> Density:
    """Move mass ``delta/3`` from ``site`` to its two neighbours, half each.

    Mass and charge are unchanged and the l11 distance to ``f_star`` is exactly
    ``delta`` when ``site = 0``.
    """
    eps = delta / 3.0
    if eps == 0:
        return f_star
    if not f_star.window.contains(site - 1) or not f_star.window.contains(site + 1):
        raise PreconditionError("perturbation site needs both neighbours in the window")
    if f_star[site] < eps:
        raise PreconditionError(f"f({site})={f_star[site]:.3g} too small for delta={delta}")
    v = np.array(f_star.values)
    o = f_star.window.offset(site)
    v[o] -= eps
    v[o - 1] += eps / 2
    v[o + 1] += eps / 2
    return Density(f_star.window, v)


@dataclass(frozen=True)
class StabilityRow:
    delta: float
    h0: float
    deviation: float
    bound: float
    alpha: float

    @property
    def holds(self) -> bool:
        return self.deviation <= self.bound


def stability_probe(kernel, family: EquilibriumFamily, phi: float, deltas: Sequence[float], t_end: float,
                    n: int = 20, cfg: IntegratorConfig | None = None, threads: int = 1) -> list[StabilityRow]:
    """Sup-in-time l11 deviation from ``f_phi`` for perturbations of size ``delta``."""
    if not math.isfinite(family.phi_plus) or not family.lambda_plus or not family.lambda_minus:
        raise PreconditionError("stability probe needs finite Lambda+-")
    r = decay_rate(family, phi)
    alpha = r / 4.0
    f_star = equilibrium_density(family, phi, n).as_density(normalize=True)
    kern = truncate(kernel.base, n)
    cfg = IntegratorConfig(t_end=t_end) if cfg is None else cfg
    idx = f_star.indices
    emoment = 1.5 + math.fsum(np.exp(2 * alpha * (1 + np.abs(idx))) * f_star.values)

    def one(delta: float) -> StabilityRow:
        f0 = perturb(f_star, delta)
        h0 = relative_entropy(f0, f_star)
        traj = evolve(kern, f0, cfg)
        dev = max(l11_norm(v - f_star.values) for v in traj.values)
        bound = emoment * (math.sqrt(h0) + 0.5 * h0) / alpha
        return StabilityRow(float(delta), h0, float(dev), bound, alpha)

    deltas = [float(d) for d in deltas]
    if threads > 1 and len(deltas) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, deltas))
    return [one(d) for d in deltas]


# positivity certificate -----------------------------------------------------------


GEOMETRIC = "geometric"
QUADRATIC = "quadratic"


def _sequence(kind: str, length: int) -> tuple[np.ndarray, float]:
    j = np.arange(1, length + 1, dtype=float)
    if kind == GEOMETRIC:
        return 0.5 ** j, 1.0
    if kind == QUADRATIC:
        return 1.0 / j ** 2, math.pi ** 2 / 6
    raise ValueError(f"unknown sequence {kind!r}; expected {GEOMETRIC!r} or {QUADRATIC!r}")


@dataclass(frozen=True)
class LowerBoundCertificate:
    k0: int
    a: np.ndarray
    sigma: float
    t0: float
    c_upper: float
    c_lower: float
    mass: float
    f0k: float

    @property
    def l_max(self) -> int:
        return self.a.size

    def valid_from(self, l: int) -> float:
        m = abs(int(l))
        return self.t0 * math.fsum(self.a[:m]) / self.sigma

    def bound(self, l: int, t: float) -> float:
        m = abs(int(l))
        if m > self.l_max:
            raise PreconditionError(f"|l|={m} beyond l_max={self.l_max}")
        if t < self.valid_from(m):
            raise PreconditionError(f"t={t} before the certificate for |l|={m} applies")
        decay = math.exp(-2 * self.c_upper * self.mass * t)
        if m == 0:
            return self.f0k * decay
        gain = 2 * self.c_upper + self.sigma / (self.t0 * self.a[m - 1])
        return (self.c_lower * self.mass) ** m * self.f0k * decay * gain ** (-m)

    def table(self, times) -> dict[tuple[int, float], float]:
        out = {}
        for l in range(-self.l_max, self.l_max + 1):
            for t in times:
                if t >= self.valid_from(l):
                    out[(l, float(t))] = self.bound(l, t)
        return out


def lower_bound_certificate(c_upper: float, c_lower: float | None, mass: float, f0k: float, k0: int,
                            a_seq: str = GEOMETRIC, t0: float = 1.0, l_max: int = 5,
                            window: int | None = None) -> LowerBoundCertificate:
    if c_lower is None or not c_lower > 0:
        raise PreconditionError("kernel has no positive lower bound c_K")
    if not t0 > 0:
        raise ValueError("t0 must be positive")
    if window is not None and abs(k0) + l_max > window:
        raise PreconditionError(f"sites k0 +- {l_max} leave the window n={window}")
    a, sigma = _sequence(a_seq, l_max)
    return LowerBoundCertificate(int(k0), a, sigma, float(t0), float(c_upper), float(c_lower), float(mass), float(f0k))


def certificate_violation(cert: LowerBoundCertificate, traj: Trajectory) -> tuple[float, int]:
    """Largest ``bound - f(t, k0 + l)`` over valid recorded times, and the number of checks made."""
    if abs(cert.k0) + cert.l_max > traj.window.n:
        raise PreconditionError("certificate reaches beyond the trajectory window")
    worst, count = -math.inf, 0
    for l in range(-cert.l_max, cert.l_max + 1):
        col = traj.values[:, traj.window.offset(cert.k0 + l)]
        start = cert.valid_from(l)
        for t, v in zip(traj.times, col):
            if t >= start:
                worst = max(worst, cert.bound(l, t) - v)
                count += 1
    return worst, count

