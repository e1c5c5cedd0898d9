"""Exchange-rate kernels ``K(k, l)`` on the integer lattice.

A kernel is a vectorised evaluation function plus certificates: an upper
bound ``c_upper`` (assumption B) and an optional strictly positive lower bound
``c_lower``. Certificates are supplied by the caller and checked by sampling on
a working window (:func:`validate_bounds`), never proven.

Builtin families share the quadrant-separable form

    K(k, l) = x(k) * z(l) * (c if l < 0 < k else 1),

recorded as :class:`QuadrantFactors`. The collision operator uses it for an
O(n) rate profile, and the form is closed under pointwise products and
reciprocals.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import KernelError, KernelPositivityError

SEPARABLE = "separable"
DETAILED_BALANCE = "detailed_balance_family"

DEFAULT_PROBE = 32


@dataclass(frozen=True)
class QuadrantFactors:
    x: Callable[[np.ndarray], np.ndarray]
    z: Callable[[np.ndarray], np.ndarray]
    c: float

    def __mul__(self, other: "QuadrantFactors") -> "QuadrantFactors":
        fx, gx, fz, gz = self.x, other.x, self.z, other.z
        return QuadrantFactors(lambda k: fx(k) * gx(k), lambda l: fz(l) * gz(l), self.c * other.c)

    def reciprocal(self) -> "QuadrantFactors":
        fx, fz = self.x, self.z
        return QuadrantFactors(lambda k: 1.0 / fx(k), lambda l: 1.0 / fz(l), 1.0 / self.c)


class Kernel:
    """Nonnegative rate function with bound certificates.

    Calling the kernel broadcasts over integer arrays; scalar arguments give a
    Python float.
    """

    def __init__(
        self,
        func: Callable[[np.ndarray, np.ndarray], np.ndarray],
        c_upper: float,
        c_lower: float | None = None,
        tags=(),
        spec: dict | None = None,
        factors: QuadrantFactors | None = None,
        lambda_plus: float | None = None,
        lambda_minus: float | None = None,
        name: str = "custom",
    ):
        if not c_upper > 0:
            raise KernelError(f"upper bound certificate must be positive, got {c_upper}")
        if c_lower is not None and not 0 < c_lower <= c_upper:
            raise KernelError(f"lower bound certificate must lie in (0, c_upper], got {c_lower}")
        self._func = func
        self.c_upper = float(c_upper)
        self.c_lower = None if c_lower is None else float(c_lower)
        self.tags = frozenset(tags)
        self.spec = spec
        self.factors = factors
        self.lambda_plus = lambda_plus
        self.lambda_minus = lambda_minus
        self.name = name
        self._cache: dict = {}
        self._lock = threading.Lock()

    def __repr__(self):
        return f"Kernel({self.name}, C_K={self.c_upper:g}, c_K={self.c_lower})"

    def __call__(self, k, l):
        scalar = np.isscalar(k) and np.isscalar(l)
        k = np.asarray(k, dtype=np.int64)
        l = np.asarray(l, dtype=np.int64)
        out = np.asarray(self._func(*np.broadcast_arrays(k, l)), dtype=float)
        return float(out) if scalar else out

    @property
    def base(self) -> "Kernel":
        return self

    @property
    def truncation(self) -> int | None:
        return None

    def matrix(self, n: int) -> np.ndarray:
        """Dense table ``M[k + n, l + n] = K(k, l)`` for ``|k|, |l| <= n``."""
        with self._lock:
            m = self._cache.get(n)
        if m is None:
            idx = np.arange(-n, n + 1)
            m = self(idx[:, None], idx[None, :])
            m.setflags(write=False)
            with self._lock:
                self._cache[n] = m
        return m

    def row_mask(self, idx: np.ndarray) -> np.ndarray:
        return np.ones(idx.shape, dtype=bool)

    def col_mask(self, idx: np.ndarray) -> np.ndarray:
        return np.ones(idx.shape, dtype=bool)

    def to_spec(self) -> dict:
        if self.spec is None:
            raise KernelError(f"kernel {self.name} has no JSON spec")
        return self.spec


class TruncatedKernel:
    """``K^N``: equal to the base kernel for ``k in {-N+1..N}``, ``l in {-N..N-1}``, zero elsewhere."""

    def __init__(self, base: Kernel, n: int):
        if int(n) != n or n < 1:
            raise KernelError(f"truncation level must be an integer >= 1, got {n}")
        self._base = base
        self.n = int(n)
        self._cache: dict = {}
        self._lock = threading.Lock()

    def __repr__(self):
        return f"TruncatedKernel({self._base.name}, n={self.n})"

    @property
    def base(self) -> Kernel:
        return self._base

    @property
    def truncation(self) -> int:
        return self.n

    @property
    def c_upper(self) -> float:
        return self._base.c_upper

    @property
    def c_lower(self) -> float | None:
        return self._base.c_lower

    @property
    def factors(self) -> QuadrantFactors | None:
        return self._base.factors

    @property
    def tags(self) -> frozenset:
        return self._base.tags

    def row_mask(self, idx: np.ndarray) -> np.ndarray:
        return (idx >= -self.n + 1) & (idx <= self.n)

    def col_mask(self, idx: np.ndarray) -> np.ndarray:
        return (idx >= -self.n) & (idx <= self.n - 1)

    def __call__(self, k, l):
        scalar = np.isscalar(k) and np.isscalar(l)
        k, l = np.broadcast_arrays(np.asarray(k, dtype=np.int64), np.asarray(l, dtype=np.int64))
        out = np.where(self.row_mask(k) & self.col_mask(l), self._base(k, l), 0.0)
        return float(out) if scalar else out

    def matrix(self, n: int) -> np.ndarray:
        with self._lock:
            m = self._cache.get(n)
        if m is None:
            idx = np.arange(-n, n + 1)
            m = self(idx[:, None], idx[None, :])
            m.setflags(write=False)
            with self._lock:
                self._cache[n] = m
        return m


def truncate(base: Kernel, n: int) -> TruncatedKernel:
    return TruncatedKernel(base, n)


# builtin families ---------------------------------------------------------


def _quadrant(k, l):
    return (l < 0) & (k > 0)


def builtin_constant(value: float = 1.0) -> Kernel:
    if not value > 0:
        raise KernelError(f"constant kernel value must be positive, got {value}")
    v = float(value)
    return Kernel(
        lambda k, l: np.full(k.shape, v),
        c_upper=v,
        c_lower=v,
        tags={SEPARABLE, DETAILED_BALANCE},
        spec={"family": "constant", "params": {"value": v}},
        factors=QuadrantFactors(lambda k: np.full(np.shape(k), v), lambda l: np.ones(np.shape(l)), 1.0),
        lambda_plus=1.0,
        lambda_minus=1.0,
        name=f"constant({v:g})",
    )


def builtin_two_rate(a: float, b: float) -> Kernel:
    """``a + b`` on the quadrant ``l < 0 < k``, ``a`` elsewhere."""
    if not (a > 0 and b > 0):
        raise KernelError(f"two-rate kernel needs a > 0 and b > 0, got a={a}, b={b}")
    a, b = float(a), float(b)
    return Kernel(
        lambda k, l: np.where(_quadrant(k, l), a + b, a),
        c_upper=a + b,
        c_lower=a,
        tags={SEPARABLE, DETAILED_BALANCE},
        spec={"family": "two_rate", "params": {"a": a, "b": b}},
        factors=QuadrantFactors(lambda k: np.full(np.shape(k), a), lambda l: np.ones(np.shape(l)), (a + b) / a),
        lambda_plus=1.0,
        lambda_minus=1.0,
        name=f"two_rate({a:g},{b:g})",
    )


def _poly_y(k: np.ndarray, gamma: float) -> np.ndarray:
    k = np.asarray(k)
    pos = k > 0
    out = np.ones(k.shape)
    out[pos] = 1.0 + np.power(k[pos].astype(float), -gamma)
    return out


def builtin_polynomial_decay(gamma: float, c: float) -> Kernel:
    """``c * y_k * y_{-l}`` on ``l < 0 < k``, ``y_k * y_{-l}`` elsewhere, with ``y_k = 1 + k**-gamma`` on k >= 1."""
    if not (0 < gamma < 1 and c > 1):
        raise KernelError(f"poly_decay needs 0 < gamma < 1 and c > 1, got gamma={gamma}, c={c}")
    gamma, c = float(gamma), float(c)

    def func(k, l):
        yy = _poly_y(k, gamma) * _poly_y(-l, gamma)
        return np.where(_quadrant(k, l), c * yy, yy)

    return Kernel(
        func,
        c_upper=4.0 * c,
        c_lower=1.0,
        tags={SEPARABLE, DETAILED_BALANCE},
        spec={"family": "poly_decay", "params": {"gamma": gamma, "c": c}},
        factors=QuadrantFactors(lambda k: _poly_y(k, gamma), lambda l: _poly_y(-np.asarray(l), gamma), c),
        lambda_plus=0.5,
        lambda_minus=0.5,
        name=f"poly_decay({gamma:g},{c:g})",
    )


def tabulated(table, fill: float | None = None, c_lower: float | None = None) -> Kernel:
    """Kernel given by a square table on ``|k|, |l| <= n``; ``fill`` outside (default: the table maximum)."""
    table = np.array(table, dtype=float)
    if table.ndim != 2 or table.shape[0] != table.shape[1] or table.shape[0] % 2 != 1:
        raise KernelError("tabulated kernel needs a square table of odd size")
    if np.any(table < 0) or not np.all(np.isfinite(table)):
        raise KernelError("tabulated kernel values must be finite and nonnegative")
    n = (table.shape[0] - 1) // 2
    table.setflags(write=False)
    fill_value = float(table.max()) if fill is None else float(fill)

    def func(k, l):
        inside = (np.abs(k) <= n) & (np.abs(l) <= n)
        kk = np.clip(k + n, 0, 2 * n)
        ll = np.clip(l + n, 0, 2 * n)
        return np.where(inside, table[kk, ll], fill_value)

    return Kernel(
        func,
        c_upper=max(float(table.max()), fill_value),
        c_lower=c_lower,
        spec={"family": "table", "params": {"fill": fill_value}, "table": table.tolist()},
        name=f"table(n={n})",
    )


def perturbed(base: Kernel, k0: int, l0: int, factor: float) -> Kernel:
    """``base`` with the single value ``K(k0, l0)`` multiplied by ``factor``."""
    if not factor > 0:
        raise KernelError(f"perturbation factor must be positive, got {factor}")
    k0, l0, factor = int(k0), int(l0), float(factor)

    def func(k, l):
        v = base(k, l)
        return np.where((k == k0) & (l == l0), v * factor, v)

    lower = None if base.c_lower is None else base.c_lower * min(1.0, factor)
    spec = None
    if base.spec is not None:
        spec = {"family": "perturbed", "params": {"k": k0, "l": l0, "factor": factor}, "operands": [base.spec]}
    return Kernel(func, base.c_upper * max(1.0, factor), lower, spec=spec, name=f"perturbed({base.name})")


def kernel_product(k1: Kernel, k2: Kernel) -> Kernel:
    def func(k, l):
        return k1(k, l) * k2(k, l)

    lower = None if k1.c_lower is None or k2.c_lower is None else k1.c_lower * k2.c_lower
    tags = k1.tags & k2.tags
    factors = k1.factors * k2.factors if k1.factors is not None and k2.factors is not None else None
    spec = None
    if k1.spec is not None and k2.spec is not None:
        spec = {"family": "product", "params": {}, "operands": [k1.spec, k2.spec]}
    return Kernel(
        func,
        k1.c_upper * k2.c_upper,
        lower,
        tags=tags,
        spec=spec,
        factors=factors,
        lambda_plus=_mul_opt(k1.lambda_plus, k2.lambda_plus),
        lambda_minus=_mul_opt(k1.lambda_minus, k2.lambda_minus),
        name=f"({k1.name}*{k2.name})",
    )


def kernel_inverse(kernel: Kernel) -> Kernel:
    if kernel.c_lower is None:
        raise KernelError(f"kernel {kernel.name} has no lower bound certificate; its reciprocal is unbounded")

    def func(k, l):
        return 1.0 / kernel(k, l)

    return Kernel(
        func,
        1.0 / kernel.c_lower,
        1.0 / kernel.c_upper,
        tags=kernel.tags,
        spec=None if kernel.spec is None else {"family": "inverse", "params": {}, "operands": [kernel.spec]},
        factors=None if kernel.factors is None else kernel.factors.reciprocal(),
        lambda_plus=None if kernel.lambda_plus is None else 1.0 / kernel.lambda_plus,
        lambda_minus=None if kernel.lambda_minus is None else 1.0 / kernel.lambda_minus,
        name=f"inv({kernel.name})",
    )


def _mul_opt(a, b):
    return None if a is None or b is None else a * b


def kernel_from_spec(spec: dict) -> Kernel:
    """Build a kernel from its JSON form (recursive for product/inverse/perturbed)."""
    if not isinstance(spec, dict) or "family" not in spec:
        raise KernelError(f"kernel spec must be an object with a 'family' key, got {spec!r}")
    family = spec["family"]
    params = spec.get("params", {}) or {}
    operands = spec.get("operands", []) or []
    try:
        if family == "constant":
            return builtin_constant(params.get("value", 1.0))
        if family == "two_rate":
            return builtin_two_rate(params["a"], params["b"])
        if family == "poly_decay":
            return builtin_polynomial_decay(params["gamma"], params["c"])
        if family == "product":
            if len(operands) < 2:
                raise KernelError("product needs at least two operands")
            out = kernel_from_spec(operands[0])
            for op in operands[1:]:
                out = kernel_product(out, kernel_from_spec(op))
            return out
        if family == "inverse":
            if len(operands) != 1:
                raise KernelError("inverse needs exactly one operand")
            return kernel_inverse(kernel_from_spec(operands[0]))
        if family == "perturbed":
            if len(operands) != 1:
                raise KernelError("perturbed needs exactly one operand")
            return perturbed(kernel_from_spec(operands[0]), params["k"], params["l"], params["factor"])
        if family == "table":
            return tabulated(spec["table"], params.get("fill"))
    except KeyError as exc:
        raise KernelError(f"kernel family {family!r} is missing parameter {exc}") from None
    raise KernelError(f"unknown kernel family {family!r}")


# validation ---------------------------------------------------------------


def validate_bounds(kernel, n: int) -> None:
    """Check nonnegativity and the certificates on ``|k|, |l| <= n + 1``."""
    m = kernel.base.matrix(n + 1)
    if np.any(m < 0) or not np.all(np.isfinite(m)):
        raise KernelError(f"kernel {kernel.base.name} has negative or non-finite values on the window")
    top = float(m.max())
    if top > kernel.c_upper * (1 + 1e-12):
        raise KernelError(f"kernel {kernel.base.name} exceeds its upper certificate: {top} > {kernel.c_upper}")
    if kernel.c_lower is not None and float(m.min()) < kernel.c_lower * (1 - 1e-12):
        raise KernelError(f"kernel {kernel.base.name} falls below its lower certificate")


def is_reflection_symmetric(kernel, n: int) -> bool:
    """Whether ``K(k, l) == K(-l, -k)`` for all ``|k|, |l| <= n + 1`` (exact comparison)."""
    m = kernel.base.matrix(n + 1)
    # K(-l, -k) at [k, l] is m reversed along both axes and transposed
    return bool(np.array_equal(m, m[::-1, ::-1].T))


@dataclass(frozen=True)
class KernelWindowReport:
    window: int
    bd_max_violation: float
    db_max_violation: float
    reflection_symmetric: bool

    def as_dict(self) -> dict:
        return {
            "window": self.window,
            "bd_max_violation": self.bd_max_violation,
            "db_max_violation": self.db_max_violation,
            "reflection_symmetric": self.reflection_symmetric,
        }


def _rel(lhs: np.ndarray, rhs: np.ndarray) -> float:
    if lhs.size == 0:
        return 0.0
    return float(np.max(np.abs(lhs / rhs - 1.0)))


def check_extended_bd(kernel: Kernel, window: int = DEFAULT_PROBE) -> KernelWindowReport:
    """Evaluate the four extended Becker-Doering identity families for ``|k|, |l| <= window``.

    Also measures how far ``psi`` is from satisfying the detailed-balance
    relation ``K(k,l-1) g(k) g(l-1) = K(l,k-1) g(l) g(k-1)`` on the same window.
    """
    from .equilibria import log_psi_table

    w = int(window)
    if w < 1:
        raise KernelError("probe window must be >= 1")
    base = kernel.base
    # all kernel arguments touched below lie in [-w-1, w]
    m = base.matrix(w + 1)
    if np.any(m <= 0):
        bad = np.argwhere(m <= 0)[0] - (w + 1)
        raise KernelPositivityError(f"kernel vanishes at (k, l) = ({bad[0]}, {bad[1]})")

    def K(a, b):
        return m[a + w + 1, b + w + 1]

    idx = np.arange(-w, w + 1)
    kk, ll = np.meshgrid(idx, idx, indexing="ij")
    ratio = K(kk, ll - 1) / K(ll, kk - 1)

    worst = 0.0
    sel = (kk >= 1) & (ll >= 1)
    rhs = K(kk, 0) * K(1, ll - 1) / (K(ll, 0) * K(1, kk - 1))
    worst = max(worst, _rel(ratio[sel], rhs[sel]))
    sel = (kk <= 0) & (ll <= 0)
    rhs = K(0, ll - 1) / K(0, kk - 1) * K(kk, -1) / K(ll, -1)
    worst = max(worst, _rel(ratio[sel], rhs[sel]))
    sel = (kk >= 1) & (ll <= 0)
    rhs = K(kk, 0) / K(1, kk - 1) * K(0, ll - 1) / K(ll, -1) * K(1, -1) / K(0, 0)
    worst = max(worst, _rel(ratio[sel], rhs[sel]))
    sel = (kk <= 0) & (ll >= 1)
    rhs = K(1, ll - 1) / K(ll, 0) * K(kk, -1) / K(0, kk - 1) * K(0, 0) / K(1, -1)
    worst = max(worst, _rel(ratio[sel], rhs[sel]))

    logpsi = log_psi_table(base, w + 1)

    def lp(a):
        return logpsi[a + w + 1]

    # compare in log space: relative defect = |exp(log lhs - log rhs) - 1|
    log_l = np.log(K(kk, ll - 1)) + lp(kk) + lp(ll - 1)
    log_r = np.log(K(ll, kk - 1)) + lp(ll) + lp(kk - 1)
    db = float(np.max(np.abs(np.expm1(log_l - log_r))))

    return KernelWindowReport(
        window=w,
        bd_max_violation=worst,
        db_max_violation=db,
        reflection_symmetric=is_reflection_symmetric(base, w),
    )


def kappa(kernel: Kernel) -> float:
    return math.sqrt(kernel(1, -1) / kernel(0, 0))
