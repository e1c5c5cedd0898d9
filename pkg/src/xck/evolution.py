"""Time integration of the truncated system ``f' = Q^N(f)``.

Classical RK4 with a step cap ``dt <= safety / (2 C_K m(f0))``. A step that
drives any entry below ``-neg_tolerance`` is rejected and retried at half the
step; surviving entries in ``(-neg_tolerance, 0)`` are clamped to zero. Mass
and charge are monitored but never projected back.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .collision import q_apply
from .errors import NonFiniteStateError, PreconditionError, StepSizeUnderflowError
from .kernels import Kernel, TruncatedKernel, is_reflection_symmetric, truncate, validate_bounds
from .lattice import Density, MomentSet, Window, embed, l11_norm

MAX_HALVINGS = 40


@dataclass(frozen=True)
class IntegratorConfig:
    t_end: float
    dt_max: float = 0.01
    safety: float = 0.1
    neg_tolerance: float = 1e-12
    record_stride: int = 1

    def __post_init__(self):
        if not self.t_end > 0:
            raise ValueError(f"t_end must be positive, got {self.t_end}")
        if not self.dt_max > 0:
            raise ValueError(f"dt_max must be positive, got {self.dt_max}")
        if not 0 < self.safety <= 1:
            raise ValueError(f"safety must lie in (0, 1], got {self.safety}")
        if not self.neg_tolerance >= 0:
            raise ValueError("neg_tolerance must be nonnegative")
        if int(self.record_stride) != self.record_stride or self.record_stride < 1:
            raise ValueError(f"record_stride must be a positive integer, got {self.record_stride}")

    def step_size(self, c_upper: float, mass: float) -> float:
        if mass <= 0:
            return self.dt_max
        return min(self.dt_max, self.safety / (2.0 * c_upper * mass))


@dataclass
class Trajectory:
    """Recorded states ``values[i]`` at ``times[i]`` on a common window."""

    times: np.ndarray
    values: np.ndarray
    window: Window
    kernel: TruncatedKernel
    clamp_counts: np.ndarray
    halvings: int = 0
    steps: int = 0
    entropy: np.ndarray | None = None
    production: np.ndarray | None = None
    extras: dict = field(default_factory=dict)

    def __len__(self):
        return self.times.size

    @property
    def indices(self) -> np.ndarray:
        return self.window.indices

    def state(self, i: int) -> Density:
        return Density(self.window, self.values[i])

    @property
    def states(self) -> list[Density]:
        return [self.state(i) for i in range(len(self))]

    def masses(self) -> np.ndarray:
        return np.array([math.fsum(v) for v in self.values])

    def charges(self) -> np.ndarray:
        k = self.indices
        return np.array([math.fsum(k * v) for v in self.values])

    def abs_charges(self) -> np.ndarray:
        k = np.abs(self.indices)
        return np.array([math.fsum(k * v) for v in self.values])

    def l11_norms(self) -> np.ndarray:
        return np.array([l11_norm(v) for v in self.values])

    def moments(self) -> list[MomentSet]:
        return [MomentSet(m, q, a, m, m + a) for m, q, a in zip(self.masses(), self.charges(), self.abs_charges())]

    def conservation_drift(self) -> tuple[float, float]:
        """Max relative drift of mass and of charge against the initial state.

        Charge drift is measured relative to ``max(|q0|, |f0|_{1,1})`` so that
        charge-neutral initial data still give a meaningful scale.
        """
        m = self.masses()
        q = self.charges()
        m0, q0 = m[0], q[0]
        mscale = abs(m0) if m0 != 0 else 1.0
        qscale = max(abs(q0), l11_norm(self.values[0])) or 1.0
        return float(np.max(np.abs(m - m0)) / mscale), float(np.max(np.abs(q - q0)) / qscale)


def _as_truncated(kernel, n: int) -> TruncatedKernel:
    if isinstance(kernel, TruncatedKernel):
        if kernel.n != n:
            raise PreconditionError(f"kernel truncated at N={kernel.n} but state lives on n={n}")
        return kernel
    if isinstance(kernel, Kernel):
        return truncate(kernel, n)
    raise TypeError(f"expected a Kernel or TruncatedKernel, got {type(kernel).__name__}")


def _rk4(kernel, f: np.ndarray, dt: float) -> np.ndarray:
    k1 = q_apply(kernel, f)
    k2 = q_apply(kernel, f + 0.5 * dt * k1)
    k3 = q_apply(kernel, f + 0.5 * dt * k2)
    k4 = q_apply(kernel, f + dt * k3)
    return f + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def evolve(kernel, f0: Density, cfg: IntegratorConfig) -> Trajectory:
    """Integrate the truncated system from ``f0`` up to ``cfg.t_end``."""
    kern = _as_truncated(kernel, f0.n)
    validate_bounds(kern, f0.n)
    f = np.array(f0.values, dtype=float)
    mass0 = math.fsum(f)
    dt_nominal = cfg.step_size(kern.c_upper, mass0)
    t = 0.0
    times, states, clamps = [0.0], [f.copy()], [0]
    total_clamps = halvings = accepted = 0
    while t < cfg.t_end:
        # the final step lands exactly on t_end
        remaining = cfg.t_end - t
        dt = dt_nominal if remaining > dt_nominal * (1 + 1e-12) else remaining
        for _ in range(MAX_HALVINGS + 1):
            trial = _rk4(kern, f, dt)
            if not np.all(np.isfinite(trial)):
                raise NonFiniteStateError(f"non-finite state at t={t + dt:.6g}")
            if trial.min() >= -cfg.neg_tolerance:
                break
            dt *= 0.5
            halvings += 1
        else:
            raise StepSizeUnderflowError(f"positivity could not be restored at t={t:.6g} after {MAX_HALVINGS} halvings")
        neg = trial < 0
        if neg.any():
            total_clamps += int(np.count_nonzero(neg))
            trial[neg] = 0.0
        f = trial
        t = cfg.t_end if dt == remaining else t + dt
        accepted += 1
        if accepted % cfg.record_stride == 0 or t >= cfg.t_end:
            times.append(t)
            states.append(f.copy())
            clamps.append(total_clamps)
    return Trajectory(
        times=np.array(times),
        values=np.array(states),
        window=f0.window,
        kernel=kern,
        clamp_counts=np.array(clamps),
        halvings=halvings,
        steps=accepted,
    )


# trajectory invariants ------------------------------------------------------


def exponential_lower_bound_violation(traj: Trajectory) -> float:
    """Largest ``e^{-2 C_K m (t - t0)} f(t0, k) - f(t, k)`` over all recorded ``t0 < t``.

    Uses ``max_{t0 < t} e^{a t0} f(t0, k)`` as a running maximum, so every pair
    is covered in O(T n).
    """
    a = 2.0 * traj.kernel.c_upper * math.fsum(traj.values[0])
    worst = -math.inf
    best = np.full(traj.values.shape[1], -math.inf)  # running max of log(f(t0)) + a*t0
    with np.errstate(divide="ignore"):
        for t, v in zip(traj.times, traj.values):
            if np.isfinite(best).any():
                bound = np.exp(best - a * t)
                worst = max(worst, float(np.max(bound - v)))
            best = np.maximum(best, np.log(v) + a * t)
    return max(worst, 0.0) if worst != -math.inf else 0.0


def l11_growth_violation(traj: Trajectory) -> float:
    """Largest excess of ``|f(t)|_{1,1}`` over ``|f0|_{1,1} + 2 C_K m^2 t``."""
    m = math.fsum(traj.values[0])
    norms = traj.l11_norms()
    bound = norms[0] + 2.0 * traj.kernel.c_upper * m * m * traj.times
    return float(max(0.0, np.max(norms - bound)))


def clamp_fraction(traj: Trajectory) -> float:
    touched = max(traj.steps, 1) * traj.values.shape[1]
    return float(traj.clamp_counts[-1]) / touched


# studies -----------------------------------------------------------------------


@dataclass(frozen=True)
class RefinementRow:
    n: int
    discrepancy: float


def refinement_study(kernel: Kernel, f0: Density, t_end: float, n_list, cfg: IntegratorConfig | None = None,
                     n_ref: int | None = None) -> list[RefinementRow]:
    """Sup-in-time l11 distance between truncated runs and a finer reference run."""
    n_list = sorted(int(n) for n in n_list)
    if not n_list:
        raise ValueError("n_list must be nonempty")
    n_ref = 2 * n_list[-1] if n_ref is None else int(n_ref)
    base = kernel.base
    cfg = IntegratorConfig(t_end=t_end) if cfg is None else replace(cfg, t_end=t_end)
    # one common step for every run: the cap at the largest (reference) mass
    f_ref0 = embed(f0, n_ref)
    dt = cfg.step_size(base.c_upper, max(f_ref0.mass, f0.mass))
    cfg = replace(cfg, dt_max=dt)
    ref = evolve(truncate(base, n_ref), f_ref0, cfg)
    rows = []
    for n in n_list:
        run = ref if n == n_ref else evolve(truncate(base, n), embed(f0, n), cfg)
        rows.append(RefinementRow(n, _sup_distance(run, ref)))
    return rows


def _sup_distance(run: Trajectory, ref: Trajectory) -> float:
    if run.times.shape != ref.times.shape or not np.allclose(run.times, ref.times, rtol=0, atol=1e-12):
        raise PreconditionError("runs were recorded on different time grids")
    n, N = run.window.n, ref.window.n
    worst = 0.0
    for a, b in zip(run.values, ref.values):
        wide = np.zeros(2 * N + 1)
        wide[N - n:N + n + 1] = a
        worst = max(worst, l11_norm(wide - b))
    return worst


@dataclass(frozen=True)
class RescaleReport:
    gamma: float
    max_discrepancy: float
    times: np.ndarray


def rescale_check(kernel, f0: Density, gamma: float, t_end: float = 1.0,
                  cfg: IntegratorConfig | None = None) -> RescaleReport:
    """Compare ``g(t) = gamma f(gamma t)`` with a direct run from ``gamma f0``.

    With ``lambda = 1/gamma`` the rescaled function solves the same equation
    (kernel ``gamma * lambda * K = K``), so both must agree up to rounding.
    """
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    base = kernel.base
    kern = truncate(base, f0.n)
    cfg = IntegratorConfig(t_end=t_end) if cfg is None else cfg
    dt_direct = cfg.step_size(base.c_upper, gamma * f0.mass)
    slow = evolve(kern, f0, replace(cfg, t_end=gamma * t_end, dt_max=gamma * dt_direct, safety=1.0))
    g0 = Density(f0.window, gamma * f0.values)
    direct = evolve(kern, g0, replace(cfg, t_end=t_end, dt_max=dt_direct, safety=1.0))
    if slow.times.size != direct.times.size:
        raise PreconditionError("rescaled runs recorded a different number of states")
    worst = max(l11_norm(gamma * a - b) for a, b in zip(slow.values, direct.values))
    return RescaleReport(gamma, float(worst), direct.times)


@dataclass(frozen=True)
class SymmetryReport:
    applicable: bool
    max_asymmetry: float
    reason: str = ""


def symmetry_check(kernel, f0: Density, cfg: IntegratorConfig | None = None, atol: float = 1e-15) -> SymmetryReport:
    """Evolve a symmetric ``f0`` under a reflection-symmetric kernel and measure ``max |f(t,k) - f(t,-k)|``."""
    from .errors import KernelError

    if not is_reflection_symmetric(kernel.base, f0.n):
        raise KernelError(f"kernel {kernel.base.name} violates K(k,l) = K(-l,-k) on the window")
    if not f0.is_symmetric(atol):
        return SymmetryReport(False, math.nan, "not applicable: initial datum is not symmetric")
    cfg = IntegratorConfig(t_end=1.0) if cfg is None else cfg
    traj = evolve(_as_truncated(kernel, f0.n) if isinstance(kernel, TruncatedKernel) else truncate(kernel, f0.n), f0, cfg)
    asym = float(np.max(np.abs(traj.values - traj.values[:, ::-1])))
    return SymmetryReport(True, asym)
