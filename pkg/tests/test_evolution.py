import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xck import evolution as evo
from xck.errors import KernelError, NonFiniteStateError, PreconditionError, StepSizeUnderflowError
from xck.evolution import (
    IntegratorConfig,
    clamp_fraction,
    evolve,
    exponential_lower_bound_violation,
    l11_growth_violation,
    refinement_study,
    rescale_check,
    symmetry_check,
)
from xck.kernels import builtin_constant, builtin_two_rate, perturbed, tabulated, truncate
from xck.lattice import Density
from xck.oracles import heat_green

# e^{-2} I_0(2), frozen from scipy.special.iv
HEAT_G10 = 0.30850832255367103953


def test_config_validation():
    with pytest.raises(ValueError):
        IntegratorConfig(t_end=0)
    with pytest.raises(ValueError):
        IntegratorConfig(t_end=1, dt_max=-1)
    with pytest.raises(ValueError):
        IntegratorConfig(t_end=1, safety=1.5)
    with pytest.raises(ValueError):
        IntegratorConfig(t_end=1, record_stride=0)
    cfg = IntegratorConfig(t_end=1, dt_max=1.0, safety=0.1)
    assert cfg.step_size(4.0, 1.0) == pytest.approx(0.0125)


def test_heat_kernel_value():
    tr = evolve(truncate(builtin_constant(1.0), 200), Density.delta(200), IntegratorConfig(t_end=1.0))
    assert tr.times[-1] == 1.0
    assert tr.values[-1, 200] == pytest.approx(HEAT_G10, abs=1e-6)


def test_zero_stays_zero(two_rate):
    tr = evolve(truncate(two_rate, 5), Density.zeros(5), IntegratorConfig(t_end=1.0))
    assert not tr.values.any()


def test_two_rate_conservation(two_rate):
    tr = evolve(truncate(two_rate, 40), Density.delta(40), IntegratorConfig(t_end=2.0))
    assert np.all(np.abs(tr.masses() - 1) <= 1e-10)
    assert np.all(np.abs(tr.charges()) <= 1e-10)
    assert np.all(tr.values >= 0)
    assert clamp_fraction(tr) < 1e-3


def test_times_and_stride(two_rate):
    tr = evolve(truncate(two_rate, 5), Density.delta(5), IntegratorConfig(t_end=0.105, dt_max=0.01, record_stride=3))
    assert tr.times[0] == 0 and tr.times[-1] == 0.105
    assert np.all(np.diff(tr.times) > 0)
    assert tr.steps == 11
    assert len(tr) == 1 + 3 + 1


def test_kernel_window_must_match(two_rate):
    with pytest.raises(PreconditionError):
        evolve(truncate(two_rate, 4), Density.delta(5), IntegratorConfig(t_end=0.1))


def test_untruncated_kernel_is_truncated(two_rate):
    a = evolve(two_rate, Density.delta(4), IntegratorConfig(t_end=0.2))
    b = evolve(truncate(two_rate, 4), Density.delta(4), IntegratorConfig(t_end=0.2))
    assert np.array_equal(a.values, b.values)


def test_positivity_rejection_halves_steps(monkeypatch):
    real = evo._rk4
    calls = []

    def flaky(kernel, f, dt):
        calls.append(dt)
        out = real(kernel, f, dt)
        if len(calls) == 1:
            out[0] = -1e-6
        elif len(calls) == 2:
            out[0] = -1e-13  # within tolerance: clamped, not rejected
        return out

    monkeypatch.setattr(evo, "_rk4", flaky)
    tr = evolve(truncate(builtin_constant(1.0), 3), Density.delta(3), IntegratorConfig(t_end=0.1, dt_max=0.1))
    assert tr.halvings == 1
    assert calls[1] == calls[0] / 2
    assert tr.clamp_counts[-1] >= 1
    assert np.all(tr.values >= 0)


def test_step_underflow(monkeypatch):
    monkeypatch.setattr(evo, "_rk4", lambda kernel, f, dt: f - 1.0)
    with pytest.raises(StepSizeUnderflowError):
        evolve(truncate(builtin_constant(1.0), 2), Density.delta(2), IntegratorConfig(t_end=0.1))


def test_non_finite_state(monkeypatch):
    monkeypatch.setattr(evo, "_rk4", lambda kernel, f, dt: f * np.nan)
    with pytest.raises(NonFiniteStateError):
        evolve(truncate(builtin_constant(1.0), 2), Density.delta(2), IntegratorConfig(t_end=0.1))


def test_unit_kernel_abs_charge_rate():
    tr = evolve(truncate(builtin_constant(1.0), 60), Density.delta(60), IntegratorConfig(t_end=1.0, dt_max=1e-3))
    absq = tr.abs_charges()
    rate = (absq[2:] - absq[:-2]) / (tr.times[2:] - tr.times[:-2])
    np.testing.assert_allclose(rate, 2 * tr.values[1:-1, 60], atol=1e-4)


def test_exponential_lower_bound_and_growth(two_rate):
    tr = evolve(truncate(two_rate, 10), Density(10, np.full(21, 1 / 21)), IntegratorConfig(t_end=2.0))
    assert exponential_lower_bound_violation(tr) <= 1e-9
    assert l11_growth_violation(tr) == 0.0


def test_refinement_against_itself(two_rate):
    rows = refinement_study(two_rate, Density.delta(5), 0.5, [6], n_ref=6)
    assert rows[0].discrepancy == 0.0


def test_refinement_confined_unit_kernel():
    rows = refinement_study(builtin_constant(1.0), Density.delta(3), 0.01, [10, 20])
    assert rows[-1].discrepancy < 1e-8


def test_refinement_decreases(two_rate):
    d = [r.discrepancy for r in refinement_study(two_rate, Density.delta(5), 1.0, [5, 10, 20])]
    assert d[0] > d[1] > d[2]


@pytest.mark.parametrize("gamma,kernel", [(1.0, builtin_two_rate(1, 3)), (2.0, builtin_constant(1.0)),
                                          (0.5, builtin_two_rate(1, 3)), (3.0, builtin_two_rate(1, 3))])
def test_rescale(gamma, kernel):
    rep = rescale_check(kernel, Density.delta(15), gamma, t_end=1.0)
    assert rep.max_discrepancy <= 1e-8


def test_symmetry_preserved():
    rep = symmetry_check(builtin_constant(1.0), Density(2, [0.1, 0.2, 0.4, 0.2, 0.1]))
    assert rep.applicable and rep.max_asymmetry <= 1e-12
    rep = symmetry_check(builtin_two_rate(1, 3), Density(4, [0, 0, 0, 0.5, 0, 0.5, 0, 0, 0]))
    assert rep.max_asymmetry <= 1e-10


def test_symmetry_gates(two_rate):
    rep = symmetry_check(two_rate, Density.delta(3, 1))
    assert not rep.applicable and "not applicable" in rep.reason
    with pytest.raises(KernelError):
        symmetry_check(perturbed(two_rate, 2, 3, 1.1), Density.delta(3))


def test_deterministic(two_rate):
    f0 = Density(6, np.linspace(0, 1, 13) / 6.5)
    a = evolve(truncate(two_rate, 6), f0, IntegratorConfig(t_end=1.0))
    b = evolve(truncate(two_rate, 6), f0, IntegratorConfig(t_end=1.0))
    assert np.array_equal(a.values, b.values)


@settings(max_examples=15)
@given(st.integers(2, 12), st.integers(0, 2**32 - 1))
def test_random_runs_obey_invariants(n, seed):
    rng = np.random.default_rng(seed)
    kern = tabulated(rng.uniform(0.2, 2.0, size=(2 * n + 3, 2 * n + 3)), c_lower=0.2)
    v = rng.uniform(size=2 * n + 1)
    f0 = Density(n, v / v.sum())
    tr = evolve(truncate(kern, n), f0, IntegratorConfig(t_end=1.0))
    dm, dq = tr.conservation_drift()
    assert dm <= 1e-10 and dq <= 1e-10
    assert np.all(tr.values >= 0)
    assert exponential_lower_bound_violation(tr) <= 1e-9
    assert l11_growth_violation(tr) <= 1e-12
    assert math.isclose(tr.times[-1], 1.0)


def test_heat_oracle_consistency_small_time():
    tr = evolve(truncate(builtin_constant(1.0), 30), Density.delta(30), IntegratorConfig(t_end=0.3, dt_max=1e-3))
    assert tr.values[-1, 31] == pytest.approx(heat_green(0.3, 1), abs=1e-9)
