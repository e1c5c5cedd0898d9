import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xck.entropy import (
    certificate_violation,
    ckp_check,
    decay_rate,
    detailed_balance_defect,
    dissipation_check,
    entropy_production,
    lower_bound_certificate,
    perturb,
    relative_entropy,
    smallest_n0,
    stability_probe,
    trajectory_l11_bound,
    weighted_moment_bound,
)
from xck.equilibria import build_family, equilibrium_density
from xck.errors import PreconditionError
from xck.evolution import IntegratorConfig, Trajectory, evolve
from xck.kernels import builtin_constant, builtin_two_rate, perturbed, truncate
from xck.lattice import Density, Window

N = 20


@pytest.fixture(scope="module")
def family():
    return build_family(builtin_two_rate(1, 3))


@pytest.fixture(scope="module")
def f1(family):
    return equilibrium_density(family, 1.0, N).as_density(normalize=True)


def unit_densities(n=N):
    return st.lists(st.floats(0, 1), min_size=2 * n + 1, max_size=2 * n + 1).filter(lambda v: sum(v) > 1e-3).map(
        lambda v: Density(n, np.array(v) / math.fsum(v)))


def test_relative_entropy_known_values(family):
    exact = equilibrium_density(family, 1.0, 45).values  # tail ~ 2^-45
    assert relative_entropy(Density.delta(45), exact) == pytest.approx(math.log(3), abs=1e-12)
    two = Density(45, np.where(np.abs(np.arange(-45, 46)) == 1, 0.5, 0.0))
    assert relative_entropy(two, exact) == pytest.approx(math.log(3), abs=1e-12)


def test_relative_entropy_self_is_zero(f1):
    assert relative_entropy(f1, f1) == 0.0


def test_relative_entropy_rejects_bad_reference():
    with pytest.raises(PreconditionError):
        relative_entropy(Density.delta(1), Density(1, [0.5, 0.5, 0.0]))


@given(unit_densities())
def test_relative_entropy_nonnegative(f):
    ref = equilibrium_density(build_family(builtin_two_rate(1, 3)), 1.0, N).as_density(normalize=True)
    assert relative_entropy(f, ref) >= 0


def test_production_zero_at_equilibrium(f1):
    assert entropy_production(truncate(builtin_two_rate(1, 3), N), f1) <= 1e-10


def test_production_infinite_for_delta_under_unit_kernel():
    assert entropy_production(truncate(builtin_constant(1.0), 3), Density.delta(3)) == math.inf


def test_production_of_zero():
    assert entropy_production(truncate(builtin_two_rate(1, 3), 4), Density.zeros(4)) == 0.0


@given(unit_densities(6))
def test_production_nonnegative(f):
    w = entropy_production(truncate(builtin_two_rate(1, 3), 6), f)
    assert w >= 0


@given(st.lists(st.floats(0.05, 1), min_size=13, max_size=13), st.floats(0.001, 0.1))
def test_production_grows_with_the_square(vals, edge):
    # padding a positive density and enlarging the square only adds nonnegative terms
    k = builtin_two_rate(1, 3)
    wide = np.full(17, edge)
    wide[2:-2] = vals
    inner = entropy_production(truncate(k, 6), wide[2:-2])
    outer = entropy_production(truncate(k, 8), wide)
    assert outer >= inner - 1e-12 * max(1.0, inner)


def test_detailed_balance_defect(family, f1):
    assert detailed_balance_defect(truncate(family.kernel, N), f1) < 1e-12
    bad = perturbed(builtin_two_rate(1, 3), 2, 3, 1.1)
    assert detailed_balance_defect(truncate(bad, N), f1) > 0.05


def test_dissipation_along_run(family, f1):
    f0 = perturb(f1, 0.1)
    tr = evolve(truncate(family.kernel, N), f0, IntegratorConfig(t_end=1.0, dt_max=1e-3))
    rep = dissipation_check(tr, f1)
    assert rep.h_nonincreasing(1e-9)
    assert rep.dissipation_defect < 1e-3 and rep.integral_defect < 1e-4
    assert np.all(rep.h_series >= 0) and np.all(rep.w_series >= 0)


def test_dissipation_constant_trajectory(family, f1):
    tr = Trajectory(np.linspace(0, 1, 5), np.tile(f1.values, (5, 1)), Window(N), truncate(family.kernel, N),
                    np.zeros(5, int))
    rep = dissipation_check(tr, f1)
    assert np.all(rep.h_series == 0) and np.all(rep.w_series <= 1e-10)


def test_dissipation_from_delta_excludes_infinite_start(family, f1):
    tr = evolve(truncate(family.kernel, N), Density.delta(N), IntegratorConfig(t_end=0.5, dt_max=1e-2))
    rep = dissipation_check(tr, f1)
    assert math.isinf(rep.w_series[0]) and rep.h_nonincreasing()


def test_dissipation_rejects_non_balanced_reference(f1):
    bad = truncate(perturbed(builtin_two_rate(1, 3), 2, 3, 1.1), N)
    tr = evolve(bad, f1, IntegratorConfig(t_end=0.1))
    with pytest.raises(PreconditionError):
        dissipation_check(tr, f1)


def test_weighted_moment_bound_cases(family, f1):
    assert weighted_moment_bound(f1, f1, 0.0, 0) == (0.0, pytest.approx(2.0))
    h = lambda k: np.abs(k) * math.log(2) * 0.9  # noqa: E731
    n0 = smallest_n0(f1, h)
    lhs, rhs = weighted_moment_bound(f1, f1, h, n0)
    assert lhs <= rhs
    lhs, rhs = weighted_moment_bound(Density.delta(N), f1, h, max(n0, 1))
    assert lhs == 0.0 <= rhs
    with pytest.raises(PreconditionError):
        weighted_moment_bound(f1, f1, lambda k: 5.0 * np.abs(k), 0)


@given(unit_densities())
def test_weighted_moment_bound_holds(f):
    fam = build_family(builtin_two_rate(1, 3))
    ref = equilibrium_density(fam, 1.0, N).as_density(normalize=True)
    d = decay_rate(fam, 1.0) / 2
    h = lambda k: d * np.abs(k)  # noqa: E731
    assert weighted_moment_bound(f, ref, h, smallest_n0(ref, h)).holds


def test_trajectory_bound(family, f1):
    tr = evolve(truncate(family.kernel, N), perturb(f1, 0.2), IntegratorConfig(t_end=2.0))
    b = trajectory_l11_bound(tr, family, 1.0, f1)
    assert b.holds and b.delta_h == pytest.approx(math.log(2) / 2)


def test_ckp_cases(f1):
    assert ckp_check(f1, f1, lambda k: 0.1 * (1 + np.abs(k))) == (0.0, 0.0)
    lhs, rhs = ckp_check(Density.delta(N), f1, lambda k: 0.1 * (1 + np.abs(k)))
    assert 0 < lhs <= rhs
    assert ckp_check(Density.delta(N), f1, 0.0).lhs == 0.0
    with pytest.raises(OverflowError):
        ckp_check(Density.delta(N), f1, 400.0)


@settings(max_examples=40)
@given(unit_densities(), st.floats(0.0, 1.0))
def test_ckp_holds(mu, alpha):
    ref = equilibrium_density(build_family(builtin_two_rate(1, 3)), 1.0, N).as_density(normalize=True)
    assert ckp_check(mu, ref, lambda k: alpha * (1 + np.abs(k))).holds


def test_perturbation_size(f1):
    g = perturb(f1, 0.06)
    assert g.mass == pytest.approx(1.0, abs=1e-15)
    assert g.charge == pytest.approx(f1.charge, abs=1e-15)
    assert math.fsum((1 + np.abs(g.indices)) * np.abs(g.values - f1.values)) == pytest.approx(0.06)
    with pytest.raises(PreconditionError):
        perturb(f1, 5.0)


def test_stability_probe(family):
    rows = stability_probe(family.kernel, family, 1.0, [0.0, 0.1, 0.03, 0.01], 2.0, n=N, threads=2)
    assert rows[0].deviation <= 1e-9
    devs = [r.deviation for r in rows[1:]]
    assert devs[0] > devs[1] > devs[2]
    assert all(r.holds for r in rows)


def test_stability_probe_outside_interval(family):
    with pytest.raises(PreconditionError):
        stability_probe(family.kernel, family, 2.5, [0.1], 1.0)


def test_certificate_values():
    c = lower_bound_certificate(4.0, 1.0, 1.0, 1.0, 0, "geometric", 1.0, 3, window=10)
    assert c.valid_from(1) == 0.5
    assert c.bound(1, 0.5) == pytest.approx(math.exp(-4.0) / 10)
    assert c.bound(0, 0.0) == 1.0
    assert c.bound(-2, 1.0) == pytest.approx(math.exp(-8.0) * (8 + 4) ** -2)
    with pytest.raises(PreconditionError):
        c.bound(1, 0.1)
    q = lower_bound_certificate(4.0, 1.0, 1.0, 1.0, 0, "quadratic", 1.0, 2)
    assert q.sigma == pytest.approx(math.pi ** 2 / 6)
    assert q.valid_from(2) == pytest.approx(1.25 / q.sigma)


def test_certificate_gates():
    with pytest.raises(PreconditionError):
        lower_bound_certificate(4.0, None, 1.0, 1.0, 0)
    with pytest.raises(PreconditionError):
        lower_bound_certificate(4.0, 1.0, 1.0, 1.0, 0, l_max=12, window=10)
    with pytest.raises(ValueError):
        lower_bound_certificate(4.0, 1.0, 1.0, 1.0, 0, a_seq="harmonic")


def test_certificate_holds_on_simulation():
    k = builtin_two_rate(1, 3)
    tr = evolve(truncate(k, 15), Density.delta(15), IntegratorConfig(t_end=2.0))
    cert = lower_bound_certificate(k.c_upper, k.c_lower, 1.0, 1.0, 0, "geometric", 1.0, 5, window=15)
    worst, count = certificate_violation(cert, tr)
    assert count > 0 and worst <= 0
