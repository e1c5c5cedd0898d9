import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from xck.collision import (
    L1,
    L11,
    q_apply,
    q_apply_naive,
    q_lipschitz_bound,
    q_operator_bound,
    rate_profile,
)
from xck.errors import WindowMismatchError
from xck.kernels import builtin_constant, builtin_polynomial_decay, builtin_two_rate, tabulated, truncate
from xck.lattice import Density, l1_norm, l11_norm

KERNELS = [builtin_constant(1.0), builtin_two_rate(1, 3), builtin_polynomial_decay(0.5, 4)]


def density_pair(max_n=15):
    return st.integers(1, max_n).flatmap(lambda n: st.tuples(
        st.lists(st.floats(0, 1), min_size=2 * n + 1, max_size=2 * n + 1),
        st.lists(st.floats(0, 1), min_size=2 * n + 1, max_size=2 * n + 1),
    ))


def test_unit_kernel_on_delta():
    # one particle at 0 exchanging with itself: it hops left or right at unit rate
    out = q_apply(builtin_constant(1.0), Density.delta(2))
    assert np.array_equal(out, [0, 1, -2, 1, 0])


def test_zero_in_zero_out():
    for k in KERNELS:
        assert np.array_equal(q_apply(k, Density.zeros(4)), np.zeros(9))


def test_window_mismatch():
    with pytest.raises(WindowMismatchError):
        q_apply(KERNELS[0], Density.delta(2), Density.delta(3))


def test_dense_and_factor_paths_agree():
    rng = np.random.default_rng(1)
    for k in KERNELS:
        for kern in (k, truncate(k, 12)):
            f, g = rng.uniform(size=25), rng.uniform(size=25)
            a = q_apply(kern, f, g, use_factors=True)
            b = q_apply(kern, f, g, use_factors=False)
            np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-15)


def test_rates_for_two_rate_delta():
    # g = delta_0: R_out(k) = K(k,0), R_in(k) = K(0,k)
    rates = rate_profile(builtin_two_rate(1, 3), Density.delta(3).values)
    assert np.array_equal(rates.r_out, np.ones(7))
    assert np.array_equal(rates.r_in, np.ones(7))


def test_naive_matches_oracle_name():
    f = Density.delta(3)
    assert np.array_equal(q_apply_naive(KERNELS[1], f), q_apply(KERNELS[1], f))


@given(density_pair(), st.sampled_from(range(3)), st.booleans())
def test_matches_literal_sum(pair, which, trunc):
    f, g = (np.array(x) for x in pair)
    n = (f.size - 1) // 2
    kern = truncate(KERNELS[which], n) if trunc else KERNELS[which]
    fast = q_apply(kern, f, g)
    slow = q_apply_naive(kern, f, g)
    np.testing.assert_allclose(fast, slow, rtol=1e-12, atol=1e-13)


@given(density_pair(), st.sampled_from(range(3)))
def test_truncated_operator_conserves(pair, which):
    f, g = (np.array(x) for x in pair)
    n = (f.size - 1) // 2
    kern = truncate(KERNELS[which], n)
    k = np.arange(-n, n + 1)
    out = q_apply(kern, f, g)
    scale = max(1.0, float(np.abs(out).sum()))
    assert abs(out.sum()) <= 1e-12 * scale
    # charge moves between f and g; only the symmetrized form conserves it
    sym = out + q_apply(kern, g, f)
    assert abs((k * sym).sum()) <= 1e-12 * scale * (n + 1)
    own = q_apply(kern, f)
    assert abs((k * own).sum()) <= 1e-12 * max(1.0, float(np.abs(own).sum())) * (n + 1)


@given(density_pair(8), st.floats(-3, 3), st.floats(-3, 3))
def test_bilinear(pair, a, b):
    f, g = (np.array(x) for x in pair)
    kern = KERNELS[1]
    lhs = q_apply(kern, a * f + b * g, g)
    rhs = a * q_apply(kern, f, g) + b * q_apply(kern, g, g)
    np.testing.assert_allclose(lhs, rhs, atol=1e-11 * (1 + abs(a) + abs(b)) * (f.sum() + g.sum() + 1) ** 2)


@given(density_pair(10))
def test_operator_bounds(pair):
    f, g = (np.array(x) for x in pair)
    kern = KERNELS[2]
    out = q_apply(kern, f, g)
    assert l1_norm(out) <= q_operator_bound(kern, f, g, L1) * (1 + 1e-12) + 1e-15
    assert l11_norm(out) <= q_operator_bound(kern, f, g, L11) * (1 + 1e-12) + 1e-15


@given(density_pair(8), density_pair(8))
def test_lipschitz(p1, p2):
    f1, _ = (np.array(x) for x in p1)
    f2, _ = (np.array(x) for x in p2)
    if f1.size != f2.size:
        return
    kern = KERNELS[1]
    diff = q_apply(kern, f1) - q_apply(kern, f2)
    assert l1_norm(diff) <= q_lipschitz_bound(kern, f1, f2, L1) * l1_norm(f1 - f2) * (1 + 1e-12) + 1e-14


def test_bound_space_validation():
    with pytest.raises(ValueError):
        q_operator_bound(KERNELS[0], np.ones(3), np.ones(3), "l2")


def test_random_table_kernel_dense_path():
    rng = np.random.default_rng(5)
    kern = tabulated(rng.uniform(0.5, 1.5, size=(13, 13)))
    f = rng.uniform(size=11)
    np.testing.assert_allclose(q_apply(kern, f), q_apply_naive(kern, f), rtol=1e-13, atol=1e-15)
