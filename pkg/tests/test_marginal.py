from fractions import Fraction
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from fedqq.errors import CapacityError, DomainError
from fedqq.marginal import (
    MultiOrder,
    PairOrder,
    m_lk_bounds,
    m_lk_exact,
    m_lk_quadrature,
    m_lk_quadrature_batch,
    m_multi_exact,
    m_multi_quadrature,
    m_multi_quadrature_ks,
    multi_sf,
)
from fedqq.special import order_sf


# -- rational polynomial oracle --------------------------------------------------
# The cdf of U_(r:N) is the polynomial sum_{i>=r} C(N,i) t^i (1-t)^(N-i).  Composing
# and integrating these polynomials in Fractions gives E[U] = int_0^1 (1 - F)
# without going through the nested-sum formula.

def pmul(p, q):
    out = [Fraction(0)] * (len(p) + len(q) - 1)
    for i, a in enumerate(p):
        for j, b in enumerate(q):
            out[i + j] += a * b
    return out


def padd(p, q):
    size = max(len(p), len(q))
    return [(p[i] if i < len(p) else 0) + (q[i] if i < len(q) else 0) for i in range(size)]


def ppow(p, e):
    out = [Fraction(1)]
    for _ in range(e):
        out = pmul(out, p)
    return out


def order_cdf_poly(r, N, inner):
    """F_(r:N)(inner(t)) as a polynomial in t."""
    one_minus = padd([Fraction(1)], [-c for c in inner])
    out = [Fraction(0)]
    for i in range(r, N + 1):
        out = padd(out, [comb(N, i) * c for c in pmul(ppow(inner, i), ppow(one_minus, N - i))])
    return out


def pint01(p):
    return sum(c / (i + 1) for i, c in enumerate(p))


IDENTITY = [Fraction(0), Fraction(1)]


def poly_expectation(ell, n, k, m):
    return 1 - pint01(order_cdf_poly(k, m, order_cdf_poly(ell, n, IDENTITY)))


def poly_multi_expectation(ells, ns, k):
    # survival of the k-th smallest: fewer than k of the U_j lie below t
    cdfs = [order_cdf_poly(e, n, IDENTITY) for e, n in zip(ells, ns)]
    dist = [[Fraction(1)]]  # dist[c] = P(count == c) as a polynomial
    for F in cdfs:
        G = padd([Fraction(1)], [-c for c in F])
        new = [[Fraction(0)] for _ in range(len(dist) + 1)]
        for c, poly in enumerate(dist):
            new[c] = padd(new[c], pmul(poly, G))
            new[c + 1] = padd(new[c + 1], pmul(poly, F))
        dist = new
    sf = [Fraction(0)]
    for c in range(k):
        sf = padd(sf, dist[c])
    return pint01(sf)


# -- tests ------------------------------------------------------------------------

@pytest.mark.parametrize("m,n", [(1, 1), (1, 5), (2, 3), (3, 3), (3, 4), (4, 2)])
def test_exact_matches_polynomial_oracle(m, n):
    for ell in range(1, n + 1):
        for k in range(1, m + 1):
            assert m_lk_exact(PairOrder(ell, k, n, m)) == poly_expectation(ell, n, k, m)


def test_single_agent_is_uniform_order_mean():
    for n in range(1, 10):
        for ell in range(1, n + 1):
            assert m_lk_exact(PairOrder(ell, 1, n, 1)) == Fraction(ell, n + 1)


def test_single_score_per_agent():
    # n = 1: the server takes the k-th of m uniforms
    for m in range(1, 6):
        for k in range(1, m + 1):
            assert m_lk_exact(PairOrder(1, k, 1, m)) == Fraction(k, m + 1)


def test_complement_symmetry():
    for ell in range(1, 5):
        for k in range(1, 4):
            a = m_lk_exact(PairOrder(ell, k, 4, 3))
            b = m_lk_exact(PairOrder(5 - ell, 4 - k, 4, 3))
            assert a + b == 1


@pytest.mark.parametrize("m,n", [(2, 2), (5, 8), (4, 7)])
def test_quadrature_matches_exact(m, n):
    for ell in range(1, n + 1):
        for k in range(1, m + 1):
            o = PairOrder(ell, k, n, m)
            assert m_lk_quadrature(o) == pytest.approx(float(m_lk_exact(o)), abs=1e-12)


def test_quadrature_batch_matches_single():
    ells, ks = np.array([3, 10, 19]), np.array([2, 40, 79])
    batch = m_lk_quadrature_batch(ells, ks, 20, 200, tol=1e-12)
    single = [m_lk_quadrature(PairOrder(int(e), int(k), 20, 200), tol=1e-12) for e, k in zip(ells, ks)]
    np.testing.assert_allclose(batch, single, atol=1e-12)


def test_quadrature_monte_carlo_large():
    rng = np.random.default_rng(2)
    ell, k, n, m = 19, 79, 20, 200
    inner = rng.beta(ell, n - ell + 1, size=(20_000, m))
    x = np.partition(inner, k - 1, axis=1)[:, k - 1]
    est = m_lk_quadrature(PairOrder(ell, k, n, m))
    assert abs(x.mean() - est) < 4 * x.std() / np.sqrt(x.size)
    # the planner output at this shape reproduces the tabulated mean
    assert est == pytest.approx(0.90004, abs=1e-5)


def test_bounds_strict_small_grid():
    for m in range(1, 6):
        for n in range(1, 9):
            for ell in range(1, n + 1):
                for k in range(1, m + 1):
                    o = PairOrder(ell, k, n, m)
                    lo, hi = m_lk_bounds(o)
                    assert lo < float(m_lk_exact(o)) < hi


def test_bounds_values():
    assert m_lk_bounds(PairOrder(1, 1, 1, 1)) == pytest.approx((1 / 3, 2 / 3), abs=1e-15)
    lo, hi = m_lk_bounds(PairOrder(2, 3, 4, 5))
    assert lo == pytest.approx(stats.beta.ppf(2.5 / 5.5, 2, 3), rel=1e-10)
    assert hi == pytest.approx(stats.beta.ppf(3 / 5.5, 2, 3), rel=1e-10)


def test_bounds_nondecreasing_in_k():
    for n in (3, 20):
        for ell in range(1, n + 1):
            b = np.array([m_lk_bounds(PairOrder(ell, k, n, 12)) for k in range(1, 13)])
            assert np.all(np.diff(b[:, 0]) > 0) and np.all(np.diff(b[:, 1]) > 0)


def test_capacity_and_domain_errors():
    with pytest.raises(CapacityError):
        m_lk_exact(PairOrder(1, 1, 13, 2))
    with pytest.raises(CapacityError):
        m_lk_exact(PairOrder(1, 1, 2, 7))
    with pytest.raises(DomainError):
        PairOrder(0, 1, 3, 3)
    with pytest.raises(DomainError):
        PairOrder(1, 4, 3, 3)
    with pytest.raises(DomainError):
        MultiOrder((1, 3), (2, 2), 1)
    with pytest.raises(DomainError):
        MultiOrder((1,), (2, 2), 1)
    with pytest.raises(DomainError):
        MultiOrder((1, 1), (2, 2), 3)


class TestMulti:
    @pytest.mark.parametrize("ells,ns,k", [
        ((1, 2), (2, 3), 1), ((1, 2), (2, 3), 2), ((2, 2, 3), (3, 4, 5), 2),
        ((1, 4, 5), (1, 5, 5), 3), ((3,), (5,), 1),
    ])
    def test_exact_matches_polynomial_oracle(self, ells, ns, k):
        assert m_multi_exact(MultiOrder(ells, ns, k)) == poly_multi_expectation(ells, ns, k)

    def test_equal_sizes_reduce_to_pair(self):
        for ell in range(1, 4):
            for k in range(1, 4):
                a = m_multi_exact(MultiOrder((ell,) * 3, (3,) * 3, k))
                assert a == m_lk_exact(PairOrder(ell, k, 3, 3))

    def test_quadrature(self):
        o = MultiOrder((2, 3, 5), (3, 4, 5), 2)
        assert m_multi_quadrature(o) == pytest.approx(float(m_multi_exact(o)), abs=1e-12)

    def test_quadrature_ks(self):
        ells, ns = (2, 3, 5, 1), (3, 4, 5, 2)
        got = m_multi_quadrature_ks(ells, ns, [1, 2, 3, 4])
        ref = [float(m_multi_exact(MultiOrder(ells, ns, k))) for k in range(1, 5)]
        np.testing.assert_allclose(got, ref, atol=1e-11)

    def test_sf_brute_force(self):
        rng = np.random.default_rng(4)
        ells, ns, k = (2, 7, 4), (3, 9, 6), 2
        u = np.stack([rng.beta(e, n - e + 1, 200_000) for e, n in zip(ells, ns)], axis=1)
        x = np.sort(u, axis=1)[:, k - 1]
        t = np.linspace(0.05, 0.95, 7)
        emp = (x[:, None] > t).mean(axis=0)
        np.testing.assert_allclose(multi_sf(ells, ns, k, t), emp, atol=4e-3)

    def test_capacity(self):
        with pytest.raises(CapacityError):
            m_multi_exact(MultiOrder((1,) * 5, (1,) * 5, 1))


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 60), m=st.integers(1, 60), data=st.data())
def test_monotone_in_orders(n, m, data):
    ell = data.draw(st.integers(1, n))
    k = data.draw(st.integers(1, m))
    base = m_lk_quadrature(PairOrder(ell, k, n, m))
    assert 0 < base < 1
    if ell < n:
        assert m_lk_quadrature(PairOrder(ell + 1, k, n, m)) > base
    if k < m:
        assert m_lk_quadrature(PairOrder(ell, k + 1, n, m)) > base


def test_order_sf_consistency():
    # 1 - M equals the integral of the cdf, which is E[1 - U]
    o = PairOrder(3, 2, 5, 4)
    t = np.linspace(0, 1, 200_001)
    cdf = 1 - order_sf(2, 4, 1 - order_sf(3, 5, t))
    assert np.trapezoid(cdf, t) == pytest.approx(1 - float(m_lk_exact(o)), abs=1e-9)
