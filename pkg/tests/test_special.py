import itertools
import math
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from fedqq import special
from fedqq.errors import DomainError
from fedqq.special import (
    BetaBetaLaw,
    OrderStatLaw,
    PoissonBinomialLaw,
    beta_beta_cdf,
    beta_beta_quantile,
    beta_quantile_bounds,
    order_cdf,
    order_pdf,
    order_quantile,
    order_sf,
    pb_lower_tail,
    poisson_binomial_cdf,
    poisson_binomial_pmf,
)

mpmath.mp.dps = 40


def mp_lower(r, N, t):
    """Regularized incomplete Beta I_t(r, N-r+1) in high precision."""
    a, b = mpmath.mpf(r), mpmath.mpf(N - r + 1)
    t = mpmath.mpf(t)
    # integrate from the nearer endpoint so small tails keep full precision
    if t < a / (a + b):
        return mpmath.betainc(a, b, 0, t, regularized=True)
    return 1 - mpmath.betainc(b, a, 0, 1 - t, regularized=True)


def mp_upper(r, N, t):
    a, b = mpmath.mpf(r), mpmath.mpf(N - r + 1)
    return mpmath.betainc(b, a, 0, 1 - mpmath.mpf(t), regularized=True)


def binomial_tail(r, N, t: Fraction) -> Fraction:
    """P(Bin(N, t) >= r), the cdf of U_(r:N), in rationals."""
    return sum(math.comb(N, i) * t**i * (1 - t) ** (N - i) for i in range(r, N + 1))


class TestOrderCdf:
    @pytest.mark.parametrize("r,N", [(1, 1), (1, 7), (3, 7), (7, 7), (20, 41), (900, 1000), (3601, 3999)])
    def test_matches_scipy(self, r, N):
        t = np.linspace(0, 1, 301)
        ref = stats.beta.cdf(t, r, N - r + 1)
        np.testing.assert_allclose(order_cdf(r, N, t), ref, rtol=1e-11, atol=1e-300)

    @pytest.mark.parametrize("r,N,t", [
        (2, 5, 0.01), (50, 100, 0.3), (50, 100, 0.7), (400, 5000, 0.0801),
        (4999, 5000, 0.999), (10, 20, 1e-6), (3, 4000, 1e-3), (2000, 4000, 0.5001),
    ])
    def test_relative_accuracy_vs_mpmath(self, r, N, t):
        lo, hi = special._betainc_pair(float(r), float(N - r + 1), np.array([t]))
        exp_lo, exp_hi = mp_lower(r, N, t), mp_upper(r, N, t)
        for got, exp in ((lo[0], exp_lo), (hi[0], exp_hi)):
            if exp >= mpmath.mpf("1e-100"):
                assert abs(got - float(exp)) <= 1e-12 * float(exp)

    @pytest.mark.parametrize("N", [1, 4, 9, 15])
    def test_binomial_identity_exact(self, N):
        t = Fraction(3, 11)
        for r in range(1, N + 1):
            exact = float(binomial_tail(r, N, t))
            assert order_cdf(r, N, 3 / 11) == pytest.approx(exact, rel=1e-13)

    def test_endpoints(self):
        for r, N in [(1, 1), (2, 9), (9, 9)]:
            assert order_cdf(r, N, 0.0) == 0.0
            assert order_cdf(r, N, 1.0) == 1.0
            assert order_sf(r, N, 0.0) == 1.0
            assert order_sf(r, N, 1.0) == 0.0

    def test_closed_forms_for_extreme_ranks(self):
        t = np.linspace(0, 1, 11)
        np.testing.assert_allclose(order_cdf(6, 6, t), t**6, rtol=1e-15)
        np.testing.assert_allclose(order_cdf(1, 6, t), 1 - (1 - t) ** 6, rtol=1e-14)

    def test_sf_complements_cdf(self):
        t = np.linspace(0, 1, 101)
        np.testing.assert_allclose(order_cdf(13, 40, t) + order_sf(13, 40, t), 1.0, atol=2e-16)

    def test_pdf_matches_scipy(self):
        t = np.linspace(0.01, 0.99, 50)
        np.testing.assert_allclose(order_pdf(5, 12, t), stats.beta.pdf(t, 5, 8), rtol=1e-12)

    def test_domain_errors(self):
        with pytest.raises(DomainError):
            order_cdf(0, 5, 0.5)
        with pytest.raises(DomainError):
            order_cdf(6, 5, 0.5)
        with pytest.raises(DomainError):
            order_cdf(2, 5, 1.5)
        with pytest.raises(DomainError):
            order_cdf(2, 5, float("nan"))

    @settings(max_examples=80, deadline=None)
    @given(N=st.integers(1, 300), data=st.data())
    def test_monotone_and_symmetric(self, N, data):
        r = data.draw(st.integers(1, N))
        t = np.sort(np.array(data.draw(st.lists(st.floats(0, 1), min_size=2, max_size=20))))
        c = order_cdf(r, N, t)
        assert np.all(np.diff(c) >= -1e-15)
        assert np.all((c >= 0) & (c <= 1))
        mirror = 1 - order_cdf(N - r + 1, N, 1 - t)
        np.testing.assert_allclose(c, mirror, atol=2e-15)


class TestOrderQuantile:
    @pytest.mark.parametrize("r,N", [(1, 5), (5, 5), (2, 3), (18, 20), (183, 200), (3601, 3999), (900, 10000)])
    def test_matches_scipy(self, r, N):
        p = np.array([1e-9, 1e-4, 0.05, 0.2, 0.5, 0.8, 0.95, 1 - 1e-6])
        ref = stats.beta.ppf(p, r, N - r + 1)
        np.testing.assert_allclose(order_quantile(r, N, p), ref, rtol=1e-9)

    @settings(max_examples=60, deadline=None)
    @given(N=st.integers(2, 2000), data=st.data(), p=st.floats(1e-8, 1 - 1e-8))
    def test_round_trip(self, N, data, p):
        r = data.draw(st.integers(1, N))
        q = order_quantile(r, N, p)
        back = order_sf(r, N, q) if p > 0.5 else order_cdf(r, N, q)
        target = 1 - p if p > 0.5 else p
        # q itself is only known to one ulp, which moves the cdf by pdf * ulp
        slack = order_pdf(r, N, q) * 2 * np.spacing(q)
        assert abs(back - target) <= 1e-11 * target + slack

    def test_bisection_oracle(self):
        # independent root by plain bisection on the scipy cdf
        r, N, p = 37, 80, 0.3
        lo, hi = 0.0, 1.0
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            lo, hi = (mid, hi) if stats.beta.cdf(mid, r, N - r + 1) < p else (lo, mid)
        assert order_quantile(r, N, p) == pytest.approx(lo, rel=1e-12)

    def test_edges(self):
        assert order_quantile(3, 7, 0.0) == 0.0
        assert order_quantile(3, 7, 1.0) == 1.0
        with pytest.raises(DomainError):
            order_quantile(3, 7, -0.1)


def test_order_stat_law_moments():
    law = OrderStatLaw(4, 10)
    assert law.mean == pytest.approx(4 / 11)
    assert law.var == pytest.approx(stats.beta.var(4, 7))
    q = law.quantile(0.3)
    assert law.cdf(q) == pytest.approx(0.3, abs=1e-13)
    with pytest.raises(DomainError):
        OrderStatLaw(11, 10)


def test_quantile_bounds_sandwich():
    for N in range(1, 51):
        r = np.arange(1, N + 1)
        for d in (0.01, 0.2, 0.5):
            bounds = np.array([beta_quantile_bounds(OrderStatLaw(int(i), N), d) for i in r])
            assert np.all(bounds[:, 0] <= order_quantile(r, N, d))
            assert np.all(order_quantile(r, N, 1 - d) <= bounds[:, 1])


def test_quantile_bounds_values():
    lo, _ = beta_quantile_bounds(OrderStatLaw(5, 9), math.exp(-2 * 11 * 0.01))
    assert lo == pytest.approx(0.4, abs=1e-15)
    lo, hi = beta_quantile_bounds(OrderStatLaw(1, 1), 0.5)
    half = math.sqrt(math.log(2) / 6)
    assert (lo, hi) == pytest.approx((0.5 - half, 0.5 + half), abs=1e-15)
    median = OrderStatLaw(1, 1).quantile(0.5)
    assert median == pytest.approx(0.5)
    assert lo < median < hi
    with pytest.raises(DomainError):
        beta_quantile_bounds(OrderStatLaw(1, 1), 0.0)


class TestBetaBeta:
    def test_composition(self):
        law = BetaBetaLaw(ell=3, n=7, k=2, m=5)
        t = np.linspace(0, 1, 41)
        inner = stats.beta.cdf(t, 3, 5)
        ref = stats.beta.cdf(inner, 2, 4)
        np.testing.assert_allclose(beta_beta_cdf(law, t), ref, rtol=1e-11, atol=1e-300)

    def test_monte_carlo(self):
        rng = np.random.default_rng(11)
        law = BetaBetaLaw(ell=2, n=4, k=3, m=5)
        u = np.sort(rng.random((200_000, 5, 4)), axis=2)[:, :, 1]
        x = np.sort(u, axis=1)[:, 2]
        assert stats.kstest(x, law.cdf).pvalue > 1e-3

    @pytest.mark.parametrize("ell,n,k,m", [(1, 1, 1, 1), (2, 30, 29, 30), (30, 30, 1, 30), (7, 12, 4, 9)])
    def test_dkw_band(self, ell, n, k, m):
        # U_(l:n) has the law of a Beta(l, n-l+1) draw, so simulate that directly
        rng = np.random.default_rng(ell * 1000 + k)
        inner = rng.beta(ell, n - ell + 1, size=(100_000, m))
        x = np.sort(np.partition(inner, k - 1, axis=1)[:, k - 1])
        t = np.linspace(0, 1, 101)
        emp = np.searchsorted(x, t, side="right") / x.size
        band = math.sqrt(math.log(2 / 1e-3) / (2 * x.size))
        law = BetaBetaLaw(ell=ell, n=n, k=k, m=m)
        assert np.max(np.abs(law.cdf(t) - emp)) <= band

    def test_quantile_inverts(self):
        law = BetaBetaLaw(ell=19, n=20, k=79, m=200)
        p = np.array([0.01, 0.2, 0.5, 0.8, 0.99])
        np.testing.assert_allclose(law.cdf(beta_beta_quantile(law, p)), p, atol=1e-12)

    def test_validation(self):
        with pytest.raises(DomainError):
            BetaBetaLaw(ell=0, n=4, k=1, m=2)
        with pytest.raises(DomainError):
            BetaBetaLaw(ell=1, n=4, k=3, m=2)


def brute_pmf(probs):
    out = np.zeros(len(probs) + 1)
    for bits in itertools.product((0, 1), repeat=len(probs)):
        w = 1.0
        for p, b in zip(probs, bits):
            w *= p if b else 1 - p
        out[sum(bits)] += w
    return out


class TestPoissonBinomial:
    def test_enumeration(self):
        rng = np.random.default_rng(5)
        for m in range(0, 11):
            probs = rng.random(m)
            np.testing.assert_allclose(poisson_binomial_pmf(probs), brute_pmf(probs), atol=1e-15)

    def test_binomial_special_case(self):
        pmf = poisson_binomial_pmf([0.3] * 25)
        np.testing.assert_allclose(pmf, stats.binom.pmf(np.arange(26), 25, 0.3), atol=1e-15)

    def test_cdf_and_degenerate(self):
        law = PoissonBinomialLaw((0.0, 1.0, 1.0, 0.5))
        assert law.m == 4
        assert poisson_binomial_cdf(law, 1) == 0.0
        assert poisson_binomial_cdf(law, 2) == pytest.approx(0.5)
        assert poisson_binomial_cdf(law, 4) == 1.0
        assert poisson_binomial_cdf(law, -1) == 0.0

    def test_domain(self):
        with pytest.raises(DomainError):
            PoissonBinomialLaw((0.2, 1.2))

    def test_lower_tail_vectorized(self):
        rng = np.random.default_rng(9)
        probs = rng.random((7, 13))
        for j in (0, 3, 6, 7):
            got = pb_lower_tail(probs, j)
            ref = [brute_pmf(probs[:, c])[: j + 1].sum() for c in range(13)]
            np.testing.assert_allclose(got, ref, atol=1e-14)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=1, max_size=40))
    def test_pmf_is_distribution(self, probs):
        pmf = poisson_binomial_pmf(probs)
        assert pmf.shape == (len(probs) + 1,)
        assert np.all(pmf >= -1e-300)
        assert pmf.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.dot(np.arange(len(probs) + 1), pmf) == pytest.approx(sum(probs), abs=1e-10)
