"""Distribution primitives for uniform order statistics.

``U_(r:N)``, the r-th smallest of N independent standard uniforms, follows
Beta(r, N - r + 1).  Everything here is built on that law:

* :func:`order_cdf` / :func:`order_sf` / :func:`order_quantile` are the
  vectorized workhorses (numpy broadcasting over ``r``, ``N`` and the
  argument) used by the planners and the coverage analytics;
* :class:`OrderStatLaw`, :class:`BetaBetaLaw` and :class:`PoissonBinomialLaw`
  wrap them with argument validation for the public surface.

The regularized incomplete Beta function is evaluated with the
Numerical-Recipes continued fraction (modified Lentz), switching to the
complementary expansion above the Beta mean.  Quantiles are found by a
bracketed Newton iteration with a bisection fallback.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import betaln, ndtri

from .errors import DomainError

_EPS = np.finfo(float).eps
_TINY = 1e-300
_CF_EPS = 1e-16
_CF_MAXITER = 20000
# Relative residual at which the quantile iteration stops; the cdf itself is
# only accurate to a few 1e-14 at large N, so asking for less is futile.
_QUANTILE_RES = 2e-14


# ---------------------------------------------------------------------------
# incomplete beta
# ---------------------------------------------------------------------------

def _betacf_scalar(a: float, b: float, x: float) -> float:
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) >= _TINY else _TINY)
    h = d
    for it in range(1, _CF_MAXITER + 1):
        m2 = 2.0 * it
        num = it * (b - it) * x / ((qam + m2) * (a + m2))
        d = 1.0 + num * d
        d = 1.0 / (d if abs(d) >= _TINY else _TINY)
        c = 1.0 + num / c
        c = c if abs(c) >= _TINY else _TINY
        h *= d * c
        num = -(a + it) * (qab + it) * x / ((a + m2) * (qap + m2))
        d = 1.0 + num * d
        d = 1.0 / (d if abs(d) >= _TINY else _TINY)
        c = 1.0 + num / c
        c = c if abs(c) >= _TINY else _TINY
        delta = d * c
        h *= delta
        if abs(delta - 1.0) <= _CF_EPS:
            break
    return h


def _betacf(a, b, x):
    """Continued fraction for I_x(a, b); 1-d float arrays of equal length."""
    if x.size <= 4:
        # numpy call overhead dominates for a handful of points
        return np.array([_betacf_scalar(float(ai), float(bi), float(xi))
                         for ai, bi, xi in zip(a, b, x)])
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = np.ones_like(x)
    d = 1.0 - qab * x / qap
    d = np.where(np.abs(d) < _TINY, _TINY, d)
    d = 1.0 / d
    h = d.copy()
    active = np.arange(x.size)
    for it in range(1, _CF_MAXITER + 1):
        aa_, bb_, xx = a[active], b[active], x[active]
        cc, dd = c[active], d[active]
        m2 = 2.0 * it
        num = it * (bb_ - it) * xx / ((qam[active] + m2) * (aa_ + m2))
        dd = 1.0 + num * dd
        dd = np.where(np.abs(dd) < _TINY, _TINY, dd)
        cc = 1.0 + num / cc
        cc = np.where(np.abs(cc) < _TINY, _TINY, cc)
        dd = 1.0 / dd
        hh = h[active] * dd * cc
        num = -(aa_ + it) * (qab[active] + it) * xx / ((aa_ + m2) * (qap[active] + m2))
        dd = 1.0 + num * dd
        dd = np.where(np.abs(dd) < _TINY, _TINY, dd)
        cc = 1.0 + num / cc
        cc = np.where(np.abs(cc) < _TINY, _TINY, cc)
        dd = 1.0 / dd
        delta = dd * cc
        hh = hh * delta
        h[active], c[active], d[active] = hh, cc, dd
        done = np.abs(delta - 1.0) <= _CF_EPS
        if done.all():
            return h
        active = active[~done]
    # Only reachable for parameters far beyond this package's range.
    return h


_STIRLERR_SMALL = np.array(
    [0.0] + [math.lgamma(k + 1.0) - (k + 0.5) * math.log(k) + k - 0.5 * math.log(2 * math.pi)
             for k in range(1, 16)]
)


def _stirlerr(n):
    """log(n!) minus its Stirling approximation, for positive integers n."""
    n = np.asarray(n, dtype=float)
    out = np.empty(n.shape)
    small = n <= 15
    out[small] = _STIRLERR_SMALL[n[small].astype(int)]
    big = n[~small]
    nn = big * big
    s0, s1, s2, s3, s4 = 1 / 12, 1 / 360, 1 / 1260, 1 / 1680, 1 / 1188
    out[~small] = (s0 - (s1 - (s2 - (s3 - s4 / nn) / nn) / nn) / nn) / big
    return out


def _bd0(x, mu):
    """Deviance term x log(x/mu) + mu - x without cancellation."""
    # mu underflows to (near) zero only for t within ulps of 0 or 1, where
    # the deviance is +inf and the prefactor correctly vanishes.
    with np.errstate(divide="ignore", over="ignore"):
        ratio = mu / x
        mid = (ratio > 0.5) & (ratio < 2.0)
        out = np.where(mid, 0.0, x * np.log(x / mu) + mu - x)
    u = (mu[mid] - x[mid]) / x[mid]
    out[mid] = x[mid] * (u - np.log1p(u))
    near = np.abs(x - mu) < 0.1 * (x + mu)
    if near.any():
        xn, mn = x[near], mu[near]
        v = (xn - mn) / (xn + mn)
        s = (xn - mn) * v
        ej = 2.0 * xn * v
        v2 = v * v
        for j in range(1, 200):
            ej = ej * v2
            s_new = s + ej / (2 * j + 1)
            if np.all(s_new == s):
                break
            s = s_new
        out[near] = s
    return out


def _front(a, b, x):
    """x^a (1-x)^b / B(a, b) via the saddle-point form of the binomial pmf.

    Writing the prefactor as ab/(a+b) times the Binomial(a+b, x) mass at a
    and expanding that mass with Loader's deviance/Stirling-remainder terms
    keeps the relative error near machine precision even for N in the
    thousands, where the naive log-space formula loses three digits.
    """
    n = a + b
    lc = (
        _stirlerr(n) - _stirlerr(a) - _stirlerr(b)
        - _bd0(a, n * x) - _bd0(b, n * (1.0 - x))
    )
    lf = np.log(2.0 * np.pi) + np.log(a) + np.log1p(-a / n)
    return a * b / n * np.exp(lc - 0.5 * lf)


def _betainc_pair(a, b, x):
    """Return (I_x(a,b), 1 - I_x(a,b)) without cancellation in either."""
    a, b, x = np.broadcast_arrays(
        np.asarray(a, dtype=float), np.asarray(b, dtype=float), np.asarray(x, dtype=float)
    )
    shape = x.shape
    a, b, x = a.ravel(), b.ravel(), x.ravel()
    lower = np.zeros(x.size)
    upper = np.ones(x.size)
    top = x >= 1.0
    lower[top], upper[top] = 1.0, 0.0
    inner = (x > 0.0) & ~top
    if inner.any():
        ai, bi, xi = a[inner], b[inner], x[inner]
        direct = xi < (ai + 1.0) / (ai + bi + 2.0)
        lo = np.empty(xi.size)
        up = np.empty(xi.size)
        if direct.any():
            aa, bb, xx = ai[direct], bi[direct], xi[direct]
            val = _front(aa, bb, xx) * _betacf(aa, bb, xx) / aa
            lo[direct], up[direct] = val, 1.0 - val
        flip = ~direct
        if flip.any():
            aa, bb, xx = bi[flip], ai[flip], 1.0 - xi[flip]
            val = _front(aa, bb, xx) * _betacf(aa, bb, xx) / aa
            up[flip], lo[flip] = val, 1.0 - val
        lower[inner], upper[inner] = np.clip(lo, 0.0, 1.0), np.clip(up, 0.0, 1.0)
    return lower.reshape(shape), upper.reshape(shape)


def _check_ranks(r, N):
    r, N = np.asarray(r), np.asarray(N)
    if np.any((r < 1) | (r > N)) or np.any(r != np.floor(r)) or np.any(N != np.floor(N)):
        raise DomainError(f"need integer ranks 1 <= r <= N, got r={r!r}, N={N!r}")


def order_cdf(r, N, t):
    """P(U_(r:N) <= t), vectorized."""
    _check_ranks(r, N)
    _check_unit(t)
    return _order_cdf(r, N, t)


def _order_cdf(r, N, t):
    r, N, t = np.broadcast_arrays(np.asarray(r), np.asarray(N), np.asarray(t, dtype=float))
    out = _betainc_pair(r, N - r + 1, t)[0]
    # Closed forms keep max/min order statistics exact.
    top = r == N
    if top.any():
        out = np.where(top, np.clip(t, 0.0, 1.0) ** np.where(top, N, 1), out)
    bottom = (r == 1) & ~top
    if bottom.any():
        tc = np.clip(t, 0.0, 1.0)
        with np.errstate(divide="ignore"):
            val = -np.expm1(N * np.log1p(-tc))
        out = np.where(bottom, val, out)
    return out[()] if out.ndim == 0 else out


def order_sf(r, N, t):
    """P(U_(r:N) > t), vectorized, accurate when the cdf is close to one."""
    _check_ranks(r, N)
    _check_unit(t)
    return _order_sf(r, N, t)


def _order_sf(r, N, t):
    r, N, t = np.broadcast_arrays(np.asarray(r), np.asarray(N), np.asarray(t, dtype=float))
    out = _betainc_pair(r, N - r + 1, t)[1]
    top = r == N
    if top.any():
        tc = np.clip(t, 0.0, 1.0)
        with np.errstate(divide="ignore"):
            val = -np.expm1(N * np.log(np.where(tc > 0, tc, 1.0)))
        val = np.where(tc > 0, val, 1.0)
        out = np.where(top, val, out)
    bottom = (r == 1) & ~top
    if bottom.any():
        tc = np.clip(t, 0.0, 1.0)
        out = np.where(bottom, (1.0 - tc) ** np.where(bottom, N, 1), out)
    return out[()] if out.ndim == 0 else out


def order_pdf(r, N, t):
    """Density of U_(r:N) on [0, 1], vectorized."""
    _check_ranks(r, N)
    return _order_pdf(r, N, t)


def _order_pdf(r, N, t):
    r, N, t = np.broadcast_arrays(
        np.asarray(r, dtype=float), np.asarray(N, dtype=float), np.asarray(t, dtype=float)
    )
    a, b = r, N - r + 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        logf = (a - 1.0) * np.log(t) + (b - 1.0) * np.log1p(-t) - betaln(a, b)
        logf = np.where((a == 1.0) & (t == 0.0), -betaln(a, b) + (b - 1.0) * np.log1p(-t), logf)
        logf = np.where((b == 1.0) & (t == 1.0), -betaln(a, b) + (a - 1.0) * np.log(t), logf)
    out = np.where((t < 0) | (t > 1), 0.0, np.exp(logf))
    return out[()] if out.ndim == 0 else out


def order_quantile(r, N, p):
    """Quantile function of U_(r:N), vectorized.

    Safeguarded Newton on the cdf (or on the survival function when
    ``p > 1/2``) inside a shrinking bracket; any step leaving the bracket is
    replaced by bisection, so convergence does not depend on the initial
    guess.
    """
    _check_ranks(r, N)
    _check_unit(p, "p")
    return _order_quantile(r, N, p)


def _order_quantile(r, N, p):
    r, N, p = np.broadcast_arrays(np.asarray(r), np.asarray(N), np.asarray(p, dtype=float))
    shape = p.shape
    r, N, p = r.ravel().astype(float), N.ravel().astype(float), p.ravel().copy()
    out = np.empty(p.size)

    top = r == N
    out[top] = p[top] ** (1.0 / N[top])
    bottom = (r == 1) & ~top
    with np.errstate(divide="ignore"):  # p = 1 maps to log1p(-1) = -inf and then to 1
        out[bottom] = -np.expm1(np.log1p(-p[bottom]) / N[bottom])
    gen = ~(top | bottom)
    out[gen & (p <= 0.0)] = 0.0
    out[gen & (p >= 1.0)] = 1.0
    gen &= (p > 0.0) & (p < 1.0)
    if gen.any():
        out[gen] = _newton_quantile(r[gen], N[gen], p[gen])
    out = out.reshape(shape)
    return out[()] if out.ndim == 0 else out


def _newton_quantile(r, N, p):
    """Newton on log F(x) - log p, in the variable log x.

    Near either end the order-statistic cdf behaves like C x^r, which is
    close to linear on the log-log scale, so tail quantiles converge in a
    few steps.  For ``p > 1/2`` the iteration runs on log S(x) - log(1 - p)
    in the variable log(1 - x).  Steps that leave the current bracket are
    replaced by a geometric bisection.
    """
    a, b = r, N - r + 1.0
    mean = a / (N + 1.0)
    sd = np.sqrt(a * b / ((N + 1.0) ** 2 * (N + 2.0)))
    upper = p > 0.5
    log_target = np.log(np.where(upper, 1.0 - p, p))
    # u is x on the lower branch and 1 - x on the upper branch; in u the
    # tracked tail probability is increasing.
    x0 = np.clip(mean + ndtri(p) * sd, 1e-3 * mean, 1.0 - 1e-3 * (1.0 - mean))
    u = np.where(upper, 1.0 - x0, x0)
    lo = np.zeros(p.size)
    hi = np.ones(p.size)
    active = np.arange(p.size)
    for _ in range(200):
        ua, up = u[active], upper[active]
        xa = np.where(up, 1.0 - ua, ua)
        ra, Na = r[active], N[active]
        cdf, sf = _betainc_pair(ra, Na - ra + 1.0, xa)
        tail = np.where(up, sf, cdf)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            h = np.log(tail) - log_target[active]
            below = h < 0
            lo[active] = np.where(below, ua, lo[active])
            hi[active] = np.where(below, hi[active], ua)
            slope = ua * _order_pdf(ra, Na, xa) / tail
            step = h / slope
            cand = ua * np.exp(-step)
            moved = np.abs(ua * np.expm1(-step))
        la, ha = lo[active], hi[active]
        bad = ~np.isfinite(cand) | (cand <= la) | (cand >= ha)
        geo = np.where(la > 0, np.sqrt(la * ha), 0.0625 * ha)
        cand = np.where(bad, geo, cand)
        # On the upper branch u = 1 - x can only move in steps of spacing(x).
        resolution = 4 * _EPS * np.maximum(np.where(up, np.maximum(ua, xa), ua), _TINY)
        done = (
            (h == 0)
            | (np.abs(h) <= _QUANTILE_RES)
            | (np.isfinite(step) & (moved <= resolution))
            | (ha - la <= resolution)
        )
        u[active] = np.where(done, ua, cand)
        if done.all():
            break
        active = active[~done]
    return np.where(upper, 1.0 - u, u)


# ---------------------------------------------------------------------------
# public laws
# ---------------------------------------------------------------------------

def _check_unit(t, name="t", open_=False):
    arr = np.asarray(t, dtype=float)
    if open_:
        bad = ~((arr > 0.0) & (arr < 1.0))
    else:
        bad = ~((arr >= 0.0) & (arr <= 1.0))
    if np.any(bad):
        interval = "(0, 1)" if open_ else "[0, 1]"
        raise DomainError(f"{name} must lie in {interval}, got {t!r}")
    return arr


@dataclass(frozen=True)
class OrderStatLaw:
    """Law of U_(r:N), i.e. Beta(r, N - r + 1)."""

    r: int
    N: int

    def __post_init__(self):
        if int(self.r) != self.r or int(self.N) != self.N or not 1 <= self.r <= self.N:
            raise DomainError(f"need integers 1 <= r <= N, got r={self.r}, N={self.N}")

    def cdf(self, t):
        return order_cdf(self.r, self.N, _check_unit(t))

    def sf(self, t):
        return order_sf(self.r, self.N, _check_unit(t))

    def pdf(self, t):
        return order_pdf(self.r, self.N, _check_unit(t))

    def quantile(self, p):
        return order_quantile(self.r, self.N, _check_unit(p, "p", open_=True))

    @property
    def mean(self) -> float:
        return self.r / (self.N + 1)

    @property
    def var(self) -> float:
        return self.r * (self.N - self.r + 1) / ((self.N + 1) ** 2 * (self.N + 2))


@dataclass(frozen=True)
class BetaBetaLaw:
    """Law of the k-th smallest of m i.i.d. copies of U_(ell:n)."""

    ell: int
    n: int
    k: int
    m: int

    def __post_init__(self):
        if not (1 <= self.ell <= self.n and 1 <= self.k <= self.m):
            raise DomainError(
                f"need 1 <= ell <= n and 1 <= k <= m, got "
                f"ell={self.ell}, n={self.n}, k={self.k}, m={self.m}"
            )

    def cdf(self, t):
        return order_cdf(self.k, self.m, order_cdf(self.ell, self.n, _check_unit(t)))

    def sf(self, t):
        return order_sf(self.k, self.m, order_cdf(self.ell, self.n, _check_unit(t)))

    def quantile(self, p):
        p = _check_unit(p, "p", open_=True)
        return order_quantile(self.ell, self.n, order_quantile(self.k, self.m, p))


@dataclass(frozen=True)
class PoissonBinomialLaw:
    """Sum of independent Bernoulli(probs[j]) variables."""

    probs: tuple

    def __post_init__(self):
        arr = np.asarray(self.probs, dtype=float)
        if arr.ndim != 1 or arr.size == 0:
            raise DomainError("probs must be a non-empty 1-d sequence")
        if np.any(~((arr >= 0.0) & (arr <= 1.0))):
            raise DomainError(f"probabilities must lie in [0, 1], got {self.probs!r}")
        object.__setattr__(self, "probs", tuple(float(v) for v in arr))

    @property
    def m(self) -> int:
        return len(self.probs)

    def pmf(self) -> np.ndarray:
        return poisson_binomial_pmf(self.probs)

    def cdf(self, j) -> float:
        return poisson_binomial_cdf(self, j)


def beta_cdf(law: OrderStatLaw, t):
    return law.cdf(t)


def beta_sf(law: OrderStatLaw, t):
    return law.sf(t)


def beta_quantile(law: OrderStatLaw, p):
    return law.quantile(p)


def beta_beta_cdf(law: BetaBetaLaw, t):
    return law.cdf(t)


def beta_beta_quantile(law: BetaBetaLaw, p):
    return law.quantile(p)


def beta_quantile_bounds(law: OrderStatLaw, delta: float) -> tuple[float, float]:
    """Sub-Gaussian sandwich around the delta and (1 - delta) quantiles.

    ``lower <= quantile(delta)`` and ``quantile(1 - delta) <= upper``.
    """
    _check_unit(delta, "delta", open_=True)
    centre = law.r / (law.N + 1)
    half = np.sqrt(np.log(1.0 / delta) / (2.0 * (law.N + 2)))
    return float(centre - half), float(centre + half)


# ---------------------------------------------------------------------------
# Poisson-Binomial
# ---------------------------------------------------------------------------

def poisson_binomial_pmf(probs: Sequence[float]) -> np.ndarray:
    """Exact pmf by convolving one Bernoulli factor at a time (O(m^2))."""
    pmf = np.zeros(len(probs) + 1)
    pmf[0] = 1.0
    for count, p in enumerate(probs, start=1):
        pmf[1:count + 1] = pmf[1:count + 1] * (1.0 - p) + pmf[:count] * p
        pmf[0] *= 1.0 - p
    return pmf


def poisson_binomial_cdf(law: PoissonBinomialLaw, j) -> float:
    """P(Z_1 + ... + Z_m <= j)."""
    j = int(np.floor(j))
    if j < 0:
        return 0.0
    if j >= law.m:
        return 1.0
    return float(min(1.0, poisson_binomial_pmf(law.probs)[: j + 1].sum()))


def pb_lower_tail(probs, j: int):
    """P(sum <= j) for many parameter vectors at once.

    ``probs`` has shape (m, ...); the DP keeps only the j + 1 lowest
    counts, so the cost is O(m * j) per trailing element.
    """
    probs = np.asarray(probs, dtype=float)
    m = probs.shape[0]
    if j < 0:
        return np.zeros(probs.shape[1:])
    if j >= m:
        return np.ones(probs.shape[1:])
    state = np.zeros((j + 1,) + probs.shape[1:])
    state[0] = 1.0
    for row in probs:
        shifted = state[:-1] * row
        state *= 1.0 - row
        state[1:] += shifted
    return np.clip(state.sum(axis=0), 0.0, 1.0)
