"""The marginal-coverage quantity M for quantile-of-quantiles orders.

``M_{l,k}`` is the expectation of U_(l:n, k:m), the k-th smallest of m
independent Beta(l, n - l + 1) variables; it is the exact marginal coverage
of the QQ prediction set under continuous scores.  The unequal-size
generalization replaces the m identical inner laws by Beta(l_j, n_j - l_j + 1).

Two evaluation paths are provided:

* ``*_exact``: the nested binomial sums, evaluated in integer/rational
  arithmetic.  The sums are grouped by the total index, which turns them
  into products of integer polynomials.  They are capped to small
  instances and serve as test oracles.
* ``*_quadrature``: adaptive integration of the survival function of the
  coverage law over [0, 1], which is what the planners use.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations
from math import comb
from typing import Sequence

import numpy as np

from .errors import CapacityError, DomainError
from .quadrature import integrate_batch
from .special import order_cdf, order_quantile, order_sf, pb_lower_tail

EXACT_MAX_M = 6
EXACT_MAX_N = 12
MULTI_EXACT_MAX_M = 4
MULTI_EXACT_MAX_N = 6

# Probabilities at which coverage-law quantiles seed the quadrature
# breakpoints; outside the extreme ones the integrand is flat to 1e-13.
_SEED_PROBS = np.array([1e-13, 1e-6, 1e-3, 0.1, 0.5, 0.9, 1 - 1e-3, 1 - 1e-6, 1 - 1e-13])


@dataclass(frozen=True)
class PairOrder:
    """QQ order (ell, k) for m agents holding n calibration scores each."""

    ell: int
    k: int
    n: int
    m: int

    def __post_init__(self):
        if not (1 <= self.ell <= self.n and 1 <= self.k <= self.m):
            raise DomainError(
                f"need 1 <= ell <= n and 1 <= k <= m, got "
                f"ell={self.ell}, k={self.k}, n={self.n}, m={self.m}"
            )


@dataclass(frozen=True)
class MultiOrder:
    """Per-agent orders ells[j] on samples of size ns[j] and server order k."""

    ells: tuple
    ns: tuple
    k: int

    def __post_init__(self):
        ells, ns = tuple(int(v) for v in self.ells), tuple(int(v) for v in self.ns)
        if len(ells) != len(ns) or not ells:
            raise DomainError("ells and ns must be non-empty and of equal length")
        if any(not 1 <= e <= n for e, n in zip(ells, ns)):
            raise DomainError(f"need 1 <= ells[j] <= ns[j], got ells={ells}, ns={ns}")
        if not 1 <= self.k <= len(ns):
            raise DomainError(f"need 1 <= k <= m={len(ns)}, got k={self.k}")
        object.__setattr__(self, "ells", ells)
        object.__setattr__(self, "ns", ns)

    @property
    def m(self) -> int:
        return len(self.ns)


# ---------------------------------------------------------------------------
# exact oracles
# ---------------------------------------------------------------------------

def _polymul(p: list, q: list) -> list:
    out = [0] * (len(p) + len(q) - 1)
    for i, a in enumerate(p):
        if a:
            for j, b in enumerate(q):
                out[i + j] += a * b
    return out


def _polypow(p: list, e: int) -> list:
    out = [1]
    for _ in range(e):
        out = _polymul(out, p)
    return out


def _binomial_rows(n: int, ell: int) -> tuple[list, list]:
    """Coefficient lists of sum_{i>=ell} C(n,i) x^i and sum_{i<ell} C(n,i) x^i."""
    hi = [comb(n, i) if i >= ell else 0 for i in range(n + 1)]
    lo = [comb(n, i) if i < ell else 0 for i in range(ell)]
    return hi, lo


def m_lk_exact(order: PairOrder) -> Fraction:
    """Exact M_{l,k} from the nested binomial sum.

    With ``i_1..i_{k-1}`` ranging over ``[l, n]`` and ``i_{k+1}..i_m`` over
    ``[0, l-1]``,

        M = k C(m,k) l C(n,l) / (mn+1) * sum prod_j C(n, i_j) / C(mn, S + l)

    where S is the sum of the m-1 indices.  Grouping by S, the inner sum is
    read off the coefficients of ``P_hi^(k-1) * P_lo^(m-k)``.
    """
    n, m, ell, k = order.n, order.m, order.ell, order.k
    if m > EXACT_MAX_M or n > EXACT_MAX_N:
        raise CapacityError(
            f"m_lk_exact is capped at m <= {EXACT_MAX_M}, n <= {EXACT_MAX_N}; "
            "use m_lk_quadrature for larger instances"
        )
    hi, lo = _binomial_rows(n, ell)
    poly = _polymul(_polypow(hi, k - 1), _polypow(lo, m - k))
    total = sum(Fraction(c, comb(m * n, s + ell)) for s, c in enumerate(poly) if c)
    return Fraction(k * comb(m, k) * ell * comb(n, ell), m * n + 1) * total


def m_multi_exact(order: MultiOrder) -> Fraction:
    """Exact M for unequal sizes from the subset/nested sum.

    ``1 - M = 1/(N+1) * sum_{j>=k} sum_{|A|=j} sum_i prod_a C(n_a, i_a) / C(N, sum i)``
    where agents in A have ``i_a >= l_a`` and the others ``i_a <= l_a - 1``.
    """
    ns, ells, k, m = order.ns, order.ells, order.k, order.m
    if m > MULTI_EXACT_MAX_M or max(ns) > MULTI_EXACT_MAX_N:
        raise CapacityError(
            f"m_multi_exact is capped at m <= {MULTI_EXACT_MAX_M}, "
            f"n_j <= {MULTI_EXACT_MAX_N}; use m_multi_quadrature"
        )
    N = sum(ns)
    rows = [_binomial_rows(n, e) for n, e in zip(ns, ells)]
    total = Fraction(0)
    for j in range(k, m + 1):
        for subset in combinations(range(m), j):
            chosen = set(subset)
            poly = [1]
            for a in range(m):
                poly = _polymul(poly, rows[a][0] if a in chosen else rows[a][1])
            total += sum(Fraction(c, comb(N, s)) for s, c in enumerate(poly) if c)
    return 1 - total / (N + 1)


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

def _bb_breakpoints(ell, k, n, m):
    ell, k = np.asarray(ell)[:, None], np.asarray(k)[:, None]
    inner = order_quantile(k, m, _SEED_PROBS[None, :])
    pts = order_quantile(ell, n, inner)
    K = pts.shape[0]
    pts = np.maximum.accumulate(pts, axis=1)
    return np.hstack([np.zeros((K, 1)), pts, np.ones((K, 1))])


def m_lk_quadrature_batch(ells, ks, n: int, m: int, tol: float = 1e-10) -> np.ndarray:
    """M_{l,k} for many (l, k) pairs sharing (n, m), in one quadrature pass."""
    ells = np.atleast_1d(np.asarray(ells, dtype=int))
    ks = np.atleast_1d(np.asarray(ks, dtype=int))
    ells, ks = np.broadcast_arrays(ells, ks)
    if ells.size == 0:
        return np.zeros(0)

    def sf(t, owner):
        return order_sf(ks[owner], m, order_cdf(ells[owner], n, t))

    vals, _ = integrate_batch(sf, _bb_breakpoints(ells, ks, n, m), tol=tol)
    return np.clip(vals, 0.0, 1.0)


def m_lk_quadrature(order: PairOrder, tol: float = 1e-10) -> float:
    """M_{l,k} as the integral of the Beta-Beta survival function."""
    if not tol > 0:
        raise DomainError("tol must be positive")
    return float(m_lk_quadrature_batch([order.ell], [order.k], order.n, order.m, tol)[0])


def m_lk_bounds(order: PairOrder) -> tuple[float, float]:
    """Quantile bracket Q_l((k - 1/2)/(m + 1/2)) < M_{l,k} < Q_l(k/(m + 1/2))."""
    n, m, ell, k = order.n, order.m, order.ell, order.k
    lo = order_quantile(ell, n, (k - 0.5) / (m + 0.5))
    hi = order_quantile(ell, n, k / (m + 0.5))
    return float(lo), float(hi)


def multi_sf(ells: Sequence[int], ns: Sequence[int], k: int, t) -> np.ndarray:
    """P(coverage > t) for the unequal-size QQ law.

    The coverage exceeds t exactly when fewer than k of the agents'
    messages fall at or below t, so the survival function is the
    Poisson-Binomial cdf at k - 1 in the per-agent cdf values.
    """
    t = np.asarray(t, dtype=float)
    ells = np.asarray(ells)[(slice(None),) + (None,) * t.ndim]
    ns = np.asarray(ns)[(slice(None),) + (None,) * t.ndim]
    probs = order_cdf(ells, ns, t[None, ...])
    return pb_lower_tail(probs, k - 1)


def _multi_breakpoints(ells, ns, m):
    ells, ns = np.asarray(ells), np.asarray(ns)
    eps = 1e-13 / m
    lo = order_quantile(ells, ns, eps).min()
    hi = order_quantile(ells, ns, 1 - eps).max()
    mids = np.sort(order_quantile(ells, ns, 0.5))
    pts = np.concatenate([[0.0, lo], mids, [hi, 1.0]])
    return np.maximum.accumulate(np.clip(pts, 0.0, 1.0))


def m_multi_quadrature(order: MultiOrder, tol: float = 1e-10) -> float:
    """M for per-agent orders by integrating the Poisson-Binomial survival."""
    if not tol > 0:
        raise DomainError("tol must be positive")
    return float(m_multi_quadrature_ks(order.ells, order.ns, [order.k], tol)[0])


def m_multi_quadrature_ks(ells, ns, ks, tol: float = 1e-10) -> np.ndarray:
    """M for several server orders k sharing the same per-agent orders."""
    ks = np.atleast_1d(np.asarray(ks, dtype=int))
    ells_a, ns_a = np.asarray(ells), np.asarray(ns)
    m = len(ns_a)
    bp = np.tile(_multi_breakpoints(ells_a, ns_a, m), (ks.size, 1))

    def sf(t, owner):
        # one Poisson-Binomial DP serves every owner's k
        probs = order_cdf(ells_a[:, None], ns_a[:, None], t[None, :])
        state = np.zeros((m + 1, t.size))
        state[0] = 1.0
        for row in probs:
            shifted = state[:-1] * row
            state *= 1.0 - row
            state[1:] += shifted
        cum = np.cumsum(state, axis=0)
        return np.clip(cum[ks[owner] - 1, np.arange(t.size)], 0.0, 1.0)

    vals, _ = integrate_batch(sf, bp, tol=tol)
    return np.clip(vals, 0.0, 1.0)
