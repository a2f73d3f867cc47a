"""Exact coverage distributions of calibrated prediction sets.

Under continuous scores the conditional coverage ``1 - alpha(D)`` of a plan
has a known law:

* central split conformal with rank r on n_c points: Beta(r, n_c - r + 1);
* equal-size QQ plans: U_(l:n, k:m), whose cdf is F_(k:m) o F_(l:n);
* unequal-size QQ plans: the k-th smallest of independent Beta(l_j,
  n_j - l_j + 1) variables, whose survival function is a Poisson-Binomial cdf.

This module exposes those laws, coverage upper bounds, the grid sweep of
coverage excesses and a Huber log-linear fit of their decay rates.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import DomainError, RankError
from .marginal import multi_sf
from .planners import (
    CONDITIONAL_METHODS,
    MARGINAL_METHODS,
    FederationShape,
    Method,
    Plan,
    make_plan,
)
from .quadrature import integrate_batch
from .special import order_cdf, order_quantile, order_sf, pb_lower_tail

MOMENT_TOL = 1e-10
_SEED_PROBS = np.array([1e-13, 1e-6, 1e-3, 0.05, 0.25, 0.5, 0.75, 0.95, 1 - 1e-3, 1 - 1e-6, 1 - 1e-13])


class LawKind(str, enum.Enum):
    BETA = "BETA"
    BETA_BETA = "BETA_BETA"
    PB_COMPOSED = "PB_COMPOSED"
    DEGENERATE = "DEGENERATE"


@dataclass(frozen=True)
class CoverageLaw:
    """Distribution of the conditional coverage of a plan.

    ``params`` depends on ``kind``: ``(r, N)`` for BETA, ``(ell, n, k, m)``
    for BETA_BETA, ``(ells, ns, k)`` for PB_COMPOSED and ``()`` for the
    DEGENERATE law of a TRIVIAL plan (coverage identically one).
    """

    kind: LawKind
    params: tuple

    # -- distribution functions --------------------------------------------
    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        kind, p = self.kind, self.params
        if kind is LawKind.DEGENERATE:
            out = (t >= 1.0).astype(float)
        elif kind is LawKind.BETA:
            out = order_cdf(p[0], p[1], np.clip(t, 0, 1))
        elif kind is LawKind.BETA_BETA:
            ell, n, k, m = p
            out = order_cdf(k, m, order_cdf(ell, n, np.clip(t, 0, 1)))
        else:
            ells, ns, k = p
            tt = np.clip(t, 0, 1)
            sfj = order_sf(np.asarray(ells)[(slice(None),) + (None,) * tt.ndim],
                           np.asarray(ns)[(slice(None),) + (None,) * tt.ndim], tt[None, ...])
            out = pb_lower_tail(sfj, len(ns) - k)
        return out[()] if np.ndim(out) == 0 else out

    def sf(self, t):
        t = np.asarray(t, dtype=float)
        kind, p = self.kind, self.params
        if kind is LawKind.DEGENERATE:
            out = (t < 1.0).astype(float)
        elif kind is LawKind.BETA:
            out = order_sf(p[0], p[1], np.clip(t, 0, 1))
        elif kind is LawKind.BETA_BETA:
            ell, n, k, m = p
            out = order_sf(k, m, order_cdf(ell, n, np.clip(t, 0, 1)))
        else:
            ells, ns, k = p
            out = multi_sf(ells, ns, k, np.clip(t, 0, 1))
        return out[()] if np.ndim(out) == 0 else out

    def quantile(self, q):
        """Quantile function; q = 0 and q = 1 give the support end points."""
        arr = np.asarray(q, dtype=float)
        if np.any((arr < 0) | (arr > 1)):
            raise DomainError(f"quantile level must lie in [0, 1], got {q!r}")
        if self.kind in (LawKind.BETA, LawKind.BETA_BETA):
            out = self._quantile_closed(arr)
        else:
            out = np.vectorize(self._quantile_scalar, otypes=[float])(arr)
        return float(out) if out.ndim == 0 else out

    def _quantile_closed(self, q):
        """Quantiles of the BETA and BETA_BETA laws, which invert in closed composition."""
        p = self.params
        if self.kind is LawKind.BETA:
            return np.asarray(order_quantile(p[0], p[1], q), dtype=float)
        ell, n, k, m = p
        return np.asarray(order_quantile(ell, n, order_quantile(k, m, q)), dtype=float)

    def _quantile_scalar(self, q: float) -> float:
        kind, p = self.kind, self.params
        if kind is LawKind.DEGENERATE:
            return 1.0
        if q <= 0.0:
            return 0.0
        if q >= 1.0:
            return 1.0
        if kind is LawKind.BETA:
            return float(order_quantile(p[0], p[1], q))
        if kind is LawKind.BETA_BETA:
            ell, n, k, m = p
            return float(order_quantile(ell, n, order_quantile(k, m, q)))
        # PB_COMPOSED: invert the cdf numerically inside the agents' range.
        ells, ns, _ = p
        ells_a, ns_a = np.asarray(ells), np.asarray(ns)
        lo = float(np.min(order_quantile(ells_a, ns_a, min(q, 1 - q) * 1e-3)))
        hi = float(np.max(order_quantile(ells_a, ns_a, 1 - min(q, 1 - q) * 1e-3)))
        if q > 0.5:
            g = lambda t: (1.0 - q) - self.sf(t)  # noqa: E731
        else:
            g = lambda t: self.cdf(t) - q  # noqa: E731
        if g(lo) > 0:
            lo = 0.0
        if g(hi) < 0:
            hi = 1.0
        return float(brentq(g, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500))

    # -- moments -------------------------------------------------------------
    def _breakpoints(self, extra=()):
        pts = [0.0, 1.0, *extra]
        if self.kind in (LawKind.BETA, LawKind.BETA_BETA):
            pts.extend(self._quantile_closed(_SEED_PROBS))
        else:
            pts.extend(self._quantile_scalar(float(q)) for q in _SEED_PROBS)
        return np.unique(np.clip(pts, 0.0, 1.0))

    @cached_property
    def mean(self) -> float:
        if self.kind is LawKind.DEGENERATE:
            return 1.0
        if self.kind is LawKind.BETA:
            r, N = self.params
            return r / (N + 1)
        return self.mean_numeric()

    @cached_property
    def std(self) -> float:
        if self.kind is LawKind.DEGENERATE:
            return 0.0
        if self.kind is LawKind.BETA:
            r, N = self.params
            return math.sqrt(r * (N - r + 1) / ((N + 1) ** 2 * (N + 2)))
        return self.std_numeric()

    def mean_numeric(self, tol: float = MOMENT_TOL) -> float:
        """Integral of the survival function over [0, 1]."""
        bp = self._breakpoints()
        vals, _ = integrate_batch(lambda t, _o: self.sf(t), bp[None, :], tol=tol)
        return float(vals[0])

    def std_numeric(self, tol: float = MOMENT_TOL) -> float:
        """Standard deviation from the centred tail integrals.

        ``Var = 2 int_c^1 (t - c) S(t) dt + 2 int_0^c (c - t) F(t) dt`` with c
        the mean, which avoids the cancellation in ``E[X^2] - E[X]^2``.
        """
        c = self.mean_numeric(tol)
        bp = self._breakpoints([c])
        upper = np.concatenate([[c], bp[bp > c]])
        lower = np.concatenate([bp[bp < c], [c]])
        width = max(len(upper), len(lower))
        rows = np.vstack([
            np.pad(upper, (0, width - len(upper)), mode="edge"),
            np.pad(lower, (0, width - len(lower)), mode="edge"),
        ])

        def f(t, owner):
            return np.where(owner == 0, 2.0 * (t - c) * self.sf(t), 2.0 * (c - t) * self.cdf(t))

        vals, _ = integrate_batch(f, rows, tol=tol * 1e-2)
        return math.sqrt(max(vals.sum(), 0.0))

    def summary(self, beta: float) -> dict:
        return {
            "mean": self.mean,
            "std": self.std,
            "q_lo": self.quantile(beta),
            "q_hi": self.quantile(1.0 - beta),
        }


def coverage_law(plan: Plan) -> CoverageLaw:
    """The continuous-score coverage law certified by ``plan``."""
    if plan.is_trivial:
        return CoverageLaw(LawKind.DEGENERATE, ())
    if plan.method is Method.FEDCP_AVG:
        raise DomainError("averaged thresholds have no distribution-free coverage law")
    if plan.r is not None:
        return CoverageLaw(LawKind.BETA, (plan.r, plan.ns[0]))
    if plan.ells is None or plan.k is None:
        raise DomainError("plan carries no QQ orders")
    if len(set(plan.ns)) == 1 and plan.ell is not None:
        return CoverageLaw(LawKind.BETA_BETA, (plan.ell, plan.ns[0], plan.k, plan.m))
    return CoverageLaw(LawKind.PB_COMPOSED, (tuple(plan.ells), tuple(plan.ns), plan.k))


def fluctuation_interval(plan: Plan, beta: float, beta_prime: float) -> tuple[float, float]:
    """(quantile(beta), quantile(1 - beta')): holds the coverage w.p. 1 - beta - beta'."""
    if not (0.0 <= beta <= 1.0 and 0.0 <= beta_prime <= 1.0 and beta + beta_prime <= 1.0):
        raise DomainError("need beta, beta' in [0, 1] with beta + beta' <= 1")
    law = coverage_law(plan)
    return law.quantile(beta), law.quantile(1.0 - beta_prime)


# ---------------------------------------------------------------------------
# upper bounds
# ---------------------------------------------------------------------------

MARGINAL_BOUND_C = 27.0
MARGINAL_BOUND_M0 = 18


@dataclass(frozen=True)
class UpperBound:
    """A coverage upper bound plus flags for hypotheses that are not met."""

    value: float
    flags: tuple = ()

    @property
    def within_hypotheses(self) -> bool:
        return not self.flags

    def __float__(self):
        return self.value


def marginal_upper_bound(m: int, n: int, alpha: float, n0: Optional[int] = None) -> UpperBound:
    """1 - alpha + 27 / ((2m + 1) sqrt(n + 2)), valid for m >= 18, n >= n0(alpha).

    The threshold n0(alpha) is not explicit; pass the caller's value to
    acknowledge it, otherwise the result carries an ``n0_unverified`` flag.
    """
    value = 1.0 - alpha + MARGINAL_BOUND_C / ((2 * m + 1) * math.sqrt(n + 2))
    flags = []
    if m < MARGINAL_BOUND_M0:
        flags.append(f"outside_hypotheses:m<{MARGINAL_BOUND_M0}")
    if n0 is None:
        flags.append("n0_unverified")
    elif n < n0:
        flags.append(f"outside_hypotheses:n<{n0}")
    return UpperBound(value, tuple(flags))


def conditional_delta(beta: float) -> float:
    """Delta(beta) = 12 max(2 sqrt(log(1/beta)), 1)."""
    return 12.0 * max(2.0 * math.sqrt(math.log(1.0 / beta)), 1.0)


def conditional_upper_bound(m: int, n: int, beta: float, alpha: float,
                            n0: Optional[int] = None, m0: Optional[int] = None) -> UpperBound:
    """1 - alpha + Delta(beta) / sqrt((m + 2)(n + 2)) for large enough m and n.

    Neither threshold is explicit, so unless both are acknowledged the
    result is flagged.
    """
    value = 1.0 - alpha + conditional_delta(beta) / math.sqrt((m + 2) * (n + 2))
    flags = []
    for name, thr, v in (("n0", n0, n), ("m0", m0, m)):
        if thr is None:
            flags.append(f"{name}_unverified")
        elif v < thr:
            flags.append(f"outside_hypotheses:{name[0]}<{thr}")
    return UpperBound(value, tuple(flags))


def check_marginal_bound(m: int, n: int, alpha: float) -> dict:
    """Compare the marginal bound with the QQM and QQM-Fast expectations."""
    bound = marginal_upper_bound(m, n, alpha)
    shape = FederationShape.equal(m, n, alpha)
    means = {}
    for method in (Method.QQM, Method.QQM_FAST):
        plan = make_plan(method, shape)
        means[method.value] = None if plan.is_trivial else coverage_law(plan).mean
    ok = all(v is None or v <= bound.value for v in means.values())
    return {"bound": bound.value, "flags": list(bound.flags), "values": means, "ok": ok}


def check_conditional_bound(m: int, n: int, alpha: float, beta: float) -> dict:
    """Compare the conditional bound with the QQC and QQC-Fast (1 - beta)-quantiles."""
    bound = conditional_upper_bound(m, n, beta, alpha)
    shape = FederationShape.equal(m, n, alpha, beta)
    highs = {}
    for method in (Method.QQC, Method.QQC_FAST):
        plan = make_plan(method, shape)
        highs[method.value] = None if plan.is_trivial else coverage_law(plan).quantile(1 - beta)
    ok = all(v is None or v <= bound.value for v in highs.values())
    return {"bound": bound.value, "flags": list(bound.flags), "values": highs, "ok": ok}


# ---------------------------------------------------------------------------
# sweep and rate fit
# ---------------------------------------------------------------------------

SWEEP_HEADER = ("method", "m", "n", "delta_E", "delta_q_beta", "delta_q_1mbeta")


def log_grid(count: int = 9) -> list[int]:
    """floor(10^(i/3)) for i = 1..count."""
    return [int(math.floor(10 ** (i / 3) + 1e-9)) for i in range(1, count + 1)]


@dataclass(frozen=True)
class SweepRecord:
    """Coverage excesses of one method on one (m, n) cell."""

    method: Method
    m: int
    n: int
    delta_E: float
    delta_q_beta: float
    delta_q_1mbeta: float
    trivial: bool = False

    def value(self, quantity: str) -> float:
        return getattr(self, quantity)


def sweep_cell(method: Method | str, m: int, n: int, alpha: float, beta: float) -> SweepRecord:
    method = Method(method)
    plan = make_plan(method, FederationShape.equal(m, n, alpha, beta))
    if plan.is_trivial:
        nan = float("nan")
        return SweepRecord(method, m, n, nan, nan, nan, trivial=True)
    law = coverage_law(plan)
    target = 1.0 - alpha
    return SweepRecord(
        method, m, n,
        law.mean - target,
        law.quantile(beta) - target,
        law.quantile(1.0 - beta) - target,
    )


def sweep(methods: Iterable, grid: Iterable[tuple[int, int]], alpha: float, beta: float,
          progress: Optional[Callable[[SweepRecord], None]] = None) -> list[SweepRecord]:
    """Exact coverage excesses for every method and grid cell, sorted by (method, m, n)."""
    methods = [Method(mt) for mt in methods]
    out = []
    for method in methods:
        for m, n in sorted(set((int(a), int(b)) for a, b in grid)):
            rec = sweep_cell(method, m, n, alpha, beta)
            out.append(rec)
            if progress is not None:
                progress(rec)
    return out


def records_to_csv(records: Sequence[SweepRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_HEADER)
    for r in records:
        if r.trivial:
            vals = ["TRIVIAL"] * 3
        else:
            vals = [f"{v:.12g}" for v in (r.delta_E, r.delta_q_beta, r.delta_q_1mbeta)]
        writer.writerow([r.method.value, r.m, r.n, *vals])
    return buf.getvalue()


def records_from_csv(text: str) -> list[SweepRecord]:
    rows = list(csv.DictReader(io.StringIO(text)))
    out = []
    for row in rows:
        trivial = row["delta_E"] == "TRIVIAL"
        vals = [float("nan") if trivial else float(row[key]) for key in SWEEP_HEADER[3:]]
        out.append(SweepRecord(Method(row["method"]), int(row["m"]), int(row["n"]), *vals,
                               trivial=trivial))
    return out


QUANTITIES = ("delta_E", "delta_q_beta", "delta_q_1mbeta")


@dataclass(frozen=True)
class RateFit:
    """log y = log c - gamma log m - delta log n, fitted under Huber loss."""

    c: float
    gamma: float
    delta: float
    loss: float
    n_records: int = 0
    iterations: int = 0

    def to_dict(self) -> dict:
        return {"c": self.c, "gamma": self.gamma, "delta": self.delta, "loss": self.loss}

    def to_json(self) -> str:
        return json.dumps({k: float(f"{v:.12g}") for k, v in self.to_dict().items()})


def huber_loss(residuals, threshold: float = 1.0) -> float:
    a = np.abs(residuals)
    return float(np.sum(np.where(a <= threshold, 0.5 * a * a, threshold * (a - 0.5 * threshold))))


def fit_rates(records: Sequence[SweepRecord], quantity: str = "delta_E",
              threshold: float = 1.0, step_tol: float = 1e-10, max_iter: int = 10_000,
              magnitude: bool = False) -> RateFit:
    """Huber log-linear fit of a coverage excess against m and n.

    Iteratively reweighted least squares with weights ``min(1, h/|r|)`` on
    the log residuals; stops when the parameter step drops below
    ``step_tol``.  Records that are TRIVIAL or carry a non-positive value are
    skipped.  With ``magnitude=True`` the fit uses ``|y|`` instead, which is
    how the beta-quantile gap of a marginal method (negative by construction)
    gets a rate.
    """
    if quantity not in QUANTITIES:
        raise DomainError(f"quantity must be one of {QUANTITIES}")
    vals = [(r.m, r.n, abs(r.value(quantity)) if magnitude else r.value(quantity))
            for r in records if not r.trivial]
    rows = [(m, n, y) for m, n, y in vals if np.isfinite(y) and y > 0]
    if len(rows) < 6:
        raise DomainError(f"need at least 6 positive records, got {len(rows)}")
    m, n, y = (np.array(col, dtype=float) for col in zip(*rows))
    X = np.column_stack([np.ones_like(m), -np.log(m), -np.log(n)])
    if np.linalg.matrix_rank(X) < 3:
        raise RankError("design is degenerate: m and n must each take at least two values")
    z = np.log(y)
    theta = np.linalg.lstsq(X, z, rcond=None)[0]
    it = 0
    for it in range(1, max_iter + 1):
        res = z - X @ theta
        w = np.minimum(1.0, threshold / np.maximum(np.abs(res), 1e-300))
        sw = np.sqrt(w)
        new = np.linalg.lstsq(X * sw[:, None], z * sw, rcond=None)[0]
        step = np.max(np.abs(new - theta))
        theta = new
        if step < step_tol:
            break
    loss = huber_loss(z - X @ theta, threshold)
    return RateFit(float(math.exp(theta[0])), float(theta[1]), float(theta[2]), loss, len(rows), it)


def fit_magnitude(method: Method | str, quantity: str) -> bool:
    """Whether ``quantity`` is fitted by magnitude: the beta-quantile gap of marginal methods."""
    return Method(method) in MARGINAL_METHODS and quantity == "delta_q_beta"


def expected_sign_ok(rec: SweepRecord) -> bool:
    """Marginal methods have delta_E >= 0; conditional ones delta_q_1mbeta >= delta_q_beta >= 0."""
    if rec.trivial:
        return True
    if rec.method in MARGINAL_METHODS:
        return rec.delta_E >= -1e-9
    if rec.method in CONDITIONAL_METHODS:
        return rec.delta_q_1mbeta >= rec.delta_q_beta >= -1e-9
    return True
