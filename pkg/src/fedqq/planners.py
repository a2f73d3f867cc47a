"""Order selection for quantile-of-quantiles calibration.

Each planner maps a :class:`FederationShape` to a :class:`Plan` holding the
chosen orders, the guarantee the orders certify and a summary of the
predicted coverage distribution.

Marginal planners (QQM, QQM-Fast, QQM-nj, CentralM) certify
``E[coverage] >= 1 - alpha``.  Conditional planners (QQC, QQC-Fast, QQC-nj,
CentralC) certify ``P(coverage >= 1 - alpha) >= 1 - beta``.  When no order
satisfies the constraint the planner returns a TRIVIAL plan, meaning the
prediction set must be the whole label space.

Search strategy for the equal-size planners.  Let ``p_l = F_(l:n)(1 - alpha)``.
The quantile bracket on M pins the minimal marginally-feasible k for a given
l between ``floor((m + 1/2) p_l) + 1`` and ``ceil((m + 1/2) p_l + 1/2)``, so
only a handful of M values per l need integrating.  For the conditional
constraint ``F_(k:m)(p_l) <= beta`` the minimal k is found by searching the
increasing sequence of ``Q_(k:m)(beta)``.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import DomainError
from .marginal import m_lk_quadrature_batch, m_multi_quadrature_ks
from .special import order_cdf, order_quantile, pb_lower_tail

# Marginal feasibility is decided as M >= 1 - alpha - FEAS_SLACK, absorbing
# quadrature error so that exact boundary cases (M == 1 - alpha) are kept.
FEAS_SLACK = 1e-10
PLANNER_TOL = 1e-12
TIE_TOL = 1e-12
DEFAULT_BETA = 0.2


class Method(str, enum.Enum):
    QQM = "QQM"
    QQM_FAST = "QQM_FAST"
    QQC = "QQC"
    QQC_FAST = "QQC_FAST"
    QQM_NJ = "QQM_NJ"
    QQC_NJ = "QQC_NJ"
    CENTRAL_M = "CENTRAL_M"
    CENTRAL_C = "CENTRAL_C"
    FEDCP_AVG = "FEDCP_AVG"


class Guarantee(str, enum.Enum):
    MARGINAL = "MARGINAL"
    TRAINING_CONDITIONAL = "TRAINING_CONDITIONAL"
    NONE = "NONE"
    TRIVIAL = "TRIVIAL"


MARGINAL_METHODS = (Method.QQM, Method.QQM_FAST, Method.QQM_NJ, Method.CENTRAL_M)
CONDITIONAL_METHODS = (Method.QQC, Method.QQC_FAST, Method.QQC_NJ, Method.CENTRAL_C)
CENTRAL_METHODS = (Method.CENTRAL_M, Method.CENTRAL_C)


@dataclass(frozen=True)
class FederationShape:
    """m agents with calibration sizes ns, miscoverage alpha, risk beta."""

    m: int
    ns: tuple
    alpha: float
    beta: float = DEFAULT_BETA

    def __post_init__(self):
        ns = tuple(int(v) for v in np.atleast_1d(self.ns))
        object.__setattr__(self, "ns", ns)
        if self.m < 1 or len(ns) != self.m:
            raise DomainError(f"need m >= 1 and len(ns) == m, got m={self.m}, len(ns)={len(ns)}")
        if any(v < 1 for v in ns):
            raise DomainError("every calibration size must be at least 1")
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise DomainError(f"{name} must lie in (0, 1), got {v}")

    @classmethod
    def equal(cls, m: int, n: int, alpha: float, beta: float = DEFAULT_BETA) -> "FederationShape":
        return cls(m, (n,) * m, alpha, beta)

    @property
    def is_equal(self) -> bool:
        return len(set(self.ns)) == 1

    @property
    def n(self) -> int:
        if not self.is_equal:
            raise DomainError("calibration sizes differ across agents")
        return self.ns[0]

    @property
    def total(self) -> int:
        return sum(self.ns)


@dataclass(frozen=True)
class Plan:
    """Chosen orders plus the guarantee they certify.

    Equal-size QQ plans set ``ells`` to m copies of the common order.  Central
    plans carry a single rank ``r`` on the pooled sample of size ``ns[0]``.
    ``predicted`` holds the continuous-score coverage summary
    ``{"mean", "q_lo", "q_hi"}`` at levels beta and 1 - beta.
    """

    method: Method
    m: int
    ns: tuple
    alpha: float
    beta: float
    guarantee: Guarantee
    ells: Optional[tuple] = None
    k: Optional[int] = None
    r: Optional[int] = None
    predicted: Optional[dict] = None
    flags: tuple = field(default_factory=tuple)

    @property
    def is_trivial(self) -> bool:
        return self.guarantee is Guarantee.TRIVIAL

    @property
    def ell(self) -> Optional[int]:
        """Common inner order when all agents use the same one."""
        if self.ells and len(set(self.ells)) == 1:
            return self.ells[0]
        return None

    @property
    def is_central(self) -> bool:
        return self.method in CENTRAL_METHODS

    # -- serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        if self.r is not None:
            orders = {"r": self.r}
        elif self.ells is not None:
            orders = {"ells": list(self.ells)}
            if self.k is not None:
                orders["k"] = self.k
            if self.ell is not None:
                orders["ell"] = self.ell
        else:
            orders = {}
        return {
            "method": self.method.value,
            "m": self.m,
            "ns": list(self.ns),
            "alpha": self.alpha,
            "beta": self.beta,
            "orders": orders,
            "guarantee": self.guarantee.value,
            "predicted": None if self.predicted is None else dict(self.predicted),
            "flags": list(self.flags),
        }

    def to_json(self, digits: int = 12) -> str:
        return json.dumps(_round_floats(self.to_dict(), digits), indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "Plan":
        try:
            orders = data.get("orders") or {}
            method = Method(data["method"])
            guarantee = Guarantee(data["guarantee"])
            ells = orders.get("ells")
            plan = cls(
                method=method,
                m=int(data["m"]),
                ns=tuple(int(v) for v in data["ns"]),
                alpha=float(data["alpha"]),
                beta=float(data.get("beta", DEFAULT_BETA)),
                guarantee=guarantee,
                ells=None if ells is None else tuple(int(v) for v in ells),
                k=None if orders.get("k") is None else int(orders["k"]),
                r=None if orders.get("r") is None else int(orders["r"]),
                predicted=data.get("predicted"),
                flags=tuple(data.get("flags") or ()),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DomainError(f"malformed plan document: {exc}") from exc
        plan.validate()
        return plan

    @classmethod
    def from_json(cls, text: str) -> "Plan":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DomainError(f"plan is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise DomainError("plan JSON must be an object")
        return cls.from_dict(data)

    def validate(self) -> None:
        """Raise DomainError unless the orders are consistent with the shape."""
        if len(self.ns) != self.m or self.m < 1:
            raise DomainError("ns length must equal m")
        if self.is_trivial:
            return
        if self.r is not None:
            if not 1 <= self.r <= self.ns[0]:
                raise DomainError(f"rank r={self.r} outside 1..{self.ns[0]}")
            return
        if self.ells is None or len(self.ells) != self.m:
            raise DomainError("plan needs one inner order per agent")
        if any(not 1 <= e <= n for e, n in zip(self.ells, self.ns)):
            raise DomainError("inner orders out of range")
        if self.k is not None and not 1 <= self.k <= self.m:
            raise DomainError(f"server order k={self.k} outside 1..{self.m}")


def _round_floats(obj, digits):
    if isinstance(obj, float):
        return float(f"{obj:.{digits}g}")
    if isinstance(obj, dict):
        return {key: _round_floats(v, digits) for key, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v, digits) for v in obj]
    return obj


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def snap_ceil(x: float, rel: float = 1e-9) -> int:
    """Ceiling that treats values within ``rel`` of an integer as that integer.

    ``(1 - alpha)(n + 1)`` is often an integer in exact arithmetic but lands a
    few ulps above it in floating point; a plain ceil would then overshoot.
    """
    nearest = round(x)
    if abs(x - nearest) <= rel * max(1.0, abs(x)):
        return int(nearest)
    return int(math.ceil(x))


def split_rank(n: int, alpha: float) -> int:
    """ceil((1 - alpha)(n + 1)), the split-conformal marginal rank."""
    return snap_ceil((1.0 - alpha) * (n + 1))


def _with_prediction(plan: Plan, predict: bool = True) -> Plan:
    if not predict:
        return plan
    from .coverage import coverage_law

    law = coverage_law(plan)
    if plan.method is Method.CENTRAL_M and not plan.is_trivial:
        mean = plan.r / (plan.ns[0] + 1)
    else:
        mean = law.mean
    predicted = {
        "mean": float(mean),
        "q_lo": float(law.quantile(plan.beta)),
        "q_hi": float(law.quantile(1.0 - plan.beta)),
    }
    return replace(plan, predicted=predicted)


def _trivial(method: Method, shape: FederationShape, flags=(), central=False, predict=True) -> Plan:
    m, ns = (1, (shape.total,)) if central else (shape.m, shape.ns)
    plan = Plan(method, m, ns, shape.alpha, shape.beta, Guarantee.TRIVIAL, flags=tuple(flags))
    return _with_prediction(plan, predict)


def _equal_plan(method, shape, guarantee, ell, k, predict=True) -> Plan:
    plan = Plan(method, shape.m, shape.ns, shape.alpha, shape.beta, guarantee,
                ells=(int(ell),) * shape.m, k=int(k))
    return _with_prediction(plan, predict)


def _require_equal(shape: FederationShape) -> int:
    if not shape.is_equal:
        raise DomainError("this planner needs equal calibration sizes; use the *_nj planners")
    return shape.n


def _pick(ells, ks, crit):
    """Minimal criterion with lexicographic tie-break, or None if empty."""
    ells, ks, crit = np.asarray(ells), np.asarray(ks), np.asarray(crit, dtype=float)
    if crit.size == 0:
        return None
    best = crit.min()
    tied = np.flatnonzero(crit <= best + TIE_TOL)
    order = np.lexsort((ks[tied], ells[tied]))
    i = tied[order[0]]
    return int(ells[i]), int(ks[i]), float(crit[i])


def inner_cdf_at_level(n: int, alpha: float) -> np.ndarray:
    """``p_l = F_(l:n)(1 - alpha)`` for l = 1..n."""
    return np.asarray(order_cdf(np.arange(1, n + 1), n, 1.0 - alpha), dtype=float)


# ---------------------------------------------------------------------------
# non-triviality predicates
# ---------------------------------------------------------------------------

def qqm_feasible(m: int, n: int, alpha: float) -> bool:
    """Some (l, k) is marginally valid iff mn >= 1/alpha - 1."""
    return m * n >= 1.0 / alpha - 1.0


def qqm_fast_feasible(m: int, n: int, alpha: float) -> bool:
    """The fast marginal rule finds a candidate iff (1-alpha)^n <= (m-1/2)/(m+1/2)."""
    return (1.0 - alpha) ** n <= (m - 0.5) / (m + 0.5)


def qqm_fast_sufficient(m: int, n: int, alpha: float) -> bool:
    """Simple sufficient condition for :func:`qqm_fast_feasible`."""
    return n * (m - 0.5) >= 1.0 / alpha - 1.0


def qqc_feasible(m: int, n: int, alpha: float, beta: float) -> bool:
    """Some (l, k) is conditionally valid iff mn >= log(beta)/log(1-alpha)."""
    return m * n >= math.log(beta) / math.log1p(-alpha)


def qqc_fast_feasible(m: int, n: int, alpha: float, beta: float) -> bool:
    """The fast conditional rule finds a candidate iff
    m/(m+1) - sqrt(log(1/beta)/(2(m+2))) >= (1-alpha)^n."""
    return m / (m + 1) - math.sqrt(math.log(1.0 / beta) / (2 * (m + 2))) >= (1.0 - alpha) ** n


def qqc_fast_sufficient(m: int, n: int, alpha: float, beta: float) -> bool:
    """Simple sufficient condition for :func:`qqc_fast_feasible`."""
    return (n >= math.log(1.0 / 3.0) / math.log1p(-alpha)
            and m >= max(2.0, 4.5 * math.log(1.0 / beta) - 2.0))


def central_conditional_feasible(n_c: int, alpha: float, beta: float) -> bool:
    """The top rank is conditionally valid iff beta^(1/n_c) >= 1 - alpha."""
    return (1.0 - alpha) ** n_c <= beta


# ---------------------------------------------------------------------------
# equal-size planners
# ---------------------------------------------------------------------------

def qqm_fast_k(m: int, p) -> np.ndarray:
    """ceil((m + 1/2) p + 1/2), the bracket-based marginal server order."""
    return np.ceil((m + 0.5) * np.asarray(p) + 0.5).astype(int)


def qqc_fast_k(m: int, p, beta: float) -> np.ndarray:
    """ceil((m + 1)(p + sqrt(log(1/beta) / (2(m + 2)))))."""
    slack = math.sqrt(math.log(1.0 / beta) / (2.0 * (m + 2)))
    return np.ceil((m + 1) * (np.asarray(p) + slack)).astype(int)


def plan_qqm(shape: FederationShape, *, predict: bool = True) -> Plan:
    """Minimise M_{l,k} subject to M_{l,k} >= 1 - alpha."""
    n, m, alpha = _require_equal(shape), shape.m, shape.alpha
    target = 1.0 - alpha - FEAS_SLACK
    if not qqm_feasible(m, n, alpha):
        return _trivial(Method.QQM, shape, predict=predict)

    ells = np.arange(1, n + 1)
    p = inner_cdf_at_level(n, alpha)
    # Candidate k range per l from the quantile bracket, widened by one.
    k_lo = np.floor((m + 0.5) * p).astype(int)
    ok = k_lo <= m
    k_lo = np.clip(k_lo, 1, m)
    k_hi = np.clip(qqm_fast_k(m, p) + 1, 1, m)
    ells, p, k_lo, k_hi = ells[ok], p[ok], k_lo[ok], k_hi[ok]

    # Prune l whose lower bound exceeds the best certified upper bound.
    kt = qqm_fast_k(m, p)
    have = kt <= m
    if have.any():
        best_upper = np.min(order_quantile(ells[have], n, kt[have] / (m + 0.5)))
        lower = order_quantile(ells, n, np.maximum(k_lo - 0.5, 0.5) / (m + 0.5))
        keep = lower <= best_upper + 1e-9
        ells, k_lo, k_hi = ells[keep], k_lo[keep], k_hi[keep]

    cand_l = np.concatenate([np.arange(a, b + 1) * 0 + l for l, a, b in zip(ells, k_lo, k_hi)])
    cand_k = np.concatenate([np.arange(a, b + 1) for a, b in zip(k_lo, k_hi)])
    values = m_lk_quadrature_batch(cand_l, cand_k, n, m, tol=PLANNER_TOL)
    feas = values >= target
    if not feas.any():
        return _trivial(Method.QQM, shape, predict=predict)
    # minimal feasible k for every l (M increases with k)
    sel_l, sel_k, sel_v = [], [], []
    for l in np.unique(cand_l[feas]):
        idx = np.flatnonzero((cand_l == l) & feas)
        j = idx[np.argmin(cand_k[idx])]
        sel_l.append(l)
        sel_k.append(cand_k[j])
        sel_v.append(values[j])
    ell, k, _ = _pick(sel_l, sel_k, sel_v)
    return _equal_plan(Method.QQM, shape, Guarantee.MARGINAL, ell, k, predict=predict)


def plan_qqm_fast(shape: FederationShape, *, predict: bool = True) -> Plan:
    """Pick l minimising the upper bracket Q_l(k~/(m + 1/2)) with k~ from the bracket."""
    n, m, alpha = _require_equal(shape), shape.m, shape.alpha
    ells = np.arange(1, n + 1)
    kt = qqm_fast_k(m, inner_cdf_at_level(n, alpha))
    ok = kt <= m
    if not ok.any():
        return _trivial(Method.QQM_FAST, shape, predict=predict)
    crit = order_quantile(ells[ok], n, kt[ok] / (m + 0.5))
    ell, k, _ = _pick(ells[ok], kt[ok], crit)
    return _equal_plan(Method.QQM_FAST, shape, Guarantee.MARGINAL, ell, k, predict=predict)


def _qqc_min_k(m: int, p: np.ndarray, beta: float) -> np.ndarray:
    """Minimal k with F_(k:m)(p) <= beta for each p; m + 1 where none exists."""
    ks = np.arange(1, m + 1)
    qk = np.atleast_1d(order_quantile(ks, m, beta))
    qk = np.maximum.accumulate(qk)
    # F_(k:m)(p) <= beta  <=>  p <= Q_(k:m)(beta)
    k = np.clip(np.searchsorted(qk, p, side="left") + 1, 1, m + 1)
    # Re-check against the cdf itself so rounding in the quantiles cannot
    # move the boundary.
    for _ in range(m + 1):
        down = (k > 1) & (order_cdf(np.maximum(k - 1, 1), m, p) <= beta)
        up = (k <= m) & (order_cdf(np.minimum(k, m), m, p) > beta)
        if not (down.any() or up.any()):
            break
        k = k - down + up
    return k


def plan_qqc(shape: FederationShape, *, predict: bool = True) -> Plan:
    """Minimise Q_BB(1 - beta) subject to Q_BB(beta) >= 1 - alpha."""
    n, m, alpha, beta = _require_equal(shape), shape.m, shape.alpha, shape.beta
    if not qqc_feasible(m, n, alpha, beta):
        return _trivial(Method.QQC, shape, predict=predict)
    ells = np.arange(1, n + 1)
    p = inner_cdf_at_level(n, alpha)
    kmin = _qqc_min_k(m, p, beta)
    ok = kmin <= m
    if not ok.any():
        return _trivial(Method.QQC, shape, predict=predict)
    ells, kmin = ells[ok], kmin[ok]
    crit = order_quantile(ells, n, order_quantile(kmin, m, 1.0 - beta))
    ell, k, _ = _pick(ells, kmin, crit)
    return _equal_plan(Method.QQC, shape, Guarantee.TRAINING_CONDITIONAL, ell, k, predict=predict)


def plan_qqc_fast(shape: FederationShape, *, predict: bool = True) -> Plan:
    """Use the concentration-based server order and minimise Q_BB(1 - beta)."""
    n, m, alpha, beta = _require_equal(shape), shape.m, shape.alpha, shape.beta
    ells = np.arange(1, n + 1)
    kt = qqc_fast_k(m, inner_cdf_at_level(n, alpha), beta)
    ok = kt <= m
    if not ok.any():
        return _trivial(Method.QQC_FAST, shape, predict=predict)
    crit = order_quantile(ells[ok], n, order_quantile(kt[ok], m, 1.0 - beta))
    ell, k, _ = _pick(ells[ok], kt[ok], crit)
    return _equal_plan(Method.QQC_FAST, shape, Guarantee.TRAINING_CONDITIONAL, ell, k, predict=predict)


# ---------------------------------------------------------------------------
# unequal sizes
# ---------------------------------------------------------------------------

def nj_inner_orders(ns: Sequence[int], alpha: float) -> tuple[tuple, tuple]:
    """Per-agent split ranks ceil((1-alpha)(n_j+1)), clamped to n_j, plus flags."""
    ells, flags = [], []
    for j, n in enumerate(ns):
        e = split_rank(n, alpha)
        if e > n:
            flags.append(f"clamped_ell[{j}]:{e}->{n}")
            e = n
        ells.append(e)
    return tuple(ells), tuple(flags)


def plan_qqm_nj(shape: FederationShape, *, predict: bool = True) -> Plan:
    """Fix the per-agent split ranks and take the minimal marginally valid k."""
    ells, flags = nj_inner_orders(shape.ns, shape.alpha)
    m = shape.m
    target = 1.0 - shape.alpha - FEAS_SLACK

    def value(k):
        return float(m_multi_quadrature_ks(ells, shape.ns, [k], tol=PLANNER_TOL)[0])

    if value(m) < target:
        return _trivial(Method.QQM_NJ, shape, flags, predict=predict)
    lo, hi = 0, m            # value(lo) infeasible (or lo == 0), value(hi) feasible
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if value(mid) >= target:
            hi = mid
        else:
            lo = mid
    plan = Plan(Method.QQM_NJ, m, shape.ns, shape.alpha, shape.beta, Guarantee.MARGINAL,
                ells=ells, k=hi, flags=flags)
    return _with_prediction(plan, predict)


def plan_qqc_nj(shape: FederationShape, *, predict: bool = True) -> Plan:
    """Fix the per-agent split ranks and take the minimal k with
    PB(k - 1; (F_(l_j:n_j)(1 - alpha))_j) >= 1 - beta."""
    ells, flags = nj_inner_orders(shape.ns, shape.alpha)
    m = shape.m
    p = np.asarray(order_cdf(np.array(ells), np.array(shape.ns), 1.0 - shape.alpha), dtype=float)
    # PB cdf at every k - 1 = 0..m-1 from one DP
    state = np.zeros(m + 1)
    state[0] = 1.0
    for pj in p:
        shifted = state[:-1] * pj
        state *= 1.0 - pj
        state[1:] += shifted
    cdf = np.cumsum(state)[:m]
    feas = np.flatnonzero(cdf >= 1.0 - shape.beta)
    if feas.size == 0:
        return _trivial(Method.QQC_NJ, shape, flags, predict=predict)
    plan = Plan(Method.QQC_NJ, m, shape.ns, shape.alpha, shape.beta,
                Guarantee.TRAINING_CONDITIONAL, ells=ells, k=int(feas[0]) + 1, flags=flags)
    return _with_prediction(plan, predict)


# ---------------------------------------------------------------------------
# centralized split conformal
# ---------------------------------------------------------------------------

def _central_shape(n_c, alpha, beta):
    return FederationShape(1, (int(n_c),), alpha, beta)


def plan_central_marginal(n_c: int, alpha: float, beta: float = DEFAULT_BETA, *, predict: bool = True) -> Plan:
    """Pooled split conformal with rank ceil((1 - alpha)(n_c + 1))."""
    shape = _central_shape(n_c, alpha, beta)
    r = split_rank(n_c, alpha)
    if r > n_c:
        return _trivial(Method.CENTRAL_M, shape, central=True, predict=predict)
    plan = Plan(Method.CENTRAL_M, 1, (n_c,), alpha, beta, Guarantee.MARGINAL, r=r)
    return _with_prediction(plan, predict)


def central_conditional_rank(n_c: int, alpha: float, beta: float) -> Optional[int]:
    """Minimal r with F_(r:n_c)(1 - alpha) <= beta, or None."""
    if not central_conditional_feasible(n_c, alpha, beta):
        return None
    lo, hi = 0, n_c          # hi feasible
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if order_cdf(mid, n_c, 1.0 - alpha) <= beta:
            hi = mid
        else:
            lo = mid
    return hi


def plan_central_conditional(n_c: int, alpha: float, beta: float = DEFAULT_BETA, *, predict: bool = True) -> Plan:
    """Pooled split conformal with the smallest conditionally valid rank."""
    shape = _central_shape(n_c, alpha, beta)
    r = central_conditional_rank(n_c, alpha, beta)
    if r is None:
        return _trivial(Method.CENTRAL_C, shape, central=True, predict=predict)
    plan = Plan(Method.CENTRAL_C, 1, (n_c,), alpha, beta, Guarantee.TRAINING_CONDITIONAL, r=r)
    return _with_prediction(plan, predict)


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

_PLANNERS = {
    Method.QQM: plan_qqm,
    Method.QQM_FAST: plan_qqm_fast,
    Method.QQC: plan_qqc,
    Method.QQC_FAST: plan_qqc_fast,
    Method.QQM_NJ: plan_qqm_nj,
    Method.QQC_NJ: plan_qqc_nj,
}


def make_plan(method: Method | str, shape: FederationShape, *, predict: bool = True) -> Plan:
    """Run the planner for ``method``; central methods pool all calibration data.

    ``predict=False`` skips the coverage summary, which dominates the cost
    of feasibility sweeps.
    """
    method = Method(method)
    if method is Method.CENTRAL_M:
        return plan_central_marginal(shape.total, shape.alpha, shape.beta, predict=predict)
    if method is Method.CENTRAL_C:
        return plan_central_conditional(shape.total, shape.alpha, shape.beta, predict=predict)
    if method is Method.FEDCP_AVG:
        ells, flags = nj_inner_orders(shape.ns, shape.alpha)
        return Plan(Method.FEDCP_AVG, shape.m, shape.ns, shape.alpha, shape.beta,
                    Guarantee.NONE, ells=ells, flags=flags)
    return _PLANNERS[method](shape, predict=predict)
