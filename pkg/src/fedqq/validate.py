"""Fast self-checks of the package's core invariants.

Each check is a small function returning True on success and is registered
under ``<module>`` with a dotted invariant name.  ``run_checks`` runs them
all and reports counts per module.  ``inject`` swaps a primitive for a
deliberately broken version so the harness itself can be exercised.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from . import special
from .marginal import (
    MultiOrder,
    PairOrder,
    m_lk_bounds,
    m_lk_exact,
    m_lk_quadrature,
    m_multi_exact,
    m_multi_quadrature,
)


@dataclass
class Primitives:
    """Functions under test; replaced wholesale when a fault is injected."""

    beta_cdf: Callable = special.order_cdf
    beta_sf: Callable = special.order_sf
    beta_quantile: Callable = special.order_quantile
    pb_pmf: Callable = special.poisson_binomial_pmf


FAULTS = {
    # cdf that decreases in t
    "beta_cdf": lambda prims: setattr(prims, "beta_cdf",
                                      lambda r, N, t: 1.0 - special.order_cdf(r, N, t)),
    "beta_quantile": lambda prims: setattr(prims, "beta_quantile",
                                           lambda r, N, p: 0.5 * special.order_quantile(r, N, p)),
    "poisson_binomial": lambda prims: setattr(prims, "pb_pmf",
                                              lambda probs: special.poisson_binomial_pmf(probs[:-1])),
}


@dataclass
class Report:
    counts: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        return {
            "status": "PASS" if self.ok else "FAIL",
            "modules": self.counts,
            "failures": self.failures,
        }


# -- special functions -------------------------------------------------------

def _check_monotone(P):
    t = np.linspace(0, 1, 201)
    for r, N in [(1, 1), (2, 5), (7, 9), (30, 60), (400, 500)]:
        c = P.beta_cdf(r, N, t)
        if np.any(np.diff(c) < -1e-15):
            return False
    return True


def _check_endpoints(P):
    return all(P.beta_cdf(r, N, 0.0) == 0.0 and P.beta_cdf(r, N, 1.0) == 1.0
               for r, N in [(1, 1), (3, 7), (50, 50)])


def _check_symmetry(P):
    t = np.linspace(0, 1, 51)
    for r, N in [(2, 5), (10, 30), (1, 4)]:
        if np.max(np.abs(P.beta_cdf(r, N, t) - (1 - P.beta_cdf(N - r + 1, N, 1 - t)))) > 1e-13:
            return False
    return True


def _check_binomial_sum(P):
    for N in (1, 5, 12, 30):
        for r in range(1, N + 1):
            t = 0.37
            exact = sum(math.comb(N, i) * Fraction(37, 100) ** i * Fraction(63, 100) ** (N - i)
                        for i in range(r, N + 1))
            if abs(float(P.beta_cdf(r, N, t)) - float(exact)) > 1e-13 * max(float(exact), 1e-300) + 1e-300:
                return False
    return True


def _check_quantile_roundtrip(P):
    p = np.array([1e-6, 0.01, 0.2, 0.5, 0.8, 0.99, 1 - 1e-6])
    for r, N in [(1, 3), (4, 9), (100, 400)]:
        q = P.beta_quantile(r, N, p)
        if np.max(np.abs(P.beta_cdf(r, N, q) - p)) > 1e-12:
            return False
    return True


def _check_quantile_bounds(P):
    for N in (1, 7, 40):
        for r in range(1, N + 1):
            law = special.OrderStatLaw(r, N)
            for d in (0.01, 0.2, 0.5):
                lo, hi = special.beta_quantile_bounds(law, d)
                if not (lo <= P.beta_quantile(r, N, d) and P.beta_quantile(r, N, 1 - d) <= hi):
                    return False
    return True


def _check_pb_enumeration(P):
    rng = np.random.default_rng(7)
    for m in (1, 3, 8):
        probs = rng.random(m)
        pmf = P.pb_pmf(probs)
        brute = np.zeros(m + 1)
        for bits in itertools.product((0, 1), repeat=m):
            brute[sum(bits)] += np.prod([p if b else 1 - p for p, b in zip(probs, bits)])
        if pmf.shape != brute.shape or np.max(np.abs(pmf - brute)) > 1e-14:
            return False
    return True


def _check_beta_beta(P):
    t = np.linspace(0, 1, 21)
    law = special.BetaBetaLaw(2, 5, 3, 4)
    comp = P.beta_cdf(3, 4, P.beta_cdf(2, 5, t))
    return bool(np.max(np.abs(law.cdf(t) - comp)) < 1e-15)


# -- marginal expectation ------------------------------------------------------

def _check_exact_vs_quad(P):
    for m, n in [(1, 1), (2, 3), (3, 4)]:
        for ell in range(1, n + 1):
            for k in range(1, m + 1):
                o = PairOrder(ell, k, n, m)
                if abs(float(m_lk_exact(o)) - m_lk_quadrature(o)) > 1e-9:
                    return False
    return True


def _check_bracket(P):
    for m, n in [(2, 3), (4, 5)]:
        for ell in range(1, n + 1):
            for k in range(1, m + 1):
                o = PairOrder(ell, k, n, m)
                lo, hi = m_lk_bounds(o)
                if not lo < float(m_lk_exact(o)) < hi:
                    return False
    return True


def _check_complement(P):
    m, n = 3, 4
    return all(m_lk_exact(PairOrder(l, k, n, m)) == 1 - m_lk_exact(PairOrder(n - l + 1, m - k + 1, n, m))
               for l in range(1, n + 1) for k in range(1, m + 1))


def _check_multi(P):
    o = MultiOrder((1, 2, 3), (2, 3, 4), 2)
    return abs(float(m_multi_exact(o)) - m_multi_quadrature(o)) < 1e-9


# -- planners --------------------------------------------------------------------

def _check_lemmas(P):
    from .planners import (FederationShape, plan_qqc, plan_qqc_fast, plan_qqm, plan_qqm_fast,
                           qqc_fast_feasible, qqc_feasible, qqm_fast_feasible, qqm_feasible)
    for m in range(1, 7):
        for n in range(1, 7):
            for alpha in (0.1, 0.5):
                s = FederationShape.equal(m, n, alpha, 0.2)
                pairs = [(plan_qqm, qqm_feasible(m, n, alpha)),
                         (plan_qqm_fast, qqm_fast_feasible(m, n, alpha)),
                         (plan_qqc, qqc_feasible(m, n, alpha, 0.2)),
                         (plan_qqc_fast, qqc_fast_feasible(m, n, alpha, 0.2))]
                for planner, feasible in pairs:
                    if planner(s).is_trivial == feasible:
                        return False
    return True


def _check_split_rank(P):
    from .planners import plan_central_marginal
    for n_c in (9, 99, 3999):
        p = plan_central_marginal(n_c, 0.1)
        if p.predicted["mean"] != math.ceil(0.9 * (n_c + 1) - 1e-9) / (n_c + 1):
            return False
    return True


def _check_m1(P):
    from .planners import (FederationShape, plan_central_conditional, plan_central_marginal,
                           plan_qqc, plan_qqm)
    for n in (9, 19, 40):
        s = FederationShape.equal(1, n, 0.1, 0.2)
        a, b = plan_qqm(s), plan_central_marginal(n, 0.1, 0.2)
        if a.is_trivial != b.is_trivial or (not a.is_trivial and a.ell != b.r):
            return False
        a, b = plan_qqc(s), plan_central_conditional(n, 0.1, 0.2)
        if a.is_trivial != b.is_trivial or (not a.is_trivial and a.ell != b.r):
            return False
    return True


# -- coverage --------------------------------------------------------------------

def _check_law_roundtrip(P):
    from .coverage import coverage_law
    from .planners import FederationShape, make_plan
    plan = make_plan("QQC", FederationShape.equal(10, 10, 0.1, 0.2))
    law = coverage_law(plan)
    p = np.linspace(0.01, 0.99, 9)
    return bool(np.max(np.abs(law.cdf(law.quantile(p)) - p)) < 1e-9)


def _check_law_mean(P):
    from .coverage import coverage_law
    from .planners import FederationShape, make_plan
    plan = make_plan("QQM", FederationShape.equal(8, 6, 0.1))
    return abs(coverage_law(plan).mean - m_lk_quadrature(PairOrder(plan.ell, plan.k, 6, 8))) < 1e-8


def _check_bounds(P):
    from .coverage import check_conditional_bound, check_marginal_bound
    return check_marginal_bound(18, 20, 0.1)["ok"] and check_conditional_bound(18, 20, 0.1, 0.2)["ok"]


# -- simulation ------------------------------------------------------------------

def _check_protocol(P):
    from .fed_sim import ScoreMatrix, run_qq_protocol
    from .planners import FederationShape, Guarantee, Method, Plan
    shape = FederationShape.equal(2, 2, 0.1)
    plan = Plan(Method.QQM, 2, (2, 2), 0.1, 0.2, Guarantee.MARGINAL, ells=(2, 2), k=1)
    res = run_qq_protocol(shape, ScoreMatrix([[0.1, 0.4], [0.2, 0.3]]), plan)
    return res.threshold == 0.3 and res.trace.is_one_shot(2)


def _check_avg_uniform(P):
    from .fed_sim import ScoreModel, avg_analytic_coverage, replicate
    from .planners import FederationShape, make_plan
    shape = FederationShape.equal(3, 9, 0.1)
    model = ScoreModel.uniform(seed=3)
    rep = replicate(shape, model, make_plan("FEDCP_AVG", shape), 20000)
    s = rep.summary
    return abs(s["mean"] - avg_analytic_coverage(model, shape)) < 5 * s["se"]


CHECKS = {
    "special_functions": [
        ("beta_cdf.monotone", _check_monotone),
        ("beta_cdf.endpoints", _check_endpoints),
        ("beta_cdf.symmetry", _check_symmetry),
        ("beta_cdf.binomial_sum", _check_binomial_sum),
        ("beta_quantile.roundtrip", _check_quantile_roundtrip),
        ("beta_quantile.bounds_sandwich", _check_quantile_bounds),
        ("beta_beta.composition", _check_beta_beta),
        ("poisson_binomial.enumeration", _check_pb_enumeration),
    ],
    "marginal_expectation": [
        ("m_lk.exact_vs_quadrature", _check_exact_vs_quad),
        ("m_lk.bracket", _check_bracket),
        ("m_lk.complement_symmetry", _check_complement),
        ("m_multi.exact_vs_quadrature", _check_multi),
    ],
    "planners": [
        ("planners.lemma_equivalence", _check_lemmas),
        ("central_m.split_rank", _check_split_rank),
        ("planners.single_agent_reduction", _check_m1),
    ],
    "coverage_analysis": [
        ("coverage_law.roundtrip", _check_law_roundtrip),
        ("coverage_law.mean_equals_M", _check_law_mean),
        ("upper_bounds.dominate", _check_bounds),
    ],
    "fed_sim": [
        ("protocol.one_shot", _check_protocol),
        ("fedcp_avg.uniform_closed_form", _check_avg_uniform),
    ],
}


def run_checks(inject: str | None = None) -> Report:
    prims = Primitives()
    if inject is not None:
        if inject not in FAULTS:
            raise ValueError(f"unknown fault {inject!r}; choose from {sorted(FAULTS)}")
        FAULTS[inject](prims)
    report = Report()
    for module, checks in CHECKS.items():
        passed = failed = 0
        for name, fn in checks:
            try:
                ok = bool(fn(prims))
                detail = None
            except Exception as exc:  # a crash counts as a failed invariant
                ok, detail = False, f"{type(exc).__name__}: {exc}"
            if ok:
                passed += 1
            else:
                failed += 1
                report.failures.append({"module": module, "invariant": name, "detail": detail})
        report.counts[module] = {"passed": passed, "failed": failed}
    return report
