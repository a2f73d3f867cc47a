"""Simulation of the one-round federated calibration protocol.

Every agent sorts its local calibration scores and sends a single number
to the server: its ``ell_j``-th smallest score.  The server keeps the k-th
smallest message as the threshold, and a test point is covered when its
score does not exceed the threshold.  Two baselines sit alongside: pooled
split conformal (all scores in one place) and the averaging rule, which
thresholds at the mean of the agents' split-conformal quantiles.

:func:`replicate` runs many independent calibrations from a
:class:`ScoreModel` and reports the exact conditional coverage
``F_S(threshold)`` of each.  Order statistics are taken with
``np.partition`` on whole blocks of replications at once.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import erf

from .errors import DomainError
from .planners import FederationShape, Method, Plan, nj_inner_orders

#: Upper bound on the number of scores drawn per (block, agent) batch.
BLOCK_ELEMENTS = 1 << 21
MAX_BLOCK = 4096


class ScoreKind(str, enum.Enum):
    UNIFORM = "UNIFORM"
    EXPONENTIAL = "EXPONENTIAL"
    BERNOULLI = "BERNOULLI"
    GAUSSIAN_RESIDUAL = "GAUSSIAN_RESIDUAL"
    CUSTOM = "CUSTOM"


@dataclass(frozen=True)
class ScoreModel:
    """Generator of i.i.d. nonconformity scores with (mostly) known cdf.

    ``params`` holds ``a, b`` for UNIFORM, ``lam`` for EXPONENTIAL, ``p`` for
    BERNOULLI, ``sigma`` for GAUSSIAN_RESIDUAL (score ``|eps|``) and
    ``values`` for CUSTOM, which resamples a fixed pool.
    """

    kind: ScoreKind
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        kind = ScoreKind(self.kind)
        object.__setattr__(self, "kind", kind)
        p = dict(self.params)
        if kind is ScoreKind.UNIFORM:
            p.setdefault("a", 0.0)
            p.setdefault("b", 1.0)
            if not p["a"] < p["b"]:
                raise DomainError("uniform model needs a < b")
        elif kind is ScoreKind.EXPONENTIAL:
            p.setdefault("lam", 1.0)
            if not p["lam"] > 0:
                raise DomainError("exponential rate must be positive")
        elif kind is ScoreKind.BERNOULLI:
            if not 0.0 <= p.get("p", -1.0) <= 1.0:
                raise DomainError("Bernoulli model needs p in [0, 1]")
        elif kind is ScoreKind.GAUSSIAN_RESIDUAL:
            p.setdefault("sigma", 1.0)
            if not p["sigma"] > 0:
                raise DomainError("sigma must be positive")
        else:
            vals = np.asarray(p.get("values", ()), dtype=float)
            if vals.size == 0 or not np.all(np.isfinite(vals)):
                raise DomainError("custom model needs a non-empty finite pool of values")
            p["values"] = np.sort(vals)
        object.__setattr__(self, "params", p)
        if not 0 <= int(self.seed) < 2 ** 64:
            raise DomainError("seed must fit in 64 unsigned bits")

    # -- construction ------------------------------------------------------
    @classmethod
    def uniform(cls, a=0.0, b=1.0, seed=0):
        return cls(ScoreKind.UNIFORM, {"a": a, "b": b}, seed)

    @classmethod
    def exponential(cls, lam=1.0, seed=0):
        return cls(ScoreKind.EXPONENTIAL, {"lam": lam}, seed)

    @classmethod
    def bernoulli(cls, p, seed=0):
        return cls(ScoreKind.BERNOULLI, {"p": p}, seed)

    @classmethod
    def gaussian_residual(cls, sigma=1.0, seed=0):
        return cls(ScoreKind.GAUSSIAN_RESIDUAL, {"sigma": sigma}, seed)

    @classmethod
    def custom(cls, values, seed=0):
        return cls(ScoreKind.CUSTOM, {"values": values}, seed)

    @classmethod
    def from_json(cls, text: str) -> "ScoreModel":
        try:
            data = json.loads(text)
            kind = ScoreKind(str(data.pop("kind")).upper())
            seed = int(data.pop("seed", 0))
        except (KeyError, ValueError, AttributeError, TypeError) as exc:
            raise DomainError(f"malformed score model: {exc}") from exc
        return cls(kind, data, seed)

    # -- behaviour ---------------------------------------------------------
    @property
    def analytic(self) -> bool:
        return self.kind is not ScoreKind.CUSTOM

    @property
    def continuous(self) -> bool:
        return self.kind not in (ScoreKind.BERNOULLI, ScoreKind.CUSTOM)

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        p = self.params
        if self.kind is ScoreKind.UNIFORM:
            return rng.uniform(p["a"], p["b"], size)
        if self.kind is ScoreKind.EXPONENTIAL:
            return rng.exponential(1.0 / p["lam"], size)
        if self.kind is ScoreKind.BERNOULLI:
            return (rng.random(size) < p["p"]).astype(float)
        if self.kind is ScoreKind.GAUSSIAN_RESIDUAL:
            return np.abs(rng.normal(0.0, p["sigma"], size))
        return rng.choice(p["values"], size=size, replace=True)

    def cdf(self, s) -> np.ndarray:
        """F_S(s); for CUSTOM the pool's empirical cdf."""
        s = np.asarray(s, dtype=float)
        p = self.params
        if self.kind is ScoreKind.UNIFORM:
            return np.clip((s - p["a"]) / (p["b"] - p["a"]), 0.0, 1.0)
        if self.kind is ScoreKind.EXPONENTIAL:
            return np.where(s > 0, -np.expm1(-p["lam"] * np.maximum(s, 0.0)), 0.0)
        if self.kind is ScoreKind.BERNOULLI:
            return np.where(s >= 1.0, 1.0, np.where(s >= 0.0, 1.0 - p["p"], 0.0))
        if self.kind is ScoreKind.GAUSSIAN_RESIDUAL:
            return np.where(s > 0, erf(np.maximum(s, 0.0) / (p["sigma"] * math.sqrt(2.0))), 0.0)
        vals = p["values"]
        return np.searchsorted(vals, s, side="right") / vals.size

    def interval_length(self, threshold):
        """Prediction-interval length for residual scores, else NaN."""
        if self.kind is ScoreKind.GAUSSIAN_RESIDUAL:
            return 2.0 * np.asarray(threshold, dtype=float)
        return np.full(np.shape(threshold), np.nan)


@dataclass
class ScoreMatrix:
    """Calibration scores split by agent."""

    scores: list

    def __post_init__(self):
        self.scores = [np.asarray(s, dtype=float).ravel() for s in self.scores]
        if not self.scores or any(s.size == 0 for s in self.scores):
            raise DomainError("every agent needs at least one score")
        if any(not np.all(np.isfinite(s)) for s in self.scores):
            raise DomainError("scores must be finite")

    @property
    def m(self) -> int:
        return len(self.scores)

    @property
    def ns(self) -> tuple:
        return tuple(int(s.size) for s in self.scores)

    def flatten(self) -> np.ndarray:
        return np.concatenate(self.scores)

    def check(self, shape: FederationShape) -> None:
        if self.ns != tuple(shape.ns):
            raise DomainError(f"score sizes {self.ns} do not match shape sizes {shape.ns}")


@dataclass
class ProtocolTrace:
    """Every message crossing the agent/server boundary in one round."""

    uplink: list = field(default_factory=list)     # (agent, value)
    downlink: list = field(default_factory=list)   # data-dependent server->agent messages

    def send(self, agent: int, value: float) -> None:
        self.uplink.append((agent, float(value)))

    def is_one_shot(self, m: int) -> bool:
        agents = [a for a, _ in self.uplink]
        return sorted(agents) == list(range(m)) and not self.downlink


@dataclass
class SimResult:
    threshold: float
    conditional_coverage: float = float("nan")
    empirical_coverage: float = float("nan")
    interval_length: float = float("nan")
    trace: Optional[ProtocolTrace] = None


def _kth(values: np.ndarray, k: int) -> float:
    """k-th smallest (1-based) under a stable sort."""
    return float(np.sort(values, kind="stable")[k - 1])


def _finish(threshold, model, test_scores, trace=None) -> SimResult:
    res = SimResult(threshold=float(threshold), trace=trace)
    if model is not None:
        if math.isinf(threshold):
            res.conditional_coverage = 1.0
        else:
            res.conditional_coverage = float(model.cdf(threshold))
        res.interval_length = float(model.interval_length(threshold))
    if test_scores is not None:
        test = np.asarray(test_scores, dtype=float)
        res.empirical_coverage = float(np.mean(test <= threshold)) if test.size else float("nan")
    return res


def run_qq_protocol(shape: FederationShape, scores: ScoreMatrix, plan: Plan,
                    test_scores=None, model: Optional[ScoreModel] = None) -> SimResult:
    """One round: agents send their ell_j-th smallest score, server keeps the k-th smallest."""
    scores.check(shape)
    trace = ProtocolTrace()
    if plan.is_trivial:
        return _finish(math.inf, model, test_scores, trace)
    if plan.ells is None or plan.k is None or len(plan.ells) != shape.m:
        raise DomainError("plan's orders are not compatible with the federation shape")
    for j, (s, ell) in enumerate(zip(scores.scores, plan.ells)):
        if not 1 <= ell <= s.size:
            raise DomainError(f"agent {j}: order {ell} outside 1..{s.size}")
        trace.send(j, _kth(s, ell))
    messages = np.array([v for _, v in trace.uplink])
    return _finish(_kth(messages, plan.k), model, test_scores, trace)


def run_central(scores, plan: Plan, test_scores=None, model: Optional[ScoreModel] = None) -> SimResult:
    """Pooled split conformal: threshold at the r-th smallest score."""
    flat = scores.flatten() if isinstance(scores, ScoreMatrix) else np.asarray(scores, dtype=float).ravel()
    if plan.is_trivial:
        return _finish(math.inf, model, test_scores)
    if plan.r is None or not 1 <= plan.r <= flat.size:
        raise DomainError("central plan needs a rank r within the pooled sample")
    return _finish(_kth(flat, plan.r), model, test_scores)


def fedcp_avg_orders(ns: Sequence[int], alpha: float) -> tuple[tuple, tuple]:
    """Per-agent ranks ceil((n_j + 1)(1 - alpha)), clamped to n_j."""
    return nj_inner_orders(ns, alpha)


def run_fedcp_avg(shape: FederationShape, scores: ScoreMatrix, test_scores=None,
                  model: Optional[ScoreModel] = None) -> SimResult:
    """Average of the agents' split-conformal quantiles (no coverage guarantee)."""
    scores.check(shape)
    ells, _ = fedcp_avg_orders(shape.ns, shape.alpha)
    trace = ProtocolTrace()
    for j, (s, ell) in enumerate(zip(scores.scores, ells)):
        trace.send(j, _kth(s, ell))
    threshold = float(np.mean([v for _, v in trace.uplink]))
    return _finish(threshold, model, test_scores, trace)


# ---------------------------------------------------------------------------
# replication harness
# ---------------------------------------------------------------------------

@dataclass
class Replication:
    thresholds: np.ndarray
    coverages: np.ndarray
    empirical: np.ndarray
    lengths: np.ndarray

    @property
    def summary(self) -> dict:
        c = self.coverages
        return {
            "R": int(c.size),
            "mean": float(np.mean(c)),
            "std": float(np.std(c, ddof=1)) if c.size > 1 else 0.0,
            "se": float(np.std(c, ddof=1) / math.sqrt(c.size)) if c.size > 1 else 0.0,
            "q_0.1": float(np.quantile(c, 0.1)),
            "q_0.5": float(np.quantile(c, 0.5)),
            "q_0.9": float(np.quantile(c, 0.9)),
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["replication", "threshold", "cond_coverage", "emp_coverage", "length"])
        for i in range(self.coverages.size):
            w.writerow([i] + [_fmt(v) for v in (self.thresholds[i], self.coverages[i],
                                                 self.empirical[i], self.lengths[i])])
        return buf.getvalue()


def _fmt(v: float) -> str:
    if math.isnan(v):
        return ""
    return f"{v:.12g}"


def block_size(ns: Sequence[int]) -> int:
    """Replications per block; fixed by the shape so results do not depend on scheduling."""
    return int(max(1, min(MAX_BLOCK, BLOCK_ELEMENTS // max(ns))))


def _stream(seed: int, block: int, agent: int) -> np.random.Generator:
    """Independent counter-based stream for one (block, agent) pair."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(block, agent))))


def _orders_for(plan: Plan, shape: FederationShape):
    """(ns, ells, aggregator) describing one calibration round."""
    if plan.method is Method.FEDCP_AVG:
        ells, _ = fedcp_avg_orders(shape.ns, shape.alpha)
        return shape.ns, ells, "mean"
    if plan.r is not None:
        # pooled sample, one "agent" holding all scores
        return (plan.ns[0],), (plan.r,), 1
    return shape.ns, plan.ells, plan.k


def replicate(shape: FederationShape, model: ScoreModel, plan: Plan, R: int,
              n_test: int = 0, seed: Optional[int] = None) -> Replication:
    """R independent calibrations with fresh scores; exact F_S at each threshold.

    Each (replication block, agent) pair draws from its own Philox stream
    keyed by ``seed`` (default: the model's seed), so results are identical
    across runs.  Central plans draw the pooled sample directly.
    With ``n_test > 0`` each replication also scores that many fresh test
    points and reports their empirical coverage.
    """
    if R < 1:
        raise DomainError("R must be at least 1")
    seed = model.seed if seed is None else int(seed)
    if plan.is_trivial:
        inf = np.full(R, np.inf)
        nan = np.full(R, np.nan)
        return Replication(inf, np.ones(R), np.ones(R) if n_test else nan, nan)
    ns, ells, agg = _orders_for(plan, shape)
    B = block_size(ns)
    thresholds = np.empty(R)
    for b, start in enumerate(range(0, R, B)):
        size = min(B, R - start)
        msgs = np.empty((size, len(ns)))
        for j, (n, ell) in enumerate(zip(ns, ells)):
            draws = model.sample(_stream(seed, b, j), (size, n))
            msgs[:, j] = np.partition(draws, ell - 1, axis=1)[:, ell - 1]
        if agg == "mean":
            thresholds[start:start + size] = msgs.mean(axis=1)
        else:
            thresholds[start:start + size] = np.partition(msgs, agg - 1, axis=1)[:, agg - 1]
    coverages = model.cdf(thresholds).astype(float)
    empirical = np.full(R, np.nan)
    if n_test > 0:
        tb = max(1, BLOCK_ELEMENTS // n_test)
        for b, start in enumerate(range(0, R, tb)):
            size = min(tb, R - start)
            test = model.sample(_stream(seed, b, len(ns) + 1), (size, n_test))
            empirical[start:start + size] = np.mean(test <= thresholds[start:start + size, None], axis=1)
    return Replication(thresholds, coverages, empirical, model.interval_length(thresholds))


# ---------------------------------------------------------------------------
# analytic coverage of the averaging rule
# ---------------------------------------------------------------------------

def avg_analytic_coverage(model: ScoreModel, shape: FederationShape, ells: Optional[Sequence[int]] = None) -> float:
    """Exact marginal coverage of the averaged threshold for simple score laws.

    * uniform on [a, b]: the cdf is linear, giving the mean of l_j/(n_j+1);
    * Bernoulli(p): a score of one is covered only when every agent sends
      one, giving (1 - p) + p prod_j F_(n_j - l_j + 1 : n_j)(p);
    * exponential: by the Renyi representation of exponential order
      statistics, 1 - prod_j prod_{i <= l_j} (1 + 1/(m (n_j - i + 1)))^(-1).
    """
    from .special import order_cdf

    if ells is None:
        ells, _ = fedcp_avg_orders(shape.ns, shape.alpha)
    ells, ns, m = list(ells), list(shape.ns), shape.m
    if model.kind is ScoreKind.UNIFORM:
        return float(np.mean([e / (n + 1) for e, n in zip(ells, ns)]))
    if model.kind is ScoreKind.BERNOULLI:
        p = model.params["p"]
        send_one = [float(order_cdf(n - e + 1, n, p)) for e, n in zip(ells, ns)]
        return float((1.0 - p) + p * np.prod(send_one))
    if model.kind is ScoreKind.EXPONENTIAL:
        log_mgf = 0.0
        for e, n in zip(ells, ns):
            i = np.arange(1, e + 1)
            log_mgf -= np.sum(np.log1p(1.0 / (m * (n - i + 1))))
        return float(-np.expm1(log_mgf))
    raise DomainError(f"no closed form for {model.kind.value} scores")


def falsification_instance(c: float = 0.5, n: int = 4, factor: int = 10, alpha: float = 0.1):
    """Bernoulli shape on which the averaging rule under-covers.

    Uses m = factor * n^n agents and p = 1 - (log(1/c)/m)^(1/n); every agent
    sends its maximum, so the coverage is (1 - p) + p (1 - log(1/c)/m)^m,
    close to (1 - p) + p c.
    """
    m = factor * n ** n
    p = 1.0 - (math.log(1.0 / c) / m) ** (1.0 / n)
    shape = FederationShape.equal(m, n, alpha)
    return shape, ScoreModel.bernoulli(p)
