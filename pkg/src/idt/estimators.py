"""Loss-parameter estimation from decision logs, and the group calibration audit."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .agents import DecisionLog
from .analytic import posterior_mass_between
from .classes import ClassFamily, ThresholdClass
from .distribution import PiecewiseDistribution, _fmt, posterior_many
from .errors import (
    EmptyLogError,
    InconsistentLogError,
    MissingAttributeError,
    NoConsistentClassError,
    NonMonotoneError,
    ValidationError,
)
from .hypothesis import (
    DEFAULT_C_GRID,
    VacuousCheckWarning,
    class_complexity,
    enumerate_family,
    induced_posterior_scores,
    monotone_on_scores,
)
from .measure import score_values

CALIBRATED = "Calibrated"
NOT_CALIBRATED = "NotCalibrated"
INCONCLUSIVE = "Inconclusive"


@dataclass
class EstimateResult:
    """Consistent interval (lo, hi] for c, its midpoint and bookkeeping."""

    interval: tuple[float, float]
    c_hat: float
    selected_class_id: str | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def width(self) -> float:
        return self.interval[1] - self.interval[0]

    def contains(self, c: float) -> bool:
        return self.interval[0] < c <= self.interval[1]

    def to_dict(self) -> dict:
        return {
            "interval": [_fmt(self.interval[0]), _fmt(self.interval[1])],
            "c_hat": _fmt(self.c_hat),
            "selected_class": self.selected_class_id,
            "diagnostics": self.diagnostics,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def consistent_interval(q, yhat) -> EstimateResult:
    """Interval of thresholds c with q >= c exactly on the positive decisions."""
    q = np.asarray(q, dtype=float)
    yhat = np.asarray(yhat)
    if q.size == 0:
        raise EmptyLogError("the decision log is empty")
    neg, pos = q[yhat == 0], q[yhat == 1]
    lo = float(neg.max()) if neg.size else 0.0
    hi = float(pos.min()) if pos.size else 1.0
    if lo >= hi:
        raise InconsistentLogError(
            f"a negative decision has posterior {lo!r} at or above a positive one at {hi!r}"
        )
    c_hat = 0.5 * (lo + hi)
    verified = bool(np.all((q >= c_hat) == (yhat == 1)))
    if not verified:
        raise InconsistentLogError("midpoint estimate fails the consistency re-check")
    diagnostics = {
        "m": int(q.size),
        "negatives": int(neg.size),
        "positives": int(pos.size),
        "consistency_verified": verified,
    }
    return EstimateResult((lo, hi), c_hat, None, diagnostics)


def estimate_optimal(dist: PiecewiseDistribution, log: DecisionLog) -> EstimateResult:
    if len(log) == 0:
        raise EmptyLogError("the decision log is empty")
    result = consistent_interval(posterior_many(dist, log.xs), log.yhat)
    result.diagnostics["regime"] = "optimal"
    return result


def estimate_known_class(dist: PiecewiseDistribution, cls: ThresholdClass, log: DecisionLog) -> EstimateResult:
    return _estimate_class(dist, cls, log, check_support=True)


def _estimate_class(dist, cls, log, check_support: bool) -> EstimateResult:
    if len(log) == 0:
        raise EmptyLogError("the decision log is empty")
    scores = score_values(dist, cls.score, log.xs, check_support=check_support)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", VacuousCheckWarning)
        if not monotone_on_scores(dist, cls, DEFAULT_C_GRID, scores):
            raise NonMonotoneError("optimal decisions in the class are not monotone in c")
    result = consistent_interval(induced_posterior_scores(dist, cls, scores), log.yhat)
    result.diagnostics["regime"] = "known_class"
    return result


def estimate_unknown_family(dist: PiecewiseDistribution, family: ClassFamily, log: DecisionLog) -> EstimateResult:
    """Fit every class, keep the consistent ones and pick the simplest.

    Ties in complexity go to enumeration order. All consistent classes are
    listed in the diagnostics together with their intervals.
    """
    if len(log) == 0:
        raise EmptyLogError("the decision log is empty")
    classes = enumerate_family(family)
    score_values(dist, classes[0][1].score, log.xs)  # support check, once
    consistent = []
    rejected = {}
    for order, (cid, cls) in enumerate(classes):
        try:
            res = _estimate_class(dist, cls, log, check_support=False)
        except InconsistentLogError:
            rejected[cid] = "inconsistent"
            continue
        except NonMonotoneError:
            rejected[cid] = "non_monotone"
            continue
        consistent.append((class_complexity(family, cls), order, cid, res))
    if not consistent:
        raise NoConsistentClassError("no class in the family is consistent with the log")
    _, _, cid, best = min(consistent, key=lambda t: (t[0], t[1]))
    diagnostics = dict(best.diagnostics)
    diagnostics["regime"] = "unknown_family"
    diagnostics["consistent_classes"] = [
        {"id": i, "complexity": k, "interval": [_fmt(r.interval[0]), _fmt(r.interval[1])], "c_hat": _fmt(r.c_hat)}
        for k, _, i, r in consistent
    ]
    diagnostics["rejected_classes"] = rejected
    return EstimateResult(best.interval, best.c_hat, cid, diagnostics)


# --------------------------------------------------------------- fairness


@dataclass
class FairnessReport:
    per_group: dict[int, EstimateResult]
    verdict: str
    witness: tuple[int, int, float] | None = None
    sufficiency_scores: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self, include_scores: bool = False) -> dict:
        out = {
            "verdict": self.verdict,
            "per_group": {str(g): r.to_dict() for g, r in sorted(self.per_group.items())},
            "witness": None
            if self.witness is None
            else {"groups": [self.witness[0], self.witness[1]], "mass": _fmt(self.witness[2])},
            "diagnostics": self.diagnostics,
        }
        if include_scores and self.sufficiency_scores is not None:
            out["sufficiency_scores"] = [_fmt(v) for v in self.sufficiency_scores]
        return out

    def to_json(self, include_scores: bool = False) -> str:
        return json.dumps(self.to_dict(include_scores), sort_keys=True)


def _expected_groups(log: DecisionLog) -> list[int]:
    agent = log.metadata.get("agent") or {}
    if agent.get("kind") == "groupwise":
        return sorted(int(g) for g in agent["agents"])
    return sorted(int(g) for g in np.unique(log.attrs))


def audit_fairness(
    dist: PiecewiseDistribution,
    log: DecisionLog,
    eps: float,
    groups=None,
) -> FairnessReport:
    """Per-group estimation followed by a pairwise interval comparison.

    A disjoint pair only counts against calibration when the posterior mass
    strictly between the two intervals exceeds ``eps``.
    """
    if log.attrs is None:
        raise MissingAttributeError("fairness audit needs a sensitive attribute on every record")
    if eps <= 0:
        raise ValidationError(f"eps must be positive, got {eps}")
    expected = sorted(int(g) for g in groups) if groups is not None else _expected_groups(log)
    per_group = {}
    for g in expected:
        part = log.select(log.attrs == g)
        if len(part) == 0:
            raise EmptyLogError(f"group {g} has no records")
        per_group[g] = estimate_optimal(dist, part)

    q = posterior_many(dist, log.xs)
    verdict, witness = CALIBRATED, None
    best = -1.0
    for a, b in combinations(expected, 2):
        (lo_a, hi_a), (lo_b, hi_b) = per_group[a].interval, per_group[b].interval
        if max(lo_a, lo_b) < min(hi_a, hi_b):
            continue
        # order the pair so that a's interval lies below b's
        if hi_a > lo_b:
            a, b, hi_a, lo_b = b, a, hi_b, lo_a
        mass = posterior_mass_between(dist, hi_a, lo_b)
        if mass > eps and mass > best:
            verdict, witness, best = NOT_CALIBRATED, (a, b, mass), mass
        elif verdict != NOT_CALIBRATED:
            verdict = INCONCLUSIVE
    diagnostics = {"eps": eps, "groups": expected, "m": len(log)}
    return FairnessReport(per_group, verdict, witness, q + log.yhat, diagnostics)
