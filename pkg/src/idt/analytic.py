"""Closed-form risks and posterior-mass queries."""

from __future__ import annotations

from .classes import DecisionRule
from .distribution import CostMatrix, PiecewiseDistribution
from .errors import ValidationError
from .measure import base_parts, clip_parts, local_scores, moments, posterior_measure


def decision_moments(dist: PiecewiseDistribution, rule: DecisionRule) -> dict[tuple[int, int], float]:
    """Joint probabilities P(h(X) = yhat, Y = y) keyed by (yhat, y).

    Each piece is clipped to the half-space {f >= b} (and its complement)
    and the affine posterior is integrated over the clipped region exactly.
    """
    scores = local_scores(dist, rule.score)
    parts = base_parts(dist)
    m1, g1 = moments(clip_parts(parts, scores, rule.threshold, keep_upper=True))
    m0, g0 = moments(clip_parts(parts, scores, rule.threshold, keep_upper=False))
    return {(1, 0): m1 - g1, (1, 1): g1, (0, 0): m0 - g0, (0, 1): g0}


def risk(dist: PiecewiseDistribution, c: float, rule: DecisionRule) -> float:
    """Expected normalized loss c * FP + (1 - c) * FN of a threshold rule."""
    if not 0 < c < 1:
        raise ValidationError("loss parameter must lie in (0, 1)")
    joint = decision_moments(dist, rule)
    return c * joint[(1, 0)] + (1 - c) * joint[(0, 1)]


def cost_risk(dist: PiecewiseDistribution, cost: CostMatrix, rule: DecisionRule) -> float:
    """Expected loss under an arbitrary 2x2 cost matrix."""
    joint = decision_moments(dist, rule)
    return sum(cost.entries[yhat][y] * p for (yhat, y), p in joint.items())


def density_floor(dist: PiecewiseDistribution, c: float, eps: float) -> tuple[float, float]:
    """(P(q(X) in (c, c+eps]), P(q(X) in [c-eps, c)))."""
    if not eps > 0:
        raise ValidationError("eps must be positive")
    measure = posterior_measure(dist)
    above = measure.mass_between(c, c + eps, lo_closed=False, hi_closed=True)
    below = measure.mass_between(c - eps, c, lo_closed=True, hi_closed=False)
    return above, below


def posterior_mass_between(dist: PiecewiseDistribution, lo: float, hi: float) -> float:
    """P(lo < q(X) < hi)."""
    return posterior_measure(dist).mass_between(lo, hi, lo_closed=False, hi_closed=False)
