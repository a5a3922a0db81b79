"""Named adversarial and counterexample instances, packaged for the harness."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product
from typing import Callable

import numpy as np

from .agents import Agent, AttributeMap, ClassRestricted, GroupWise, OptimalBayes
from .analytic import risk
from .classes import Affine, ClassFamily, DecisionRule, Explicit, ThresholdClass, bayes_score
from .distribution import (
    AffinePosterior,
    Piece,
    PiecewiseDistribution,
    PointMass,
    Rect,
    Segment,
    build_distribution,
)
from .errors import ParameterRangeError

NODIM_SUBSEGMENTS = 64


@dataclass(frozen=True)
class ConstructionBundle:
    """A distribution with its agents, their loss parameters and stated rules.

    ``parameters[i]`` and ``rules[i]`` belong to ``agents[i]``.
    """

    name: str
    distribution: PiecewiseDistribution
    agents: tuple[Agent, ...]
    parameters: tuple[float, ...]
    rules: tuple[DecisionRule, ...]
    family: ClassFamily | None = None
    notes: dict = field(default_factory=dict)
    class_factory: Callable | None = None


def _require(ok: bool, message: str) -> None:
    if not ok:
        raise ParameterRangeError(message)


def _point(location, weight, q) -> Piece:
    dim = len(location)
    return Piece(PointMass(tuple(location)), weight, AffinePosterior(q, (0.0,) * dim))


def _segment(start, end, weight, intercept, gradient) -> Piece:
    return Piece(Segment.between(start, end), weight, AffinePosterior(intercept, gradient))


def _nonzero(pieces) -> list[Piece]:
    return [p for p in pieces if p.weight > 0]


def _band_distribution(eps: float, density: float) -> PiecewiseDistribution:
    # q(x) = x on (1/2 - 2 eps, 1/2 + 2 eps), certain outcomes at 0 and 1
    side = 0.5 - 2 * density * eps
    pieces = [
        _point((0.0,), side, 0.0),
        _segment((0.5 - 2 * eps,), (0.5 + 2 * eps,), 4 * density * eps, 0.0, (1.0,)),
        _point((1.0,), side, 1.0),
    ]
    return build_distribution(1, _nonzero(pieces))


def band_lower_bound(eps: float, p_c: float) -> ConstructionBundle:
    """Two Bayes agents at 1/2 -+ eps that are hard to tell apart from few samples."""
    _require(0 < eps < 0.25, f"eps must lie in (0, 1/4), got {eps}")
    _require(0 < p_c <= 1 / (8 * eps), f"p_c must lie in (0, 1/(8 eps)], got {p_c}")
    dist = _band_distribution(eps, p_c)
    c1, c2 = 0.5 - eps, 0.5 + eps
    score = bayes_score(1)
    return ConstructionBundle(
        "band_lower_bound",
        dist,
        (OptimalBayes(c1), OptimalBayes(c2)),
        (c1, c2),
        (DecisionRule(score, c1), DecisionRule(score, c2)),
        None,
        {"eps": eps, "p_c": p_c, "c1": c1, "c2": c2, "point_mass_weight": 0.5 - 2 * p_c * eps},
    )


def no_uncertainty_instance() -> ConstructionBundle:
    """Outcomes are certain, so every c in (0, 1) yields the same decisions."""
    dist = build_distribution(1, [_point((0.0,), 0.5, 0.0), _point((1.0,), 0.5, 1.0)])
    score = bayes_score(1)
    return ConstructionBundle(
        "no_uncertainty",
        dist,
        (OptimalBayes(0.25), OptimalBayes(0.75)),
        (0.25, 0.75),
        (DecisionRule(score, 0.25), DecisionRule(score, 0.75)),
        None,
        {"c1": 0.25, "c2": 0.75},
    )


def near_optimal_counterexample(delta_slack: float, eps: float) -> ConstructionBundle:
    """One rule serving two loss parameters, optimal for the first and nearly so for the second."""
    _require(0 < delta_slack <= 1, f"delta_slack must lie in (0, 1], got {delta_slack}")
    _require(0 < eps < 0.25, f"eps must lie in (0, 1/4), got {eps}")
    dist = _band_distribution(eps, delta_slack)
    c1, c2 = 0.5 - eps, 0.5 + eps
    b = 0.5 - eps
    cls = ThresholdClass(Affine((1.0,)), (b, b))
    rule = DecisionRule(cls.score, b)
    excess = risk(dist, c2, rule) - risk(dist, c2, DecisionRule(bayes_score(1), c2))
    notes = {
        "eps": eps,
        "delta_slack": delta_slack,
        "c1": c1,
        "c2": c2,
        "excess_risk_c2": excess,
        "excess_risk_bound": 4 * eps * delta_slack,
    }
    return ConstructionBundle(
        "near_optimal",
        dist,
        (ClassRestricted(cls, c1), ClassRestricted(cls, c2)),
        (c1, c2),
        (rule, rule),
        Explicit((("shared", cls),)),
        notes,
    )


def _nodim_threshold_h1(c: float) -> float:
    return 2 * c - 1 if c <= 0.5 else (2 * c - 1) / (9 - 8 * c)


def _nodim_threshold_h2(c: float, eps: float) -> float:
    return (2 * c - 1 - 16 * eps + 16 * c * eps) / (9 - 8 * c)


def _nodim_grid(eps: float) -> np.ndarray:
    # cells of equal width on [0, 2 eps] and on [2 eps, 1]
    k = NODIM_SUBSEGMENTS
    inner = max(1, round(2 * eps * k))
    return np.concatenate([np.linspace(0.0, 2 * eps, inner + 1), np.linspace(2 * eps, 1.0, k - inner + 1)[1:]])


def nodim_lower(eps: float, p_c: float) -> ConstructionBundle:
    """Two restricted agents whose rules differ only on a sliver of mass 20 p_c eps^2.

    The linearly increasing density on the upper segment is replaced by
    uniform sub-segments carrying the exact mass of each slice, with a cell
    boundary at x1 = 2 eps.
    """
    _require(0 < eps <= 0.125, f"eps must lie in (0, 1/8], got {eps}")
    _require(0 < p_c <= 0.1, f"p_c must lie in (0, 1/10], got {p_c}")
    k = NODIM_SUBSEGMENTS
    pieces = [
        _point((-1.0, 0.0), 1 - 10 * p_c, 0.0),
        _segment((-1.0, 0.0), (1.0, 0.0), 5 * p_c, 0.5, (0.5, 0.0)),
    ]
    grid = _nodim_grid(eps)
    upper = [
        _segment((left, 1.0), (right, 1.0), 5 * p_c * (right * right - left * left), 1.0, (0.0, 0.0))
        for left, right in zip(grid, grid[1:])
    ]
    dist = build_distribution(2, _nonzero(pieces + upper))

    c1 = 0.5
    c2 = (1 + 16 * eps) / (2 + 16 * eps)
    # the class ranges are stated as loss-parameter windows; map them to thresholds
    h1 = ThresholdClass(Affine((1.0, 0.0)), (_nodim_threshold_h1(3 / 8), _nodim_threshold_h1(5 / 8)))
    h2 = ThresholdClass(
        Affine((1.0, -2 * eps)), (_nodim_threshold_h2(0.5, eps), _nodim_threshold_h2(0.75, eps))
    )
    # 2 eps is a cell boundary, so the sliver mass is exact
    cut = 2 * eps
    mass = math.fsum(p.weight for p in upper if p.geometry.base[0] < cut)
    target = 20 * p_c * eps * eps
    notes = {
        "eps": eps,
        "p_c": p_c,
        "c1": c1,
        "c2": c2,
        "subsegments": k,
        "disagreement_mass": mass,
        "disagreement_mass_target": target,
        "disagreement_mass_rel_error": abs(mass - target) / target,
        "density_sup_error": 10 * p_c * float(np.diff(grid).max()),
        "threshold_tolerance": 1e-3,
        "h1_c_window": [3 / 8, 5 / 8],
        "h2_c_window": [1 / 2, 3 / 4],
    }
    return ConstructionBundle(
        "nodim_lower",
        dist,
        (ClassRestricted(h1, c1), ClassRestricted(h2, c2)),
        (c1, c2),
        (DecisionRule(h1.score, 0.0), DecisionRule(h2.score, 0.0)),
        Explicit((("H1", h1), ("H2", h2))),
        notes,
    )


def sigma_id(sigma) -> str:
    return "sigma=" + "".join("+" if s > 0 else "-" for s in sigma)


@dataclass(frozen=True)
class SigmaClasses:
    """Lazy view of the 2^n sign-pattern classes of the dimension-dependent instance."""

    n: int
    eps: float

    def __len__(self) -> int:
        return 2**self.n

    def class_for(self, sigma) -> ThresholdClass:
        sigma = _check_sigma(sigma, self.n)
        scale = 8 * self.eps * math.sqrt(self.n)
        return ThresholdClass(Affine(tuple(-scale * s for s in sigma) + (1.0,)), (0.25, 0.75))

    def loss_parameter(self, sigma) -> float:
        sigma = _check_sigma(sigma, self.n)
        return 0.5 + 8 * self.eps * math.sqrt(self.n) * sum(sigma) / self.n

    def family(self, sigmas) -> Explicit:
        return Explicit(tuple((sigma_id(s), self.class_for(s)) for s in sigmas))

    def patterns(self):
        return product((-1, 1), repeat=self.n)


def _check_sigma(sigma, n: int) -> tuple[int, ...]:
    sigma = tuple(int(s) for s in sigma)
    _require(len(sigma) == n, f"sigma must have {n} entries, got {len(sigma)}")
    _require(all(s in (-1, 1) for s in sigma), "sigma entries must be +1 or -1")
    return sigma


def dim_lower(d: int, eps: float, p_c: float, sigma) -> ConstructionBundle:
    """Sign-pattern instance where the loss parameter hides in n = d - 2 segments."""
    _require(isinstance(d, int) and d >= 6 and d % 4 == 2, f"d must be an integer >= 6 with d = 2 mod 4, got {d}")
    n = d - 2
    _require(0 < eps <= 1 / (64 * math.sqrt(n)), f"eps must lie in (0, 1/(64 sqrt(n))], got {eps}")
    _require(0 < p_c <= 1, f"p_c must lie in (0, 1], got {p_c}")
    sigma = _check_sigma(sigma, n)
    dim = n + 1
    origin = (0.0,) * dim
    top = tuple(1.0 if i == n else 0.0 for i in range(dim))
    pieces = [_point(origin, 1 - p_c, 0.0)]
    for j in range(n):
        start = tuple(1.0 if i == j else 0.0 for i in range(dim))
        end = tuple(1.0 if i in (j, n) else 0.0 for i in range(dim))
        pieces.append(_segment(start, end, p_c / n, 0.0, top))
    dist = build_distribution(dim, _nonzero(pieces))
    classes = SigmaClasses(n, eps)
    cls = classes.class_for(sigma)
    c = classes.loss_parameter(sigma)
    band = 8 * eps * math.sqrt(n)
    notes = {
        "d": d,
        "n": n,
        "eps": eps,
        "p_c": p_c,
        "sigma": list(sigma),
        "c_sigma": c,
        "band": [0.5 - band, 0.5 + band],
    }
    return ConstructionBundle(
        "dim_lower",
        dist,
        (ClassRestricted(cls, c),),
        (c,),
        (DecisionRule(cls.score, 0.5),),
        classes.family([sigma]),
        notes,
        classes,
    )


def dim_lower_patterns(d: int, eps: float, p_c: float, sigmas) -> ConstructionBundle:
    """Several sign patterns on one distribution, one restricted agent each."""
    sigmas = [tuple(s) for s in sigmas]
    _require(len(sigmas) >= 1, "need at least one sign pattern")
    _require(len(set(sigmas)) == len(sigmas), "sign patterns must be distinct")
    parts = [dim_lower(d, eps, p_c, s) for s in sigmas]
    first = parts[0]
    notes = {k: v for k, v in first.notes.items() if k not in ("sigma", "c_sigma")}
    notes["sigmas"] = [list(s) for s in sigmas]
    notes["c_sigmas"] = [b.notes["c_sigma"] for b in parts]
    return ConstructionBundle(
        "dim_lower_patterns",
        first.distribution,
        tuple(b.agents[0] for b in parts),
        tuple(b.parameters[0] for b in parts),
        tuple(b.rules[0] for b in parts),
        first.class_factory.family(sigmas),
        notes,
        first.class_factory,
    )


def no_md_smooth_instance(eps: float) -> ConstructionBundle:
    """Two classes whose optimal rules coincide almost surely at different loss parameters."""
    _require(0 < eps < 0.1, f"eps must lie in (0, 1/10), got {eps}")
    pieces = [
        Piece(Rect((-1.0, -1.0), (0.0, 0.0)), 0.5, AffinePosterior(2 / 3, (2 / 15, 8 / 15))),
        Piece(Rect((0.0, 0.0), (1.0, 1.0)), 0.5, AffinePosterior(1 / 3, (8 / 15, 2 / 15))),
    ]
    dist = build_distribution(2, pieces)
    h1 = ThresholdClass(Affine((1.0, 0.0)), (-1.0, 1.0))
    h2 = ThresholdClass(Affine((0.0, 1.0)), (-1.0, 1.0))
    c1, c2 = 2 / 5, 3 / 5
    return ConstructionBundle(
        "no_md_smooth",
        dist,
        (ClassRestricted(h1, c1), ClassRestricted(h2, c2)),
        (c1, c2),
        (DecisionRule(h1.score, 0.0), DecisionRule(h2.score, 0.0)),
        Explicit((("H1", h1), ("H2", h2))),
        {"eps": eps, "c1": c1, "c2": c2},
    )


def uniform_posterior(c: float = 0.3) -> ConstructionBundle:
    """q(X) uniform on [0, 1]: X uniform on the unit interval with q(x) = x."""
    _require(0 < c < 1, f"c must lie in (0, 1), got {c}")
    dist = build_distribution(1, [_segment((0.0,), (1.0,), 1.0, 0.0, (1.0,))])
    return ConstructionBundle(
        "uniform_posterior",
        dist,
        (OptimalBayes(c),),
        (c,),
        (DecisionRule(bayes_score(1), c),),
        None,
        {"c": c, "p_c": 1.0},
    )


def two_group_instance(c_a: float = 0.4, c_b: float = 0.6) -> ConstructionBundle:
    """Two groups sharing q(X) uniform on [0, 1]; the group is read off x2."""
    _require(0 < c_a < 1 and 0 < c_b < 1, "group loss parameters must lie in (0, 1)")
    dist = build_distribution(
        2,
        [
            _segment((0.0, 0.0), (1.0, 0.0), 0.5, 0.0, (1.0, 0.0)),
            _segment((0.0, 1.0), (1.0, 1.0), 0.5, 0.0, (1.0, 0.0)),
        ],
    )
    agent = GroupWise(AttributeMap(2, (0.5,)), ((0, OptimalBayes(c_a)), (1, OptimalBayes(c_b))))
    score = bayes_score(2)
    return ConstructionBundle(
        "two_group",
        dist,
        (agent,),
        (c_a,),
        (DecisionRule(score, c_a),),
        None,
        {"c_a": c_a, "c_b": c_b, "attribute_coordinate": 2, "cutpoints": [0.5]},
    )


CONSTRUCTIONS: dict[str, Callable[..., ConstructionBundle]] = {
    "band_lower_bound": band_lower_bound,
    "no_uncertainty": no_uncertainty_instance,
    "near_optimal": near_optimal_counterexample,
    "nodim_lower": nodim_lower,
    "dim_lower": dim_lower,
    "dim_lower_patterns": dim_lower_patterns,
    "no_md_smooth": no_md_smooth_instance,
    "uniform_posterior": uniform_posterior,
    "two_group": two_group_instance,
}


def build_construction(name: str, **params) -> ConstructionBundle:
    if name not in CONSTRUCTIONS:
        raise ParameterRangeError(f"unknown construction {name!r}; choose from {sorted(CONSTRUCTIONS)}")
    try:
        return CONSTRUCTIONS[name](**params)
    except TypeError as exc:
        raise ParameterRangeError(f"bad parameters for {name}: {exc}") from exc
