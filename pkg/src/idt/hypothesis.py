"""Optimal rules inside threshold classes and the quantities derived from them."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations
from typing import Sequence

import numpy as np

from .classes import (
    ClassFamily,
    DecisionRule,
    Explicit,
    FeatureSubsets,
    SubsetPosterior,
    ThresholdClass,
    subset_id,
)
from .distribution import PiecewiseDistribution, as_points
from .errors import FamilyTooLargeError, NonMonotoneError, ValidationError
from .measure import (
    _NODES,
    ScoreMeasure,
    _fit_quadratic,
    base_parts,
    clip_parts,
    local_scores,
    polyval,
    pushforward,
    score_measure,
    score_values,
)

BISECTION_TOL = 1e-9
BISECTION_MAX_ITER = 60
SNAP_TOL = 1e-12
FAMILY_LIMIT = 10**6
MEMO_LIMIT = 1 << 16
UNBOUNDED = math.inf
DEFAULT_C_GRID = tuple((k + 0.5) / 512 for k in range(512))


class VacuousCheckWarning(UserWarning):
    """A monotonicity check passed only because no decision ever changed."""


# ------------------------------------------------------ 1-D minimization


def _merge(values: np.ndarray) -> np.ndarray:
    values = np.sort(values)
    if values.size == 0:
        return values
    keep = [values[0]]
    for v in values[1:]:
        if v - keep[-1] > SNAP_TOL * max(1.0, abs(v)):
            keep.append(v)
    return np.array(keep)


def _band_density(measure: ScoreMeasure, s: np.ndarray) -> np.ndarray:
    if measure.band_l.size == 0:
        return np.zeros(s.shape)
    width = measure.band_r - measure.band_l
    u = (s[..., None] - measure.band_l) / width
    active = (u >= 0) & (u <= 1)
    return np.where(active, polyval(measure.band_rho, u), 0.0).sum(axis=-1)


def _band_qdensity(measure: ScoreMeasure, s: np.ndarray) -> np.ndarray:
    if measure.band_l.size == 0:
        return np.zeros(s.shape)
    width = measure.band_r - measure.band_l
    u = (s[..., None] - measure.band_l) / width
    active = (u >= 0) & (u <= 1)
    return np.where(active, polyval(measure.band_gam, u), 0.0).sum(axis=-1)


def _roots_in_unit(coef: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Real roots in [0, 1] of c0 + c1 v + c2 v^2, one row per polynomial.

    Returns (row index, root) arrays.
    """
    c0, c1, c2 = coef[:, 0], coef[:, 1], coef[:, 2]
    scale = np.maximum(np.abs(coef).max(axis=1), 1e-300)
    rows, roots = [], []
    quad = np.abs(c2) > 1e-12 * scale
    lin = ~quad & (np.abs(c1) > 1e-12 * scale)
    idx = np.nonzero(lin)[0]
    rows.append(idx)
    roots.append(-c0[idx] / c1[idx])
    idx = np.nonzero(quad)[0]
    disc = c1[idx] ** 2 - 4 * c2[idx] * c0[idx]
    ok = disc >= 0
    idx, disc = idx[ok], disc[ok]
    sq = np.sqrt(disc)
    # numerically stable pair of roots
    qq = -0.5 * (c1[idx] + np.copysign(sq, c1[idx]))
    with np.errstate(divide="ignore", invalid="ignore"):
        r1 = qq / c2[idx]
        r2 = np.where(qq != 0, c0[idx] / qq, r1)
    rows += [idx, idx]
    roots += [r1, r2]
    rows = np.concatenate(rows).astype(int)
    roots = np.concatenate(roots)
    keep = np.isfinite(roots) & (roots >= 0) & (roots <= 1)
    return rows[keep], roots[keep]


@dataclass
class _Search:
    """c-independent data for minimizing c*M(b) - G(b) over a threshold range."""

    measure: ScoreMeasure
    lo: float
    hi: float
    static: np.ndarray
    static_m: np.ndarray
    static_g: np.ndarray
    seg_left: np.ndarray
    seg_width: np.ndarray
    seg_rho: np.ndarray
    seg_gam: np.ndarray
    memo: dict = field(default_factory=dict, repr=False)

    def in_live_gap(self, c: float) -> bool:
        j = np.searchsorted(self.seg_left, c, side="right") - 1
        return bool(0 <= j < len(self.seg_left) and c < self.seg_left[j] + self.seg_width[j])


def _static_candidates(breakpoints: np.ndarray, atoms: np.ndarray, density_right, empty_gap, lo: float, hi: float):
    """Breakpoints, range ends, right limits of atoms and midpoints of empty gaps."""
    cands = list(breakpoints)
    if breakpoints.size >= 2:
        mids = 0.5 * (breakpoints[:-1] + breakpoints[1:])
        cands += list(mids[empty_gap])
    for s in atoms:
        if density_right(s):
            cands.append(s + SNAP_TOL * max(1.0, abs(s)))
    if math.isfinite(lo):
        cands.append(lo)
    if math.isfinite(hi):
        cands.append(hi)
    elif breakpoints.size:
        cands.append(breakpoints[-1] + 1.0)
    if not cands:
        cands = [0.0 if not math.isfinite(lo) else lo]
    arr = np.unique(np.asarray(cands, dtype=float))
    return arr[(arr >= lo) & (arr <= hi)] if arr.size else arr


def _segment_polys(measure: ScoreMeasure, bp: np.ndarray):
    left, right = bp[:-1], bp[1:]
    s = left[:, None] + _NODES[None, :] * (right - left)[:, None]
    rho = _fit_quadratic(_band_density(measure, s))
    gam = _fit_quadratic(_band_qdensity(measure, s))
    return left, right - left, rho, gam


@lru_cache(maxsize=1024)
def _search(dist: PiecewiseDistribution, cls: ThresholdClass) -> _Search:
    measure = score_measure(dist, cls.score)
    lo, hi = cls.bounds
    bp = measure.breakpoints
    finite = [v for v in (lo, hi) if math.isfinite(v)]
    grid = _merge(np.concatenate([bp, np.asarray(finite, dtype=float)]))
    left, width, rho, gam = _segment_polys(measure, grid) if grid.size >= 2 else (
        np.zeros(0), np.zeros(0), np.zeros((0, 3)), np.zeros((0, 3)))

    def density_right(s):
        j = np.searchsorted(left, s, side="right") - 1
        return 0 <= j < len(left) and abs(left[j] - s) <= SNAP_TOL * max(1.0, abs(s)) and rho[j, 0] > 0

    empty = np.all(_band_density(measure, left[:, None] + _NODES * width[:, None]) <= 0, axis=1)
    static = _static_candidates(grid, measure.atom_s, density_right, empty, lo, hi)
    m, g = measure.tail(static)
    inside = (left >= lo) & (left + width <= hi) if left.size else np.zeros(0, bool)
    live = inside & ~empty
    return _Search(measure, lo, hi, static, m, g, left[live], width[live], rho[live], gam[live])


def _optimal_threshold(search: _Search, c: float) -> float:
    # probe and bisection values of c repeat across points, so memoize per class
    b = search.memo.get(c)
    if b is None:
        b = _compute_threshold(search, c)
        if len(search.memo) < MEMO_LIMIT:
            search.memo[c] = b
    return b


def _compute_threshold(search: _Search, c: float) -> float:
    cands = [search.static]
    objs = [c * search.static_m - search.static_g]
    extra = []
    if search.seg_left.size:
        rows, v = _roots_in_unit(search.seg_gam - c * search.seg_rho)
        roots = search.seg_left[rows] + v * search.seg_width[rows]
        # snap roots that sit on a breakpoint
        near_left = v * search.seg_width[rows] <= SNAP_TOL * np.maximum(1.0, np.abs(roots))
        near_right = (1 - v) * search.seg_width[rows] <= SNAP_TOL * np.maximum(1.0, np.abs(roots))
        roots = np.where(near_left, search.seg_left[rows], roots)
        roots = np.where(near_right, search.seg_left[rows] + search.seg_width[rows], roots)
        extra.append(roots)
    if search.lo <= c <= search.hi and not search.in_live_gap(c):
        extra.append(np.array([c]))
    if extra:
        e = np.concatenate(extra)
        m, g = search.measure.tail(e)
        cands.append(e)
        objs.append(c * m - g)
    b = np.concatenate(cands)
    obj = np.concatenate(objs)
    best = obj.min()
    return float(b[obj <= best].min())


def optimal_in_class(dist: PiecewiseDistribution, cls: ThresholdClass, c: float) -> DecisionRule:
    """Risk-minimizing rule of the class for loss parameter c (smallest b on ties)."""
    if not 0 <= c <= 1:
        raise ValidationError("loss parameter must lie in [0, 1]")
    return DecisionRule(cls.score, _optimal_threshold(_search(dist, cls), c))


def optimal_threshold(dist: PiecewiseDistribution, cls: ThresholdClass, c: float) -> float:
    return _optimal_threshold(_search(dist, cls), c)


def decide_rule(dist: PiecewiseDistribution, rule: DecisionRule, xs) -> np.ndarray:
    return (score_values(dist, rule.score, xs) >= rule.threshold).astype(np.int8)


# -------------------------------------------------------- induced posterior

_PROBE = np.linspace(0.0, 1.0, 17)


def _flip(search: _Search, s: float, check: bool = True) -> tuple[float, float]:
    """Bracket [a, z] on the flip point of c -> 1{s >= b*(c)}."""
    if check:
        bs = np.array([_optimal_threshold(search, c) for c in _PROBE])
        dec = s >= bs
        if np.any(np.diff(dec.astype(int)) > 0):
            raise NonMonotoneError(f"decision at score {s} is not nonincreasing in c")
    if s >= _optimal_threshold(search, 1.0):
        return 1.0, 1.0
    if s < _optimal_threshold(search, 0.0):
        return 0.0, 0.0
    a, z = 0.0, 1.0
    for _ in range(BISECTION_MAX_ITER):
        if z - a <= BISECTION_TOL:
            break
        mid = 0.5 * (a + z)
        if s >= _optimal_threshold(search, mid):
            a = mid
        else:
            z = mid
    return a, z


def induced_posterior_bounds(dist: PiecewiseDistribution, cls: ThresholdClass, x) -> tuple[float, float]:
    """Bisection estimates of (sup{c : h_c(x)=1} u {0}, inf{c : h_c(x)=0} u {1})."""
    s = float(score_values(dist, cls.score, np.asarray(x, dtype=float).reshape(1, -1))[0])
    return _flip(_search(dist, cls), s)


def induced_posterior(dist: PiecewiseDistribution, cls: ThresholdClass, x) -> float:
    """Loss parameter at which the class-optimal decision at x flips."""
    a, z = induced_posterior_bounds(dist, cls, x)
    return 0.5 * (a + z)


def _flip_value(search: _Search, s: float) -> float:
    a, z = _flip(search, s, check=False)
    return 0.5 * (a + z)


@lru_cache(maxsize=4096)
def _certified(dist: PiecewiseDistribution, cls: ThresholdClass, left: float, right: float) -> bool:
    """Check that the flip point equals E[q | score] across a smooth gap."""
    search = _search(dist, cls)
    probes = left + np.array([0.1, 0.3, 0.5, 0.7, 0.9]) * (right - left)
    dense = left + np.linspace(0.02, 0.98, 49) * (right - left)
    level = search.measure.level_posterior(np.concatenate([probes, dense]))
    if np.any(~np.isfinite(level)):
        return False
    if np.any(np.diff(level[len(probes):]) < -1e-12):
        return False
    flips = np.array([_flip_value(search, s) for s in probes])
    return bool(np.all(np.abs(flips - level[: len(probes)]) <= 10 * BISECTION_TOL))


def induced_posterior_many(dist: PiecewiseDistribution, cls: ThresholdClass, xs) -> np.ndarray:
    """Induced posterior at many points.

    Scores that fall strictly inside a smooth gap between breakpoints use the
    closed-form level posterior once a bisection spot check certifies that
    gap; all other scores (atoms, breakpoints, uncertified gaps) are
    bisected, once per distinct score.
    """
    return induced_posterior_scores(dist, cls, score_values(dist, cls.score, as_points(dist, xs)))


def induced_posterior_scores(dist: PiecewiseDistribution, cls: ThresholdClass, s: np.ndarray) -> np.ndarray:
    """Same as induced_posterior_many, starting from precomputed scores."""
    s = np.asarray(s, dtype=float)
    search = _search(dist, cls)
    lo, hi = cls.bounds
    out = np.empty(len(s))
    below = s < lo
    above = s >= hi
    out[below] = 0.0
    out[above] = 1.0
    todo = ~(below | above)

    def bisect(values: np.ndarray) -> np.ndarray:
        uniq, inverse = np.unique(values, return_inverse=True)
        return np.array([_flip_value(search, float(v)) for v in uniq])[inverse]

    bp = _merge(np.concatenate([search.measure.breakpoints, [v for v in (lo, hi) if math.isfinite(v)]]))
    rest = todo
    if bp.size:
        j = np.searchsorted(bp, s, side="right") - 1
        tol = SNAP_TOL * np.maximum(1.0, np.abs(s))
        near = (j >= 0) & (np.abs(s - bp[np.clip(j, 0, len(bp) - 1)]) <= tol)
        near |= (j + 1 < len(bp)) & (np.abs(bp[np.clip(j + 1, 0, len(bp) - 1)] - s) <= tol)
        interior = todo & ~near & (j >= 0) & (j < len(bp) - 1)
        for seg in np.unique(j[interior]):
            sel = interior & (j == seg)
            if _certified(dist, cls, float(bp[seg]), float(bp[seg + 1])):
                out[sel] = np.clip(search.measure.level_posterior(s[sel]), 0.0, 1.0)
            else:
                out[sel] = bisect(s[sel])
        rest = todo & ~interior
    if rest.any():
        out[rest] = bisect(s[rest])
    return out


# --------------------------------------------------------------- monotone


@lru_cache(maxsize=256)
def _grid_thresholds(dist: PiecewiseDistribution, cls: ThresholdClass, cs: tuple[float, ...]) -> np.ndarray:
    search = _search(dist, cls)
    out = np.array([_optimal_threshold(search, c) for c in cs])
    out.setflags(write=False)
    return out


def check_monotone(
    dist: PiecewiseDistribution,
    cls: ThresholdClass,
    c_grid: Sequence[float],
    x_grid,
) -> bool:
    """Grid check that optimal decisions never switch on as c grows."""
    pts = as_points(dist, x_grid)
    if len(pts) == 0:
        raise ValidationError("x grid must be non-empty")
    return monotone_on_scores(dist, cls, c_grid, score_values(dist, cls.score, pts))


def monotone_on_scores(dist: PiecewiseDistribution, cls: ThresholdClass, c_grid: Sequence[float], scores) -> bool:
    cs = np.sort(np.asarray(list(c_grid), dtype=float))
    if cs.size == 0:
        raise ValidationError("c grid must be non-empty")
    s = np.unique(np.asarray(scores, dtype=float))
    thresholds = _grid_thresholds(dist, cls, tuple(cs.tolist()))

    def scores_in(lo, hi):
        # number of distinct grid scores s with lo <= s < hi
        return np.searchsorted(s, hi, side="left") - np.searchsorted(s, lo, side="left")

    # a decision switches on between consecutive c exactly when some score
    # sits in [b(c_next), b(c_prev))
    ok = not np.any(scores_in(thresholds[1:], thresholds[:-1]) > 0)
    if ok and scores_in(thresholds.min(), thresholds.max()) == 0:
        warnings.warn(
            "optimal decisions are constant over the c grid; monotonicity holds vacuously",
            VacuousCheckWarning,
            stacklevel=3,
        )
    return bool(ok)


# ------------------------------------------------------ minimum disagreement


def _split_measures(dist: PiecewiseDistribution, rule: DecisionRule, score) -> tuple[ScoreMeasure, ScoreMeasure]:
    parts = base_parts(dist)
    rule_scores = local_scores(dist, rule.score)
    target = local_scores(dist, score)
    ones = clip_parts(parts, rule_scores, rule.threshold, keep_upper=True)
    zeros = clip_parts(parts, rule_scores, rule.threshold, keep_upper=False)
    return pushforward(zeros, target), pushforward(ones, target)


def min_disagreement_threshold(dist: PiecewiseDistribution, rule: DecisionRule, cls: ThresholdClass) -> tuple[float, float]:
    """(MD, minimizing threshold) for inf_b P(1{f(X) >= b} != h(X))."""
    lo, hi = cls.bounds
    if rule.score == cls.score and lo <= rule.threshold <= hi:
        # the rule is itself a member of the class
        return 0.0, rule.threshold
    mu0, mu1 = _split_measures(dist, rule, cls.score)
    finite = [v for v in (lo, hi) if math.isfinite(v)]
    grid = _merge(np.concatenate([mu0.breakpoints, mu1.breakpoints, np.asarray(finite, dtype=float)]))
    atoms = np.concatenate([mu0.atom_s, mu1.atom_s])
    if grid.size >= 2:
        left, right = grid[:-1], grid[1:]
        s = left[:, None] + _NODES[None, :] * (right - left)[:, None]
        empty = np.all((_band_density(mu1, s) <= 0) & (_band_density(mu0, s) <= 0), axis=1)
    else:
        empty = np.zeros(0, bool)
    cands = [_static_candidates(grid, atoms, lambda s: True, empty, lo, hi)]
    if grid.size >= 2:
        deriv = _fit_quadratic(_band_density(mu1, s) - _band_density(mu0, s))
        rows, v = _roots_in_unit(deriv)
        roots = left[rows] + v * (right - left)[rows]
        cands.append(roots[(roots >= lo) & (roots <= hi)])
    b = np.concatenate(cands)
    if b.size == 0:
        b = np.array([lo if math.isfinite(lo) else 0.0])
    upper0, _ = mu0.tail(b)
    lower1, _ = mu1.head(b)
    d = upper0 + lower1
    k = int(np.argmin(d))
    return max(float(d[k]), 0.0), float(b[k])


def min_disagreement(dist: PiecewiseDistribution, rule: DecisionRule, cls: ThresholdClass) -> float:
    return min_disagreement_threshold(dist, rule, cls)[0]


def optimal_subset_class(dist: PiecewiseDistribution, cls: ThresholdClass, c_grid: Sequence[float]) -> ThresholdClass:
    """Restrict a class to thresholds that are optimal somewhere on the c grid."""
    search = _search(dist, cls)
    lo = _optimal_threshold(search, float(min(c_grid)))
    hi = _optimal_threshold(search, float(max(c_grid)))
    return ThresholdClass(cls.score, (lo, hi))


def md_smoothness_alpha(
    dist: PiecewiseDistribution,
    family: ClassFamily,
    home_class_id: str,
    c: float,
    c_grid: Sequence[float] | None = None,
) -> float:
    """Smallest alpha making MD(h_c', opt) <= (1 + alpha|c'-c|) MD(h_c, opt) on the grid.

    Returns ``UNBOUNDED`` (infinity) when the home rule at c has zero
    disagreement with some foreign class but a nearby rule does not.
    """
    grid = tuple(DEFAULT_C_GRID if c_grid is None else c_grid)
    classes = dict(enumerate_family(family))
    if home_class_id not in classes:
        raise ValidationError(f"unknown class id {home_class_id!r}")
    home = classes[home_class_id]
    rule_c = optimal_in_class(dist, home, c)
    rules = [(cp, optimal_in_class(dist, home, cp)) for cp in grid if cp != c]
    alpha = 0.0
    for cid, other in classes.items():
        if cid == home_class_id:
            continue
        opt = optimal_subset_class(dist, other, tuple(grid) + (c,))
        base = min_disagreement(dist, rule_c, opt)
        for cp, rule in rules:
            md = min_disagreement(dist, rule, opt)
            if base <= 1e-12:
                if md > 1e-12:
                    return UNBOUNDED
                continue
            if md > base:
                alpha = max(alpha, (md / base - 1.0) / abs(cp - c))
    return alpha


# ------------------------------------------------------------------ families


def feature_subset_vc_bound(n: int, s: int) -> int:
    if not 1 <= s <= n:
        raise ValidationError("need 1 <= s <= n")
    return math.ceil(1 + 2 * s * math.log2(n + 1))


def family_size(family: ClassFamily) -> int:
    if isinstance(family, Explicit):
        return len(family.classes)
    return sum(math.comb(family.n, k) for k in range(1, family.max_cardinality + 1))


def enumerate_family(family: ClassFamily) -> list[tuple[str, ThresholdClass]]:
    """Classes in contract order: explicit list order, or subsets by (size, indices)."""
    if isinstance(family, Explicit):
        return list(family.classes)
    if not isinstance(family, FeatureSubsets):
        raise ValidationError(f"unsupported family {family!r}")
    size = family_size(family)
    if size > FAMILY_LIMIT:
        raise FamilyTooLargeError(f"family has {size} classes, limit is {FAMILY_LIMIT}")
    out = []
    for k in range(1, family.max_cardinality + 1):
        for subset in combinations(range(1, family.n + 1), k):
            out.append((subset_id(subset), ThresholdClass(SubsetPosterior(subset))))
    return out


def class_complexity(family: ClassFamily, cls: ThresholdClass) -> int:
    if isinstance(family, FeatureSubsets) and isinstance(cls.score, SubsetPosterior):
        return len(cls.score.subset)
    return 0
