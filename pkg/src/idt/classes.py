"""Score functions, threshold classes, decision rules and class families."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

from .distribution import _fmt, _real
from .errors import GeometryError, ValidationError


@dataclass(frozen=True)
class Affine:
    """Score f(x) = weights . x."""

    weights: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))

    @property
    def dimension(self) -> int:
        return len(self.weights)


@dataclass(frozen=True)
class SubsetPosterior:
    """Score f(x) = P(Y=1 | X_S = x_S); indices are 1-based and sorted."""

    subset: tuple[int, ...]

    def __post_init__(self):
        s = tuple(sorted(int(i) for i in self.subset))
        if not s or len(set(s)) != len(s) or s[0] < 1:
            raise ValidationError(f"invalid feature subset {self.subset!r}")
        object.__setattr__(self, "subset", s)

    @property
    def zero_based(self) -> tuple[int, ...]:
        return tuple(i - 1 for i in self.subset)


ScoreFunction = Union[Affine, SubsetPosterior]


def bayes_score(dimension: int) -> SubsetPosterior:
    """Score equal to the full posterior q(x)."""
    return SubsetPosterior(tuple(range(1, dimension + 1)))


def check_score_dimension(score: ScoreFunction, dimension: int) -> None:
    if isinstance(score, Affine):
        if score.dimension != dimension:
            raise GeometryError(f"affine weights have length {score.dimension}, expected {dimension}")
    elif score.subset[-1] > dimension:
        raise GeometryError(f"feature subset {score.subset} exceeds dimension {dimension}")


@dataclass(frozen=True)
class ThresholdClass:
    """Rules 1{f(x) >= b} for b in threshold_range (None means unbounded)."""

    score: ScoreFunction
    threshold_range: tuple[float, float] | None = None

    def __post_init__(self):
        if self.threshold_range is not None:
            lo, hi = (float(v) for v in self.threshold_range)
            if math.isnan(lo) or math.isnan(hi) or lo > hi:
                raise ValidationError(f"threshold range {self.threshold_range!r} is empty")
            object.__setattr__(self, "threshold_range", (lo, hi))

    @property
    def bounds(self) -> tuple[float, float]:
        if self.threshold_range is None:
            return -math.inf, math.inf
        return self.threshold_range

    def rule(self, threshold: float) -> "DecisionRule":
        lo, hi = self.bounds
        if not lo <= threshold <= hi:
            raise ValidationError(f"threshold {threshold} outside class range {self.bounds}")
        return DecisionRule(self.score, threshold)


@dataclass(frozen=True)
class DecisionRule:
    """h(x) = 1{f(x) >= threshold}."""

    score: ScoreFunction
    threshold: float

    def __post_init__(self):
        object.__setattr__(self, "threshold", float(self.threshold))


@dataclass(frozen=True)
class Explicit:
    """A finite list of (identifier, class) pairs in caller order."""

    classes: tuple[tuple[str, ThresholdClass], ...]

    def __post_init__(self):
        items = tuple((str(i), c) for i, c in self.classes)
        if not items:
            raise ValidationError("an explicit family needs at least one class")
        ids = [i for i, _ in items]
        if len(set(ids)) != len(ids):
            raise ValidationError("class identifiers must be unique")
        object.__setattr__(self, "classes", items)


@dataclass(frozen=True)
class FeatureSubsets:
    """All thresholds of P(Y=1 | X_S) over subsets S with 1 <= |S| <= max_cardinality."""

    n: int
    max_cardinality: int

    def __post_init__(self):
        if not 1 <= self.max_cardinality <= self.n:
            raise ValidationError("need 1 <= s <= n for a feature-subset family")


ClassFamily = Union[Explicit, FeatureSubsets]


def subset_id(subset) -> str:
    return "S{" + ",".join(str(i) for i in subset) + "}"


# --------------------------------------------------------------- JSON I/O


def score_to_dict(score: ScoreFunction) -> dict:
    if isinstance(score, Affine):
        return {"kind": "affine", "weights": [_fmt(w) for w in score.weights]}
    return {"kind": "subset", "subset": list(score.subset)}


def score_from_dict(data: dict) -> ScoreFunction:
    kind = data.get("kind")
    if kind == "affine":
        return Affine([_real(w) for w in data["weights"]])
    if kind == "subset":
        return SubsetPosterior([int(i) for i in data["subset"]])
    raise ValidationError(f"unknown score kind {kind!r}")


def class_to_dict(cls: ThresholdClass) -> dict:
    out = score_to_dict(cls.score)
    out["threshold_range"] = None if cls.threshold_range is None else [_fmt(v) for v in cls.threshold_range]
    return out


def class_from_dict(data: dict) -> ThresholdClass:
    rng = data.get("threshold_range")
    bounds = None if rng is None else (_real(rng[0]), _real(rng[1]))
    return ThresholdClass(score_from_dict(data), bounds)


def rule_to_dict(rule: DecisionRule) -> dict:
    out = score_to_dict(rule.score)
    out["threshold"] = _fmt(rule.threshold)
    return out


def family_to_dict(family: ClassFamily) -> dict:
    if isinstance(family, FeatureSubsets):
        return {"kind": "feature_subsets", "n": family.n, "max_cardinality": family.max_cardinality}
    return {
        "kind": "explicit",
        "classes": [{"id": i, "class": class_to_dict(c)} for i, c in family.classes],
    }


def family_from_dict(data: dict) -> ClassFamily:
    kind = data.get("kind")
    if kind == "feature_subsets":
        return FeatureSubsets(int(data["n"]), int(data["max_cardinality"]))
    if kind == "explicit":
        return Explicit(tuple((item["id"], class_from_dict(item["class"])) for item in data["classes"]))
    raise ValidationError(f"unknown family kind {kind!r}")
