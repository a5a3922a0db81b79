"""Simulated decision makers and the decision logs they produce."""

from __future__ import annotations

import enum
import json
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Union

import numpy as np

from .classes import (
    ClassFamily,
    DecisionRule,
    ThresholdClass,
    class_from_dict,
    class_to_dict,
    family_from_dict,
    family_to_dict,
)
from .distribution import PiecewiseDistribution, as_points, posterior_many, sample
from .errors import ValidationError
from .hypothesis import enumerate_family, optimal_in_class
from .measure import score_values

GOLDEN_TOL = 1e-10
_INV_PHI = (math.sqrt(5) - 1) / 2


class Surrogate(enum.Enum):
    """Convex surrogates V, each strictly increasing near zero."""

    HINGE = "hinge"
    LOGISTIC = "logistic"
    SQUARE = "square"

    def __call__(self, w):
        w = np.asarray(w, dtype=float)
        if self is Surrogate.HINGE:
            return np.maximum(0.0, 1.0 + w)
        if self is Surrogate.LOGISTIC:
            return np.logaddexp(0.0, w)
        return (1.0 + w) ** 2


def _check_c(c: float) -> float:
    c = float(c)
    if not 0 < c < 1:
        raise ValidationError(f"loss parameter must lie in (0, 1), got {c}")
    return c


@dataclass(frozen=True)
class OptimalBayes:
    c: float

    def __post_init__(self):
        object.__setattr__(self, "c", _check_c(self.c))


@dataclass(frozen=True)
class ClassRestricted:
    cls: ThresholdClass
    c: float

    def __post_init__(self):
        object.__setattr__(self, "c", _check_c(self.c))


@dataclass(frozen=True)
class FamilyMember:
    """Optimal within one fixed member of a family, whatever c is."""

    family: ClassFamily
    chosen_class_id: str
    c: float

    def __post_init__(self):
        object.__setattr__(self, "c", _check_c(self.c))
        if self.chosen_class_id not in dict(enumerate_family(self.family)):
            raise ValidationError(f"class {self.chosen_class_id!r} is not in the family")

    @property
    def cls(self) -> ThresholdClass:
        return dict(enumerate_family(self.family))[self.chosen_class_id]


@dataclass(frozen=True)
class SurrogateMinimizer:
    surrogate: Surrogate
    c: float

    def __post_init__(self):
        object.__setattr__(self, "c", _check_c(self.c))
        object.__setattr__(self, "surrogate", Surrogate(self.surrogate))


@dataclass(frozen=True)
class AttributeMap:
    """Group label = number of cutpoints at or below x[coordinate] (1-based)."""

    coordinate: int
    cutpoints: tuple[float, ...]

    def __post_init__(self):
        if int(self.coordinate) < 1:
            raise ValidationError("attribute coordinate is 1-based")
        object.__setattr__(self, "cutpoints", tuple(sorted(float(v) for v in self.cutpoints)))

    def groups(self, xs: np.ndarray) -> np.ndarray:
        col = xs[:, self.coordinate - 1]
        return np.array([bisect_right(self.cutpoints, v) for v in col], dtype=np.int64)


@dataclass(frozen=True)
class GroupWise:
    attribute_map: AttributeMap
    agents: tuple[tuple[int, "Agent"], ...]

    def __post_init__(self):
        items = tuple(sorted((int(g), a) for g, a in dict(self.agents).items()))
        if not items:
            raise ValidationError("a group-wise agent needs at least one group")
        if any(isinstance(a, GroupWise) for _, a in items):
            raise ValidationError("group-wise agents cannot be nested")
        object.__setattr__(self, "agents", items)


Agent = Union[OptimalBayes, ClassRestricted, FamilyMember, SurrogateMinimizer, GroupWise]


# ------------------------------------------------------------- surrogates


def surrogate_objective(w, q: float, c: float, surrogate: Surrogate):
    return (1 - q) * c * surrogate(w) + q * (1 - c) * surrogate(-np.asarray(w, dtype=float))


def _hinge_argmin(q: np.ndarray, c: float) -> np.ndarray:
    a = (1 - q) * c
    b = q * (1 - c)
    out = np.where(a < b, 1.0, -1.0)
    return np.where(a == b, 0.0, out)


def _golden(q: np.ndarray, c: float, surrogate: Surrogate) -> np.ndarray:
    def f(w):
        return surrogate_objective(w, q, c, surrogate)

    half = np.ones_like(q)
    for _ in range(60):
        grow = (f(half / 2) > f(half)) | (f(-half / 2) > f(-half))
        if not grow.any():
            break
        half = np.where(grow, 2 * half, half)
    a, b = -half, half.copy()
    x1 = b - _INV_PHI * (b - a)
    x2 = a + _INV_PHI * (b - a)
    f1, f2 = f(x1), f(x2)
    while np.any(b - a > GOLDEN_TOL):
        left = f1 <= f2
        # keep [a, x2] when the left probe is no worse, else [x1, b]
        b = np.where(left, x2, b)
        a = np.where(left, a, x1)
        x1n = np.where(left, b - _INV_PHI * (b - a), x2)
        x2n = np.where(left, x1, a + _INV_PHI * (b - a))
        f_new = f(np.where(left, x1n, x2n))
        f1, f2 = np.where(left, f_new, f2), np.where(left, f1, f_new)
        x1, x2 = x1n, x2n
    return _polish(0.5 * (a + b), q, c, surrogate)


def _polish(w: np.ndarray, q: np.ndarray, c: float, surrogate: Surrogate) -> np.ndarray:
    # comparing objective values pins a smooth minimum only to ~sqrt(eps);
    # a few Newton steps on the derivative recover full precision
    a, b = (1 - q) * c, q * (1 - c)
    ok = (a > 0) & (b > 0)
    for _ in range(3):
        if surrogate is Surrogate.SQUARE:
            grad = 2 * a * (1 + w) - 2 * b * (1 - w)
            curv = 2 * (a + b)
        else:
            s = 0.5 * (1 + np.tanh(w / 2))
            grad = a * s - b * (1 - s)
            curv = (a + b) * s * (1 - s)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(ok & (curv > 0), grad / curv, 0.0)
        w = w - np.clip(step, -1e-3, 1e-3)
    return w


def surrogate_argmin_many(q, c: float, surrogate: Surrogate) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    surrogate = Surrogate(surrogate)
    if surrogate is Surrogate.HINGE:
        return _hinge_argmin(q, c)
    return _golden(np.atleast_1d(q).astype(float), c, surrogate).reshape(q.shape)


def pointwise_surrogate_argmin(q: float, c: float, surrogate: Surrogate) -> float:
    """Minimizer of (1-q) c V(w) + q (1-c) V(-w); midpoint of a flat minimizer set."""
    return float(surrogate_argmin_many(np.array([q]), c, surrogate)[0])


# ---------------------------------------------------------------- deciding


@lru_cache(maxsize=1024)
def agent_rule(agent: Agent, dist: PiecewiseDistribution) -> DecisionRule:
    """The cached class-optimal rule of a class-restricted agent."""
    return optimal_in_class(dist, agent.cls, agent.c)


def decide_many(agent: Agent, dist: PiecewiseDistribution, xs) -> np.ndarray:
    pts = as_points(dist, xs)
    if isinstance(agent, OptimalBayes):
        return (posterior_many(dist, pts) >= agent.c).astype(np.int8)
    if isinstance(agent, (ClassRestricted, FamilyMember)):
        rule = agent_rule(agent, dist)
        return (score_values(dist, rule.score, pts) >= rule.threshold).astype(np.int8)
    if isinstance(agent, SurrogateMinimizer):
        q = posterior_many(dist, pts)
        w = surrogate_argmin_many(q, agent.c, agent.surrogate)
        return ((w >= 0) | (q == agent.c)).astype(np.int8)
    if isinstance(agent, GroupWise):
        groups = agent.attribute_map.groups(pts)
        members = dict(agent.agents)
        out = np.empty(len(pts), dtype=np.int8)
        for g in np.unique(groups):
            if int(g) not in members:
                raise ValidationError(f"no sub-agent for group {int(g)}")
            sel = groups == g
            out[sel] = decide_many(members[int(g)], dist, pts[sel])
        return out
    raise ValidationError(f"unknown agent {agent!r}")


def decide(agent: Agent, dist: PiecewiseDistribution, x) -> int:
    return int(decide_many(agent, dist, np.asarray(x, dtype=float).reshape(1, -1))[0])


# ------------------------------------------------------------------- logs


@dataclass(frozen=True)
class SampleRecord:
    x: tuple[float, ...]
    yhat: int
    attr: int | None = None


@dataclass
class DecisionLog:
    """Observed points and decisions; ground-truth labels are never stored."""

    xs: np.ndarray
    yhat: np.ndarray
    attrs: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        width = xs.shape[-1] if xs.ndim == 2 else 1
        self.xs = xs.reshape(len(self.yhat), -1) if len(self.yhat) else xs.reshape(0, width)
        self.yhat = np.asarray(self.yhat, dtype=np.int8)
        if self.attrs is not None:
            self.attrs = np.asarray(self.attrs, dtype=np.int64)
        if not set(np.unique(self.yhat)) <= {0, 1}:
            raise ValidationError("decisions must be 0 or 1")

    def __len__(self) -> int:
        return len(self.yhat)

    @property
    def records(self) -> list[SampleRecord]:
        attrs = [None] * len(self) if self.attrs is None else [int(a) for a in self.attrs]
        return [SampleRecord(tuple(map(float, x)), int(y), a) for x, y, a in zip(self.xs, self.yhat, attrs)]

    @classmethod
    def from_records(cls, records: Iterable[SampleRecord], metadata: dict | None = None) -> "DecisionLog":
        records = list(records)
        attrs = [r.attr for r in records]
        has = [a is not None for a in attrs]
        if any(has) and not all(has):
            raise ValidationError("either every record carries an attribute or none does")
        xs = np.array([r.x for r in records], dtype=float)
        return cls(xs, np.array([r.yhat for r in records]), np.array(attrs) if any(has) else None, dict(metadata or {}))

    def select(self, mask) -> "DecisionLog":
        attrs = None if self.attrs is None else self.attrs[mask]
        return DecisionLog(self.xs[mask], self.yhat[mask], attrs, dict(self.metadata))

    def head(self, k: int) -> "DecisionLog":
        return self.select(slice(0, k))

    def same_records(self, other: "DecisionLog") -> bool:
        """Bit-for-bit equality of points, decisions and attributes."""
        if self.xs.tobytes() != other.xs.tobytes() or self.yhat.tobytes() != other.yhat.tobytes():
            return False
        if (self.attrs is None) != (other.attrs is None):
            return False
        return self.attrs is None or self.attrs.tobytes() == other.attrs.tobytes()


def generate_log(agent: Agent, dist: PiecewiseDistribution, m: int, seed: int) -> DecisionLog:
    """Sample m points, drop the labels and record the agent's decisions."""
    if int(m) < 1:
        raise ValidationError("log size must be at least 1")
    draw = sample(dist, seed, int(m))
    yhat = decide_many(agent, dist, draw.xs)
    attrs = agent.attribute_map.groups(draw.xs) if isinstance(agent, GroupWise) else None
    meta = {"distribution": dist.digest, "agent": agent_to_dict(agent), "seed": int(seed), "m": int(m)}
    return DecisionLog(draw.xs, yhat, attrs, meta)


def log_to_jsonl(log: DecisionLog) -> str:
    lines = [json.dumps({"_meta": log.metadata}, sort_keys=True)]
    for i in range(len(log)):
        rec = {"x": [float(v) for v in log.xs[i]], "yhat": int(log.yhat[i])}
        if log.attrs is not None:
            rec["attr"] = int(log.attrs[i])
        lines.append(json.dumps(rec))
    return "\n".join(lines) + "\n"


def log_from_jsonl(text: str) -> DecisionLog:
    meta: dict = {}
    records = []
    for n, line in enumerate(text.splitlines()):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"line {n + 1}: {exc}") from exc
        if "_meta" in obj:
            meta = obj["_meta"]
            continue
        try:
            records.append(SampleRecord(tuple(obj["x"]), int(obj["yhat"]), obj.get("attr")))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"line {n + 1}: malformed record") from exc
    if not records:
        return DecisionLog(np.zeros((0, 1)), np.zeros(0, dtype=np.int8), None, meta)
    return DecisionLog.from_records(records, meta)


def write_log(log: DecisionLog, path) -> None:
    with open(path, "w") as fh:
        fh.write(log_to_jsonl(log))


def read_log(path) -> DecisionLog:
    with open(path) as fh:
        return log_from_jsonl(fh.read())


# ------------------------------------------------------------ descriptors


def agent_to_dict(agent: Agent) -> dict:
    if isinstance(agent, OptimalBayes):
        return {"kind": "optimal_bayes", "c": agent.c}
    if isinstance(agent, ClassRestricted):
        return {"kind": "class_restricted", "class": class_to_dict(agent.cls), "c": agent.c}
    if isinstance(agent, FamilyMember):
        return {
            "kind": "family_member",
            "family": family_to_dict(agent.family),
            "class_id": agent.chosen_class_id,
            "c": agent.c,
        }
    if isinstance(agent, SurrogateMinimizer):
        return {"kind": "surrogate", "surrogate": agent.surrogate.value, "c": agent.c}
    return {
        "kind": "groupwise",
        "attribute": {"coordinate": agent.attribute_map.coordinate, "cutpoints": list(agent.attribute_map.cutpoints)},
        "agents": {str(g): agent_to_dict(a) for g, a in agent.agents},
    }


def agent_from_dict(data: dict) -> Agent:
    try:
        kind = data["kind"]
        if kind == "optimal_bayes":
            return OptimalBayes(float(data["c"]))
        if kind == "class_restricted":
            return ClassRestricted(class_from_dict(data["class"]), float(data["c"]))
        if kind == "family_member":
            return FamilyMember(family_from_dict(data["family"]), str(data["class_id"]), float(data["c"]))
        if kind == "surrogate":
            return SurrogateMinimizer(Surrogate(data["surrogate"]), float(data["c"]))
        if kind == "groupwise":
            amap = AttributeMap(int(data["attribute"]["coordinate"]), tuple(data["attribute"]["cutpoints"]))
            subs = tuple((int(g), agent_from_dict(a)) for g, a in data["agents"].items())
            return GroupWise(amap, subs)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed agent descriptor: {exc}") from exc
    raise ValidationError(f"unknown agent kind {data.get('kind')!r}")
