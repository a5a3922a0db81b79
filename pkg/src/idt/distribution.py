"""Analytic decision problems: piecewise distributions over (X, Y).

A distribution is a finite mixture of pieces.  Each piece is a point mass, a
uniform segment embedded in R^n, or a uniform axis-aligned rectangle in R^2,
and carries an affine posterior q(x) = P(Y=1 | X=x).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Iterator, Sequence, Union

import numpy as np

from .errors import (
    DegenerateCostError,
    GeometryError,
    OffSupportError,
    PosteriorRangeError,
    ValidationError,
    WeightSumError,
)

GEOMETRY_TOL = 1e-9
PROB_TOL = 1e-12


def _vec(values) -> tuple[float, ...]:
    out = tuple(float(v) for v in values)
    if not all(math.isfinite(v) for v in out):
        raise GeometryError(f"non-finite coordinate in {values!r}")
    return out


@dataclass(frozen=True)
class AffinePosterior:
    """q(x) = intercept + gradient . x"""

    intercept: float
    gradient: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "intercept", float(self.intercept))
        object.__setattr__(self, "gradient", _vec(self.gradient))

    @classmethod
    def constant(cls, value: float, dimension: int) -> "AffinePosterior":
        return cls(value, (0.0,) * dimension)

    def __call__(self, x) -> float:
        return self.intercept + float(np.dot(self.gradient, np.asarray(x, dtype=float)))

    def many(self, xs: np.ndarray) -> np.ndarray:
        return self.intercept + np.asarray(xs, dtype=float) @ np.asarray(self.gradient)


@dataclass(frozen=True)
class PointMass:
    location: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "location", _vec(self.location))

    @property
    def dimension(self) -> int:
        return len(self.location)

    def extreme_points(self) -> list[np.ndarray]:
        return [np.asarray(self.location)]

    def centroid(self) -> np.ndarray:
        return np.asarray(self.location)


@dataclass(frozen=True)
class Segment:
    """Uniform law on {base + t * direction : 0 <= t <= length}."""

    base: tuple[float, ...]
    direction: tuple[float, ...]
    length: float

    def __post_init__(self):
        object.__setattr__(self, "base", _vec(self.base))
        object.__setattr__(self, "direction", _vec(self.direction))
        object.__setattr__(self, "length", float(self.length))

    @classmethod
    def between(cls, start, end) -> "Segment":
        a = np.asarray(start, dtype=float)
        b = np.asarray(end, dtype=float)
        length = float(np.linalg.norm(b - a))
        if length <= 0:
            raise GeometryError("segment endpoints coincide")
        return cls(tuple(a), tuple((b - a) / length), length)

    @property
    def dimension(self) -> int:
        return len(self.base)

    @property
    def end(self) -> np.ndarray:
        return np.asarray(self.base) + self.length * np.asarray(self.direction)

    def extreme_points(self) -> list[np.ndarray]:
        return [np.asarray(self.base), self.end]

    def centroid(self) -> np.ndarray:
        return np.asarray(self.base) + 0.5 * self.length * np.asarray(self.direction)


@dataclass(frozen=True)
class Rect:
    """Uniform law on the axis-aligned box [lower, upper] in R^2."""

    lower: tuple[float, float]
    upper: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "lower", _vec(self.lower))
        object.__setattr__(self, "upper", _vec(self.upper))

    @property
    def dimension(self) -> int:
        return len(self.lower)

    @property
    def area(self) -> float:
        return (self.upper[0] - self.lower[0]) * (self.upper[1] - self.lower[1])

    def corners(self) -> np.ndarray:
        (x0, y0), (x1, y1) = self.lower, self.upper
        return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])

    def extreme_points(self) -> list[np.ndarray]:
        return list(self.corners())

    def centroid(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.lower) + np.asarray(self.upper))


Geometry = Union[PointMass, Segment, Rect]
KIND_NAMES = {PointMass: "point", Segment: "segment", Rect: "rect"}


@dataclass(frozen=True)
class Piece:
    geometry: Geometry
    weight: float
    posterior: AffinePosterior

    def __post_init__(self):
        object.__setattr__(self, "weight", float(self.weight))

    @property
    def kind(self) -> str:
        return KIND_NAMES[type(self.geometry)]

    def mean_posterior(self) -> float:
        return self.posterior(self.geometry.centroid())


@dataclass(frozen=True, eq=False)
class PiecewiseDistribution:
    """Joint law of (X, Y) as a validated finite mixture of pieces.

    Construction validates every invariant eagerly, so any instance in hand
    has weights summing to one and posteriors inside [0, 1] on each piece.
    """

    ambient_dimension: int
    pieces: tuple[Piece, ...]

    def __post_init__(self):
        object.__setattr__(self, "pieces", tuple(self.pieces))
        _validate(self)

    @cached_property
    def digest(self) -> str:
        blob = json.dumps(distribution_to_dict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def __hash__(self) -> int:
        return hash(self.digest)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PiecewiseDistribution):
            return NotImplemented
        return self is other or self.digest == other.digest

    @cached_property
    def weights(self) -> np.ndarray:
        return np.array([p.weight for p in self.pieces])

    @cached_property
    def prob_y1(self) -> float:
        return float(sum(p.weight * p.mean_posterior() for p in self.pieces))

    def __len__(self) -> int:
        return len(self.pieces)


def _validate(dist: PiecewiseDistribution) -> None:
    n = dist.ambient_dimension
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise GeometryError(f"ambient dimension must be a positive integer, got {n!r}")
    if not dist.pieces:
        raise ValidationError("a distribution needs at least one piece")
    for i, piece in enumerate(dist.pieces):
        g = piece.geometry
        if g.dimension != n:
            raise GeometryError(f"piece {i} lives in R^{g.dimension}, expected R^{n}")
        if isinstance(g, Segment):
            if abs(np.linalg.norm(g.direction) - 1.0) > GEOMETRY_TOL:
                raise GeometryError(f"piece {i}: segment direction is not a unit vector")
            if not g.length > 0:
                raise GeometryError(f"piece {i}: segment length must be positive")
        elif isinstance(g, Rect):
            if n != 2:
                raise GeometryError("rectangles are only supported in R^2")
            if not all(lo < hi for lo, hi in zip(g.lower, g.upper)):
                raise GeometryError(f"piece {i}: rectangle corners are not ordered")
        if len(piece.posterior.gradient) != n:
            raise GeometryError(f"piece {i}: posterior gradient has the wrong length")
        if not (piece.weight >= 0 and math.isfinite(piece.weight)):
            raise WeightSumError(f"piece {i}: weight must be nonnegative")
        for point in g.extreme_points():
            value = piece.posterior(point)
            if value < -PROB_TOL or value > 1 + PROB_TOL:
                raise PosteriorRangeError(
                    f"piece {i}: posterior {value!r} outside [0, 1] at {tuple(point)}"
                )
    total = math.fsum(p.weight for p in dist.pieces)
    if abs(total - 1.0) > PROB_TOL:
        raise WeightSumError(f"piece weights sum to {total!r}, not 1")


def build_distribution(ambient_dimension: int, pieces: Sequence[Piece]) -> PiecewiseDistribution:
    return PiecewiseDistribution(int(ambient_dimension), tuple(pieces))


@dataclass(frozen=True)
class DecisionProblem:
    distribution: PiecewiseDistribution
    loss_parameter: float

    def __post_init__(self):
        if not 0 < self.loss_parameter < 1:
            raise ValidationError("loss parameter must lie strictly between 0 and 1")


@dataclass(frozen=True)
class CostMatrix:
    """entries[yhat][y] is the cost of deciding yhat when the truth is y."""

    entries: tuple[tuple[float, float], tuple[float, float]]

    def __post_init__(self):
        rows = tuple(tuple(float(v) for v in row) for row in self.entries)
        if len(rows) != 2 or any(len(r) != 2 for r in rows):
            raise DegenerateCostError("cost matrix must be 2x2")
        object.__setattr__(self, "entries", rows)


def normalize_cost_matrix(
    cost: CostMatrix, dist: PiecewiseDistribution | None = None
) -> tuple[float, float, float | None]:
    """Reduce a cost matrix to the loss parameter c plus an affine map.

    Returns ``(c, a, b)`` with risk_C(h) = a * risk_c(h) + b.  The offset b
    depends on P(Y=1), so it is ``None`` unless a distribution is supplied.
    """
    (c00, c01), (c10, c11) = cost.entries
    if not (c00 < c10 and c11 < c01):
        raise DegenerateCostError("correct decisions must be strictly cheaper than mistakes")
    a = c10 + c01 - c00 - c11
    c = (c10 - c00) / a
    if dist is None:
        return c, a, None
    p1 = dist.prob_y1
    return c, a, (1.0 - p1) * c00 + p1 * c11


# ---------------------------------------------------------------- posterior


def _piece_membership(piece: Piece, xs: np.ndarray, tol: float = GEOMETRY_TOL) -> np.ndarray:
    g = piece.geometry
    if isinstance(g, PointMass):
        return np.linalg.norm(xs - np.asarray(g.location), axis=1) <= tol
    if isinstance(g, Segment):
        base = np.asarray(g.base)
        d = np.asarray(g.direction)
        rel = xs - base
        t = rel @ d
        resid = np.linalg.norm(rel - np.outer(t, d), axis=1)
        return (resid <= tol) & (t >= -tol) & (t <= g.length + tol)
    lower = np.asarray(g.lower) - tol
    upper = np.asarray(g.upper) + tol
    return np.all((xs >= lower) & (xs <= upper), axis=1)


def as_points(dist: PiecewiseDistribution, xs) -> np.ndarray:
    arr = np.asarray(xs, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1) if dist.ambient_dimension > 1 or arr.size == 1 else arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.shape[1] != dist.ambient_dimension:
        raise GeometryError(f"points must have {dist.ambient_dimension} coordinates")
    return arr


def membership_matrix(dist: PiecewiseDistribution, xs: np.ndarray) -> np.ndarray:
    """Boolean (len(xs), len(pieces)) matrix of geometric containment."""
    return np.column_stack([_piece_membership(p, xs) for p in dist.pieces])


def posterior_many(dist: PiecewiseDistribution, xs) -> np.ndarray:
    """Vectorised posterior; overlapping pieces are averaged by weight."""
    pts = as_points(dist, xs)
    member = membership_matrix(dist, pts)
    off = ~member.any(axis=1)
    if off.any():
        bad = pts[np.argmax(off)]
        raise OffSupportError(f"point {tuple(bad)} is not on the support")
    values = np.column_stack([np.clip(p.posterior.many(pts), 0.0, 1.0) for p in dist.pieces])
    w = member * dist.weights
    wsum = w.sum(axis=1)
    plain = member.astype(float)
    w = np.where((wsum > 0)[:, None], w, plain)
    return (w * values).sum(axis=1) / w.sum(axis=1)


def posterior(dist: PiecewiseDistribution, x) -> float:
    return float(posterior_many(dist, np.asarray(x, dtype=float).reshape(1, -1))[0])


# ----------------------------------------------------------------- sampling


@dataclass(frozen=True)
class Sample:
    """Draws from a distribution: points, labels and the source piece index."""

    xs: np.ndarray
    ys: np.ndarray
    piece_index: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.ys)

    def __iter__(self) -> Iterator[tuple[np.ndarray, int]]:
        for x, y in zip(self.xs, self.ys):
            yield x, int(y)


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator (Philox) keyed by a 64-bit seed."""
    return np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))


def sample(dist: PiecewiseDistribution, seed: int, m: int) -> Sample:
    if int(m) < 1:
        raise ValidationError("sample size must be at least 1")
    m = int(m)
    rng = make_rng(seed)
    probs = dist.weights / dist.weights.sum()
    idx = rng.choice(len(dist.pieces), size=m, p=probs)
    u = rng.random((m, 2))
    yu = rng.random(m)
    xs = np.empty((m, dist.ambient_dimension))
    q = np.empty(m)
    for k, piece in enumerate(dist.pieces):
        sel = idx == k
        if not sel.any():
            continue
        g = piece.geometry
        if isinstance(g, PointMass):
            pts = np.broadcast_to(np.asarray(g.location), (int(sel.sum()), g.dimension))
        elif isinstance(g, Segment):
            t = u[sel, 0] * g.length
            pts = np.asarray(g.base) + np.outer(t, g.direction)
        else:
            lo = np.asarray(g.lower)
            pts = lo + u[sel] * (np.asarray(g.upper) - lo)
        xs[sel] = pts
        q[sel] = np.clip(piece.posterior.many(pts), 0.0, 1.0)
    ys = (yu < q).astype(np.int8)
    return Sample(xs, ys, idx)


# ------------------------------------------------------------- uncertainty


def has_uncertainty(dist: PiecewiseDistribution) -> bool:
    """False iff every weighted piece has posterior identically 0 or 1."""
    for piece in dist.pieces:
        if piece.weight <= 0:
            continue
        values = [piece.posterior(p) for p in piece.geometry.extreme_points()]
        if all(abs(v) <= PROB_TOL for v in values):
            continue
        if all(abs(v - 1) <= PROB_TOL for v in values):
            continue
        return True
    return False


# -------------------------------------------------------------- JSON I/O


def _real(value) -> float:
    if isinstance(value, str):
        return float(Fraction(value.strip()))
    return float(value)


def _fmt(value: float) -> str:
    return repr(float(value))


def _fmt_vec(values) -> list[str]:
    return [_fmt(v) for v in values]


def piece_to_dict(piece: Piece) -> dict:
    g = piece.geometry
    if isinstance(g, PointMass):
        geometry = {"location": _fmt_vec(g.location)}
    elif isinstance(g, Segment):
        geometry = {"base": _fmt_vec(g.base), "direction": _fmt_vec(g.direction), "length": _fmt(g.length)}
    else:
        geometry = {"lower": _fmt_vec(g.lower), "upper": _fmt_vec(g.upper)}
    return {
        "kind": piece.kind,
        "geometry": geometry,
        "weight": _fmt(piece.weight),
        "posterior": {
            "intercept": _fmt(piece.posterior.intercept),
            "gradient": _fmt_vec(piece.posterior.gradient),
        },
    }


def piece_from_dict(data: dict) -> Piece:
    try:
        kind = data["kind"]
        geo = data["geometry"]
        if kind == "point":
            geometry = PointMass([_real(v) for v in geo["location"]])
        elif kind == "segment":
            if "start" in geo:
                geometry = Segment.between([_real(v) for v in geo["start"]], [_real(v) for v in geo["end"]])
            else:
                geometry = Segment(
                    [_real(v) for v in geo["base"]],
                    [_real(v) for v in geo["direction"]],
                    _real(geo["length"]),
                )
        elif kind == "rect":
            geometry = Rect([_real(v) for v in geo["lower"]], [_real(v) for v in geo["upper"]])
        else:
            raise GeometryError(f"unknown piece kind {kind!r}")
        post = data["posterior"]
        posterior = AffinePosterior(_real(post["intercept"]), [_real(v) for v in post["gradient"]])
        return Piece(geometry, _real(data["weight"]), posterior)
    except (KeyError, TypeError) as exc:
        raise GeometryError(f"malformed piece description: {exc}") from exc


def distribution_to_dict(dist: PiecewiseDistribution) -> dict:
    return {
        "ambient_dimension": dist.ambient_dimension,
        "pieces": [piece_to_dict(p) for p in dist.pieces],
    }


def distribution_from_dict(data: dict) -> PiecewiseDistribution:
    try:
        n = int(data["ambient_dimension"])
        pieces = [piece_from_dict(p) for p in data["pieces"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise GeometryError(f"malformed distribution description: {exc}") from exc
    return build_distribution(n, pieces)


def dump_distribution(dist: PiecewiseDistribution, path) -> None:
    with open(path, "w") as fh:
        json.dump(distribution_to_dict(dist), fh, indent=2)
        fh.write("\n")


def load_distribution(path) -> PiecewiseDistribution:
    with open(path) as fh:
        return distribution_from_dict(json.load(fh))
