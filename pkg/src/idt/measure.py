"""Exact one-dimensional pushforwards of piecewise distributions.

Every score used here is affine on each piece.  Pushing a piece through such
a score gives either an atom or a band whose density (and posterior-weighted
density) is a polynomial of degree at most two in the score value.  All
threshold questions (risk, optimal thresholds, disagreement) then reduce to
sums of closed-form polynomial integrals.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from .classes import Affine, ScoreFunction, check_score_dimension
from .distribution import (
    GEOMETRY_TOL,
    _piece_membership,
    AffinePosterior,
    PiecewiseDistribution,
    PointMass,
    Segment,
    as_points,
)
from .errors import OffSupportError, UnsupportedScoreError

FLAT_SLOPE = 1e-13
AFFINE_FIT_TOL = 1e-9
MERGE_TOL = 1e-12

# quadratic through nodes u = 1/4, 1/2, 3/4 -> coefficients of 1, u, u^2
_NODES = np.array([0.25, 0.5, 0.75])
_VINV = np.linalg.inv(np.vander(_NODES, 3, increasing=True))


def _fit_quadratic(values: np.ndarray) -> np.ndarray:
    """values[..., 3] sampled at the fixed nodes -> coefficients[..., 3]."""
    return values @ _VINV.T


def polyval(coef: np.ndarray, u) -> np.ndarray:
    return coef[..., 0] + u * (coef[..., 1] + u * coef[..., 2])


def polyint(coef: np.ndarray, u) -> np.ndarray:
    """Antiderivative vanishing at zero."""
    return u * (coef[..., 0] + u * (coef[..., 1] / 2 + u * coef[..., 2] / 3))


# ------------------------------------------------------------ subset scores


def subset_posterior_many(dist: PiecewiseDistribution, subset0: tuple[int, ...], xs: np.ndarray) -> np.ndarray:
    """P(Y=1 | X_S = x_S) evaluated at each row of xs.

    The conditional law of X given X_S = z is read off the pieces whose
    projection contains z.  Pieces with lower-dimensional projections carry
    singular mass there and take precedence over higher-dimensional ones.
    """
    idx = list(subset0)
    z = xs[:, idx]
    n = len(xs)
    best = np.full(n, np.inf)
    num = np.zeros(n)
    den = np.zeros(n)
    for piece in dist.pieces:
        if piece.weight <= 0:
            continue
        g = piece.geometry
        w = piece.weight
        post = piece.posterior
        if isinstance(g, PointMass):
            loc = np.asarray(g.location)
            inside = np.linalg.norm(z - loc[idx], axis=1) <= GEOMETRY_TOL
            level, dens, qv = 0, np.full(n, w), np.full(n, post(loc))
        elif isinstance(g, Segment):
            base = np.asarray(g.base)
            d = np.asarray(g.direction)
            ds = d[idx]
            nd = float(np.linalg.norm(ds))
            if nd <= FLAT_SLOPE:
                inside = np.linalg.norm(z - base[idx], axis=1) <= GEOMETRY_TOL
                level, dens, qv = 0, np.full(n, w), np.full(n, piece.mean_posterior())
            else:
                t = (z - base[idx]) @ ds / nd**2
                resid = np.linalg.norm(z - base[idx] - np.outer(t, ds), axis=1)
                slack = GEOMETRY_TOL / nd
                inside = (resid <= GEOMETRY_TOL) & (t >= -slack) & (t <= g.length + slack)
                tc = np.clip(t, 0.0, g.length)
                level = 1
                dens = np.full(n, w / (g.length * nd))
                qv = post.many(base + np.outer(tc, d))
        else:
            lo = np.asarray(g.lower)
            hi = np.asarray(g.upper)
            inside = np.all((z >= lo[idx] - GEOMETRY_TOL) & (z <= hi[idx] + GEOMETRY_TOL), axis=1)
            pts = np.tile(0.5 * (lo + hi), (n, 1))
            pts[:, idx] = np.clip(z, lo[idx], hi[idx])
            level = len(idx)
            dens = np.full(n, w / float(np.prod(hi[idx] - lo[idx])))
            qv = post.many(pts)
        qv = np.clip(qv, 0.0, 1.0)
        lower = inside & (level < best)
        same = inside & (level == best)
        best = np.where(lower, level, best)
        num = np.where(lower, dens * qv, num + np.where(same, dens * qv, 0.0))
        den = np.where(lower, dens, den + np.where(same, dens, 0.0))
    if np.any(den <= 0):
        bad = xs[np.argmax(den <= 0)]
        raise OffSupportError(f"point {tuple(bad)} is not on the support")
    return num / den


def _check_support(dist: PiecewiseDistribution, pts: np.ndarray) -> None:
    # only points not yet placed on a piece are tested against the next one
    left = pts
    for piece in sorted(dist.pieces, key=lambda p: -p.weight):
        if not len(left):
            return
        left = left[~_piece_membership(piece, left)]
    if len(left):
        raise OffSupportError(f"point {tuple(left[0])} is not on the support")


def score_values(dist: PiecewiseDistribution, score: ScoreFunction, xs, check_support: bool = True) -> np.ndarray:
    pts = as_points(dist, xs)
    check_score_dimension(score, dist.ambient_dimension)
    if check_support:
        _check_support(dist, pts)
    if isinstance(score, Affine):
        return pts @ np.asarray(score.weights)
    return subset_posterior_many(dist, score.zero_based, pts)


@lru_cache(maxsize=512)
def local_scores(dist: PiecewiseDistribution, score: ScoreFunction) -> tuple[tuple[float, np.ndarray], ...]:
    """Per piece, an ambient affine map (a0, a) equal to the score on that piece."""
    check_score_dimension(score, dist.ambient_dimension)
    n = dist.ambient_dimension
    if isinstance(score, Affine):
        a = np.asarray(score.weights)
        return tuple((0.0, a) for _ in dist.pieces)
    out = []
    for k, piece in enumerate(dist.pieces):
        g = piece.geometry
        if isinstance(g, PointMass):
            loc = np.asarray(g.location).reshape(1, -1)
            value = float(subset_posterior_many(dist, score.zero_based, loc)[0]) if piece.weight > 0 else 0.0
            out.append((value, np.zeros(n)))
            continue
        if piece.weight <= 0:
            out.append((0.0, np.zeros(n)))
            continue
        if isinstance(g, Segment):
            t = g.length * np.arange(1, 9) / 9.0
            pts = np.asarray(g.base) + np.outer(t, g.direction)
            vals = subset_posterior_many(dist, score.zero_based, pts)
            design = np.column_stack([np.ones_like(t), t])
            coef, *_ = np.linalg.lstsq(design, vals, rcond=None)
            resid = np.max(np.abs(design @ coef - vals))
            d = np.asarray(g.direction)
            a = coef[1] * d
            a0 = coef[0] - coef[1] * float(np.dot(g.base, d))
        else:
            fr = np.array([0.1, 0.3, 0.5, 0.7, 0.9])
            lo = np.asarray(g.lower)
            hi = np.asarray(g.upper)
            gx, gy = np.meshgrid(lo[0] + fr * (hi[0] - lo[0]), lo[1] + fr * (hi[1] - lo[1]))
            pts = np.column_stack([gx.ravel(), gy.ravel()])
            vals = subset_posterior_many(dist, score.zero_based, pts)
            design = np.column_stack([np.ones(len(pts)), pts])
            coef, *_ = np.linalg.lstsq(design, vals, rcond=None)
            resid = np.max(np.abs(design @ coef - vals))
            a0, a = coef[0], coef[1:]
        if resid > AFFINE_FIT_TOL:
            raise UnsupportedScoreError(
                f"subset score {score.subset} is not affine on piece {k}; no analytic integrator"
            )
        out.append((float(a0), np.asarray(a, dtype=float)))
    return tuple(out)


# --------------------------------------------------------------------- parts


@dataclass(frozen=True)
class AtomPart:
    loc: np.ndarray
    mass: float
    q: float
    piece: int


@dataclass(frozen=True)
class SegPart:
    base: np.ndarray
    direction: np.ndarray
    t0: float
    t1: float
    density: float
    posterior: AffinePosterior
    piece: int

    def point(self, t):
        return self.base + np.multiply.outer(t, self.direction)

    @property
    def mass(self) -> float:
        return self.density * (self.t1 - self.t0)


@dataclass(frozen=True)
class PolyPart:
    verts: np.ndarray
    density: float
    posterior: AffinePosterior
    piece: int

    @cached_property
    def area_centroid(self) -> tuple[float, np.ndarray]:
        v = self.verts
        w = np.roll(v, -1, axis=0)
        cross = v[:, 0] * w[:, 1] - w[:, 0] * v[:, 1]
        area = 0.5 * cross.sum()
        if abs(area) <= 0:
            return 0.0, v.mean(axis=0)
        cx = ((v[:, 0] + w[:, 0]) * cross).sum() / (6 * area)
        cy = ((v[:, 1] + w[:, 1]) * cross).sum() / (6 * area)
        return abs(area), np.array([cx, cy])

    @property
    def mass(self) -> float:
        return self.density * self.area_centroid[0]


def base_parts(dist: PiecewiseDistribution) -> list:
    parts = []
    for k, piece in enumerate(dist.pieces):
        if piece.weight <= 0:
            continue
        g = piece.geometry
        if isinstance(g, PointMass):
            loc = np.asarray(g.location)
            parts.append(AtomPart(loc, piece.weight, float(np.clip(piece.posterior(loc), 0, 1)), k))
        elif isinstance(g, Segment):
            parts.append(
                SegPart(np.asarray(g.base), np.asarray(g.direction), 0.0, g.length,
                        piece.weight / g.length, piece.posterior, k)
            )
        else:
            parts.append(PolyPart(g.corners(), piece.weight / g.area, piece.posterior, k))
    return parts


def part_moments(part) -> tuple[float, float]:
    """(P(X in part), P(X in part, Y = 1)) in closed form."""
    if isinstance(part, AtomPart):
        return part.mass, part.mass * part.q
    if isinstance(part, SegPart):
        mass = part.mass
        return mass, mass * part.posterior(part.point(0.5 * (part.t0 + part.t1)))
    area, centroid = part.area_centroid
    mass = part.density * area
    return mass, mass * part.posterior(centroid)


def _clip_polygon(verts: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Keep the part of a convex polygon where the affine values f >= 0."""
    out = []
    k = len(verts)
    for i in range(k):
        j = (i + 1) % k
        p, q = verts[i], verts[j]
        fp, fq = f[i], f[j]
        if fp >= 0:
            out.append(p)
        if (fp >= 0) != (fq >= 0) and fp != fq:
            out.append(p + (fp / (fp - fq)) * (q - p))
    return np.array(out) if out else np.zeros((0, 2))


def clip_parts(parts: list, scores, threshold: float, keep_upper: bool) -> list:
    """Restrict parts to {s >= threshold} (keep_upper) or {s < threshold}."""
    out = []
    for part in parts:
        a0, a = scores[part.piece]
        if isinstance(part, AtomPart):
            s = a0 + float(np.dot(a, part.loc))
            if (s >= threshold) == keep_upper:
                out.append(part)
        elif isinstance(part, SegPart):
            sb = a0 + float(np.dot(a, part.base))
            s1 = float(np.dot(a, part.direction))
            if abs(s1) <= FLAT_SLOPE * (1 + float(np.linalg.norm(a))):
                s = sb + s1 * 0.5 * (part.t0 + part.t1)
                if (s >= threshold) == keep_upper:
                    out.append(part)
                continue
            tstar = (threshold - sb) / s1
            t0, t1 = part.t0, part.t1
            if (s1 > 0) == keep_upper:
                t0 = max(t0, tstar)
            else:
                t1 = min(t1, tstar)
            if t1 > t0:
                out.append(SegPart(part.base, part.direction, t0, t1, part.density, part.posterior, part.piece))
        else:
            f = a0 + part.verts @ a - threshold
            if np.linalg.norm(a) <= FLAT_SLOPE:
                if (a0 >= threshold) == keep_upper:
                    out.append(part)
                continue
            clipped = _clip_polygon(part.verts, f if keep_upper else -f)
            if len(clipped) >= 3:
                piece = PolyPart(clipped, part.density, part.posterior, part.piece)
                if piece.area_centroid[0] > 1e-300:
                    out.append(piece)
    return out


def moments(parts: list) -> tuple[float, float]:
    m = g = 0.0
    for part in parts:
        a, b = part_moments(part)
        m += a
        g += b
    return m, g


# ------------------------------------------------------------------ measure


class ScoreMeasure:
    """Law of the score together with the law of the score weighted by q.

    Atoms carry (location, mass, q-mass).  Bands live on [l, r] and carry
    density and q-weighted density as quadratics in u = (s - l) / (r - l).
    """

    def __init__(self, atom_s, atom_m, atom_g, band_l, band_r, band_rho, band_gam):
        order = np.argsort(atom_s, kind="stable")
        self.atom_s = np.asarray(atom_s, dtype=float)[order]
        self.atom_m = np.asarray(atom_m, dtype=float)[order]
        self.atom_g = np.asarray(atom_g, dtype=float)[order]
        self.band_l = np.asarray(band_l, dtype=float)
        self.band_r = np.asarray(band_r, dtype=float)
        self.band_rho = np.asarray(band_rho, dtype=float).reshape(-1, 3)
        self.band_gam = np.asarray(band_gam, dtype=float).reshape(-1, 3)
        zero = np.zeros(1)
        self._pre_m = np.concatenate([zero, np.cumsum(self.atom_m)])
        self._pre_g = np.concatenate([zero, np.cumsum(self.atom_g)])
        self._suf_m = np.concatenate([np.cumsum(self.atom_m[::-1])[::-1], zero])
        self._suf_g = np.concatenate([np.cumsum(self.atom_g[::-1])[::-1], zero])
        width = self.band_r - self.band_l
        self._band_mass = width * polyint(self.band_rho, 1.0)
        self._band_gmass = width * polyint(self.band_gam, 1.0)

    @property
    def total(self) -> tuple[float, float]:
        return (float(self._pre_m[-1] + self._band_mass.sum()),
                float(self._pre_g[-1] + self._band_gmass.sum()))

    def _band_upper(self, b: np.ndarray):
        width = self.band_r - self.band_l
        u0 = np.clip((b[:, None] - self.band_l) / width, 0.0, 1.0)
        m = width * (polyint(self.band_rho, 1.0) - polyint(self.band_rho, u0))
        g = width * (polyint(self.band_gam, 1.0) - polyint(self.band_gam, u0))
        return m.sum(axis=1), g.sum(axis=1)

    def _band_lower(self, b: np.ndarray):
        width = self.band_r - self.band_l
        u0 = np.clip((b[:, None] - self.band_l) / width, 0.0, 1.0)
        return (width * polyint(self.band_rho, u0)).sum(axis=1), (width * polyint(self.band_gam, u0)).sum(axis=1)

    def tail(self, b, strict: bool = False):
        """Mass and q-mass of {s >= b} (or {s > b} when strict)."""
        b = np.atleast_1d(np.asarray(b, dtype=float))
        i = np.searchsorted(self.atom_s, b, side="right" if strict else "left")
        bm, bg = self._band_upper(b)
        return self._suf_m[i] + bm, self._suf_g[i] + bg

    def head(self, b, strict: bool = True):
        """Mass and q-mass of {s < b} (or {s <= b} when not strict)."""
        b = np.atleast_1d(np.asarray(b, dtype=float))
        i = np.searchsorted(self.atom_s, b, side="left" if strict else "right")
        bm, bg = self._band_lower(b)
        return self._pre_m[i] + bm, self._pre_g[i] + bg

    def mass_between(self, lo: float, hi: float, lo_closed: bool, hi_closed: bool) -> float:
        if hi < lo:
            return 0.0
        left = np.searchsorted(self.atom_s, lo, side="left" if lo_closed else "right")
        right = np.searchsorted(self.atom_s, hi, side="right" if hi_closed else "left")
        atoms = float(self._pre_m[right] - self._pre_m[left]) if right > left else 0.0
        width = self.band_r - self.band_l
        u0 = np.clip((lo - self.band_l) / width, 0.0, 1.0)
        u1 = np.clip((hi - self.band_l) / width, 0.0, 1.0)
        bands = width * (polyint(self.band_rho, u1) - polyint(self.band_rho, u0))
        return atoms + float(bands.sum())

    @cached_property
    def breakpoints(self) -> np.ndarray:
        raw = np.sort(np.concatenate([self.atom_s, self.band_l, self.band_r]))
        if raw.size == 0:
            return raw
        keep = [raw[0]]
        for v in raw[1:]:
            if v - keep[-1] > MERGE_TOL * max(1.0, abs(v)):
                keep.append(v)
        return np.array(keep)

    @cached_property
    def segments(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(left ends, total density coefficients, total q-density coefficients).

        Coefficients are quadratics in v = (s - left) / (right - left) for each
        gap between consecutive breakpoints.
        """
        bp = self.breakpoints
        if bp.size < 2:
            empty = np.zeros((0, 3))
            return bp[:-1], empty, empty
        left, right = bp[:-1], bp[1:]
        s = left[:, None] + _NODES[None, :] * (right - left)[:, None]
        if self.band_l.size == 0:
            zeros = np.zeros((len(left), 3))
            return left, zeros, zeros
        width = self.band_r - self.band_l
        u = (s[:, :, None] - self.band_l) / width
        active = (u >= 0) & (u <= 1)
        rho = np.where(active, polyval(self.band_rho, u), 0.0)
        gam = np.where(active, polyval(self.band_gam, u), 0.0)
        return left, _fit_quadratic(rho.sum(axis=2)), _fit_quadratic(gam.sum(axis=2))

    def level_posterior(self, s: np.ndarray) -> np.ndarray:
        """E[q | score = s] on the continuous part, NaN where the density vanishes."""
        bp = self.breakpoints
        left, rho, gam = self.segments
        j = np.clip(np.searchsorted(bp, s, side="right") - 1, 0, max(len(left) - 1, 0))
        v = (s - bp[j]) / (bp[j + 1] - bp[j])
        num = polyval(gam[j], v)
        den = polyval(rho[j], v)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(den > 0, num / den, np.nan)


def _poly_level(verts: np.ndarray, a0: float, a: np.ndarray, s: float):
    f = a0 + verts @ a - s
    pts = []
    k = len(verts)
    for i in range(k):
        j = (i + 1) % k
        if f[i] == 0:
            pts.append(verts[i])
        elif f[i] * f[j] < 0:
            pts.append(verts[i] + (f[i] / (f[i] - f[j])) * (verts[j] - verts[i]))
    if len(pts) < 2:
        return 0.0, verts.mean(axis=0)
    pts = np.array(pts)
    perp = np.array([-a[1], a[0]])
    proj = pts @ perp
    p, q = pts[np.argmin(proj)], pts[np.argmax(proj)]
    return float(np.linalg.norm(q - p)), 0.5 * (p + q)


def pushforward(parts: list, scores) -> ScoreMeasure:
    atom_s, atom_m, atom_g = [], [], []
    band_l, band_r, band_rho, band_gam = [], [], [], []
    for part in parts:
        a0, a = scores[part.piece]
        if isinstance(part, AtomPart):
            atom_s.append(a0 + float(np.dot(a, part.loc)))
            atom_m.append(part.mass)
            atom_g.append(part.mass * part.q)
            continue
        mass, gmass = part_moments(part)
        if mass <= 0:
            continue
        if isinstance(part, SegPart):
            sb = a0 + float(np.dot(a, part.base))
            s1 = float(np.dot(a, part.direction))
            if abs(s1) <= FLAT_SLOPE * (1 + float(np.linalg.norm(a))):
                atom_s.append(sb + s1 * 0.5 * (part.t0 + part.t1))
                atom_m.append(mass)
                atom_g.append(gmass)
                continue
            sa, sz = sb + s1 * part.t0, sb + s1 * part.t1
            qa = float(np.clip(part.posterior(part.point(part.t0)), 0, 1))
            qz = float(np.clip(part.posterior(part.point(part.t1)), 0, 1))
            if sa > sz:
                sa, sz, qa, qz = sz, sa, qz, qa
            rho = part.density / abs(s1)
            band_l.append(sa)
            band_r.append(sz)
            band_rho.append([rho, 0.0, 0.0])
            band_gam.append([rho * qa, rho * (qz - qa), 0.0])
            continue
        norm = float(np.linalg.norm(a))
        if norm <= FLAT_SLOPE:
            _, centroid = part.area_centroid
            atom_s.append(a0 + float(np.dot(a, centroid)))
            atom_m.append(mass)
            atom_g.append(gmass)
            continue
        vals = np.unique(a0 + part.verts @ a)
        merged = [vals[0]]
        for v in vals[1:]:
            if v - merged[-1] > MERGE_TOL * max(1.0, abs(v)):
                merged.append(v)
        for lo, hi in zip(merged[:-1], merged[1:]):
            rho_v, gam_v = [], []
            for u in _NODES:
                length, mid = _poly_level(part.verts, a0, a, lo + u * (hi - lo))
                dens = part.density * length / norm
                rho_v.append(dens)
                gam_v.append(dens * float(np.clip(part.posterior(mid), 0, 1)))
            band_l.append(lo)
            band_r.append(hi)
            band_rho.append(_fit_quadratic(np.array(rho_v)))
            band_gam.append(_fit_quadratic(np.array(gam_v)))
    return ScoreMeasure(atom_s, atom_m, atom_g, band_l, band_r, band_rho, band_gam)


@lru_cache(maxsize=512)
def score_measure(dist: PiecewiseDistribution, score: ScoreFunction) -> ScoreMeasure:
    return pushforward(base_parts(dist), local_scores(dist, score))


@lru_cache(maxsize=64)
def posterior_measure(dist: PiecewiseDistribution) -> ScoreMeasure:
    """Law of q(X) using each piece's own posterior."""
    scores = tuple((p.posterior.intercept, np.asarray(p.posterior.gradient)) for p in dist.pieces)
    return pushforward(base_parts(dist), scores)
