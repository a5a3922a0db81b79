"""Seeded Monte Carlo trials and sample-size curves."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .agents import (
    Agent,
    ClassRestricted,
    FamilyMember,
    GroupWise,
    agent_from_dict,
    agent_to_dict,
    generate_log,
)
from .analytic import density_floor
from .classes import class_from_dict, family_from_dict
from .constructions import ConstructionBundle, build_construction
from .distribution import PiecewiseDistribution, distribution_from_dict
from .errors import EstimationError, ValidationError
from .estimators import estimate_known_class, estimate_optimal, estimate_unknown_family
from .hypothesis import family_size

REGIMES = ("optimal", "known_class", "unknown_family")
THREADS_ENV = "IDT_THREADS"


def code_digest() -> str:
    """sha256 over the package sources, so reports pin the code that made them."""
    h = hashlib.sha256()
    for path in sorted(Path(__file__).parent.glob("*.py")):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return h.hexdigest()


@dataclass(frozen=True)
class Problem:
    distribution: PiecewiseDistribution
    bundle: ConstructionBundle | None = None


def resolve_problem(spec: dict) -> Problem:
    """Accepts {"construction": name, "params": {...}} or an inline distribution."""
    if "construction" in spec:
        bundle = build_construction(spec["construction"], **dict(spec.get("params") or {}))
        return Problem(bundle.distribution, bundle)
    data = spec.get("distribution", spec)
    return Problem(distribution_from_dict(data))


@dataclass(frozen=True)
class TrialConfig:
    problem: dict
    m: int
    trials: int
    eps: float
    delta: float
    base_seed: int = 0
    regime: str | None = None
    agent: dict | None = None
    agent_index: int = 0
    class_spec: dict | None = None
    family: dict | None = None
    p_c: float | None = None

    def __post_init__(self):
        if not 0 < self.eps < 1:
            raise ValidationError(f"eps must lie in (0, 1), got {self.eps}")
        if not 0 < self.delta < 1:
            raise ValidationError(f"delta must lie in (0, 1), got {self.delta}")
        if int(self.trials) < 1:
            raise ValidationError("need at least one trial")
        if int(self.m) < 1:
            raise ValidationError("sample size must be at least 1")
        if self.regime is not None and self.regime not in REGIMES:
            raise ValidationError(f"regime must be one of {REGIMES}, got {self.regime!r}")

    def with_m(self, m: int, base_seed: int) -> "TrialConfig":
        return TrialConfig(**{**asdict(self), "m": int(m), "base_seed": int(base_seed)})

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, data: dict) -> "TrialConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(data) - known
        if extra:
            raise ValidationError(f"unknown config keys {sorted(extra)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ValidationError(f"bad trial config: {exc}") from exc


def default_regime(agent: Agent) -> str:
    if isinstance(agent, ClassRestricted):
        return "known_class"
    if isinstance(agent, FamilyMember):
        return "unknown_family"
    return "optimal"


@dataclass(frozen=True)
class Experiment:
    """A resolved config: what to sample from, who decides and how to estimate."""

    distribution: PiecewiseDistribution
    agent: Agent
    true_c: float
    regime: str
    estimator_arg: object
    notes: dict

    def estimate(self, log):
        if self.regime == "optimal":
            return estimate_optimal(self.distribution, log)
        if self.regime == "known_class":
            return estimate_known_class(self.distribution, self.estimator_arg, log)
        return estimate_unknown_family(self.distribution, self.estimator_arg, log)


def resolve(config: TrialConfig) -> Experiment:
    problem = resolve_problem(config.problem)
    bundle = problem.bundle
    if config.agent is not None:
        agent = agent_from_dict(config.agent)
    elif bundle is not None:
        if not 0 <= config.agent_index < len(bundle.agents):
            raise ValidationError(f"agent index {config.agent_index} out of range")
        agent = bundle.agents[config.agent_index]
    else:
        raise ValidationError("an inline problem needs an agent descriptor")
    if isinstance(agent, GroupWise):
        raise ValidationError("group-wise agents are audited, not run through rate trials")
    regime = config.regime or default_regime(agent)
    arg = None
    if regime == "known_class":
        if config.class_spec is not None:
            arg = class_from_dict(config.class_spec)
        elif isinstance(agent, (ClassRestricted, FamilyMember)):
            arg = agent.cls
        else:
            raise ValidationError("known_class regime needs a class")
    elif regime == "unknown_family":
        if config.family is not None:
            arg = family_from_dict(config.family)
        elif isinstance(agent, FamilyMember):
            arg = agent.family
        elif bundle is not None and bundle.family is not None:
            arg = bundle.family
        else:
            raise ValidationError("unknown_family regime needs a family")
    notes = dict(bundle.notes) if bundle is not None else {}
    return Experiment(problem.distribution, agent, agent.c, regime, arg, notes)


@dataclass
class TrialReport:
    config: dict
    errors: list
    widths: list
    failures: int
    error_counts: dict
    wall_clock: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def trials(self) -> int:
        return len(self.errors)

    @property
    def failure_frequency(self) -> float:
        return self.failures / self.trials

    @property
    def standard_error(self) -> float:
        p = self.failure_frequency
        return math.sqrt(p * (1 - p) / self.trials)

    def _finite(self, values) -> np.ndarray:
        return np.array([v for v in values if v is not None], dtype=float)

    @property
    def mean_abs_error(self) -> float:
        errs = self._finite(self.errors)
        return float(errs.mean()) if errs.size else math.nan

    @property
    def abs_error_standard_error(self) -> float:
        errs = self._finite(self.errors)
        return float(errs.std(ddof=1) / math.sqrt(errs.size)) if errs.size > 1 else 0.0

    @property
    def mean_width(self) -> float:
        w = self._finite(self.widths)
        return float(w.mean()) if w.size else math.nan

    def summary(self) -> dict:
        w = self._finite(self.widths)
        return {
            "trials": self.trials,
            "failures": self.failures,
            "failure_frequency": self.failure_frequency,
            "standard_error": self.standard_error,
            "mean_abs_error": self.mean_abs_error,
            "mean_width": self.mean_width,
            "min_width": float(w.min()) if w.size else None,
            "max_width": float(w.max()) if w.size else None,
            "error_counts": dict(sorted(self.error_counts.items())),
        }

    def to_dict(self, include_timing: bool = False) -> dict:
        out = {
            "config": self.config,
            "summary": self.summary(),
            "abs_errors": self.errors,
            "code_digest": code_digest(),
            **self.extra,
        }
        if include_timing:
            out["wall_clock_seconds"] = self.wall_clock
        return out

    def to_json(self, include_timing: bool = False) -> str:
        return json.dumps(self.to_dict(include_timing), sort_keys=True, indent=2)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        raise ValidationError(f"{THREADS_ENV} must be an integer") from None


def ordered_map(fn, items) -> list:
    """map() that may run on IDT_THREADS workers but always returns in input order."""
    n = _threads()
    if n == 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _one_trial(exp: Experiment, m: int, seed: int):
    log = generate_log(exp.agent, exp.distribution, m, seed)
    try:
        result = exp.estimate(log)
    except EstimationError as exc:
        return None, None, type(exc).__name__
    return abs(result.c_hat - exp.true_c), result.width, None


def run_trials(config: TrialConfig) -> TrialReport:
    """T seeded trials (seed = base_seed + i), each a fresh log and estimate."""
    exp = resolve(config)
    start = time.perf_counter()
    rows = ordered_map(lambda i: _one_trial(exp, config.m, config.base_seed + i), range(config.trials))
    elapsed = time.perf_counter() - start
    errors, widths, counts = [], [], {}
    failures = 0
    for err, width, kind in rows:
        errors.append(err)
        widths.append(width)
        if kind is not None:
            counts[kind] = counts.get(kind, 0) + 1
            failures += 1
        elif err > config.eps:
            failures += 1
    if sum(counts.values()) == config.trials:
        raise EstimationError(f"every trial failed: {dict(sorted(counts.items()))}")
    extra = {"true_c": exp.true_c, "regime": exp.regime, "notes": exp.notes}
    if exp.regime == "optimal":
        extra["density_floor"] = list(density_floor(exp.distribution, exp.true_c, config.eps))
    return TrialReport(config.to_dict(), errors, widths, failures, counts, elapsed, extra)


def guaranteed_sample_size(eps: float, delta: float, p_c: float) -> int:
    """Smallest m with m >= ln(2/delta) / (p_c eps)."""
    return math.ceil(math.log(2 / delta) / (p_c * eps))


def rate_curve(config: TrialConfig, m_values) -> list[dict]:
    """One run_trials per m; the k-th m starts its seeds at base_seed + k T."""
    m_values = [int(m) for m in m_values]
    if not m_values:
        raise ValidationError("m_values must be non-empty")
    if any(b <= a for a, b in zip(m_values, m_values[1:])) or m_values[0] < 1:
        raise ValidationError("m_values must be positive and strictly ascending")
    rows = []
    for k, m in enumerate(m_values):
        report = run_trials(config.with_m(m, config.base_seed + k * config.trials))
        s = report.summary()
        rows.append(
            {
                "m": m,
                "failure_frequency": s["failure_frequency"],
                "standard_error": s["standard_error"],
                "mean_abs_error": s["mean_abs_error"],
                "abs_error_standard_error": report.abs_error_standard_error,
                "mean_width": s["mean_width"],
            }
        )
    return rows


CURVE_FIELDS = ("m", "failure_frequency", "standard_error", "mean_abs_error", "abs_error_standard_error", "mean_width")


def curve_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CURVE_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: repr(row[k]) if isinstance(row[k], float) else row[k] for k in CURVE_FIELDS})
    return buf.getvalue()


def rate_check(config: TrialConfig, rows: list[dict]) -> list[dict]:
    """Rows at or beyond the guaranteed sample size whose failure rate breaks the 3-sigma allowance."""
    if config.p_c is None:
        return []
    need = guaranteed_sample_size(config.eps, config.delta, config.p_c)
    allowance = config.delta + 3 * math.sqrt(config.delta * (1 - config.delta) / config.trials)
    return [r for r in rows if r["m"] >= need and r["failure_frequency"] > allowance]


# ------------------------------------------------------------ lower bounds


def lower_bound_demo(
    name: str,
    params: dict,
    m: int,
    trials: int,
    eps: float,
    delta: float,
    base_seed: int = 0,
    regime: str | None = None,
) -> dict:
    """Run every bundled agent on shared seeds and report how often they are confused.

    The bound is demonstrated when some agent's failure frequency exceeds delta.
    """
    bundle = build_construction(name, **params)
    problem = {"construction": name, "params": params}
    if regime is None and bundle.family is not None and family_size(bundle.family) > 1:
        regime = "unknown_family"
    reports = []
    for i, _ in enumerate(bundle.agents):
        cfg = TrialConfig(problem, m, trials, eps, delta, base_seed, regime, agent_index=i)
        try:
            reports.append(run_trials(cfg))
        except EstimationError as exc:
            reports.append(exc)
    identical = 0
    for t in range(trials):
        logs = [generate_log(a, bundle.distribution, m, base_seed + t) for a in bundle.agents]
        identical += all(logs[0].same_records(other) for other in logs[1:])
    per_agent = []
    worst = 0.0
    for agent, c, rep in zip(bundle.agents, bundle.parameters, reports):
        entry = {"agent": agent_to_dict(agent), "c": c}
        if isinstance(rep, Exception):
            entry.update({"failure_frequency": 1.0, "error": str(rep)})
            worst = 1.0
        else:
            entry.update(rep.summary())
            entry["regime"] = rep.extra["regime"]
            worst = max(worst, rep.failure_frequency)
        per_agent.append(entry)
    return {
        "construction": name,
        "params": params,
        "m": m,
        "trials": trials,
        "eps": eps,
        "delta": delta,
        "base_seed": base_seed,
        "notes": bundle.notes,
        "identical_log_fraction": identical / trials,
        "per_agent": per_agent,
        "max_failure_frequency": worst,
        "demonstrated": worst > delta,
        "code_digest": code_digest(),
    }
