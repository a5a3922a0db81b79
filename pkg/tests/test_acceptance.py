"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import math
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
from scipy.stats import binomtest

from conftest import product_dist, random_distribution, subset_oracle, unit_segment
from idt import (
    Affine,
    CostMatrix,
    DecisionRule,
    FamilyMember,
    FeatureSubsets,
    OptimalBayes,
    Surrogate,
    SurrogateMinimizer,
    ThresholdClass,
    TrialConfig,
    audit_fairness,
    build_construction,
    cost_risk,
    estimate_optimal,
    estimate_unknown_family,
    generate_log,
    induced_posterior,
    md_smoothness_alpha,
    min_disagreement,
    normalize_cost_matrix,
    risk,
    run_trials,
)
from idt.agents import decide_many
from idt.analytic import decision_moments
from idt.distribution import sample
from idt.estimators import CALIBRATED, NOT_CALIBRATED
from idt.harness import lower_bound_demo
from idt.hypothesis import UNBOUNDED, enumerate_family

RESULTS = []


def verdict(number, ok, detail, elapsed, limit):
    ok = bool(ok) and elapsed < limit
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}  [{elapsed:.1f}s, limit {limit}s]"
    RESULTS.append(line)
    print(line)
    assert ok, line


def test_criterion_01_rate_on_uniform_posterior():
    start = time.perf_counter()
    eps, delta, trials = 0.05, 0.1, 2000
    m = math.ceil(math.log(2 / delta) / (1.0 * eps))
    config = TrialConfig({"construction": "uniform_posterior", "params": {"c": 0.3}}, m, trials, eps, delta)
    freq = run_trials(config).failure_frequency
    bound = delta + 3 * math.sqrt(delta * (1 - delta) / trials)
    verdict(1, m == 60 and freq <= bound, f"m={m} failure={freq:.4f} bound={bound:.4f}",
            time.perf_counter() - start, 10)


def test_criterion_02_no_uncertainty():
    start = time.perf_counter()
    bundle = build_construction("no_uncertainty")
    dist = bundle.distribution
    ok = True
    for m in (10**2, 10**3, 10**4):
        for seed in range(100):
            results = [estimate_optimal(dist, generate_log(a, dist, m, seed)) for a in bundle.agents]
            ok &= all(r.interval == (0.0, 1.0) for r in results)
            ok &= max(abs(r.c_hat - c) for r, c in zip(results, bundle.parameters)) >= 0.25
    verdict(2, ok, "interval (0, 1] in all 300 trials per agent", time.perf_counter() - start, 5)


def test_criterion_03_risk_affinity():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(50):
        c00, c11 = rng.uniform(-3, 3, size=2)
        c10, c01 = c00 + rng.uniform(0.05, 4), c11 + rng.uniform(0.05, 4)
        cost = CostMatrix(((c00, c01), (c10, c11)))
        dist = random_distribution(rng)
        c, a, b = normalize_cost_matrix(cost, dist)
        for _ in range(20):
            rule = DecisionRule(Affine(tuple(rng.normal(size=2))), float(rng.normal()))
            worst = max(worst, abs(cost_risk(dist, cost, rule) - (a * risk(dist, c, rule) + b)))
    verdict(3, worst <= 1e-9, f"max deviation {worst:.2e}", time.perf_counter() - start, 5)


def test_criterion_04_induced_posterior_oracle():
    start = time.perf_counter()
    cases = [(3, 1, 0.15, (0.1, 0.6, 0.1)), (3, 0, 0.05, (0.5, 0.2, 0.2)), (4, 2, 0.1, (0.2, 0.1, 0.4, 0.15))]
    worst = 0.0
    for k, (n, cont, intercept, beta) in enumerate(cases):
        dist = product_dist(n, cont, intercept, beta)
        probes = sample(dist, 100 + k, 200).xs
        classes = enumerate_family(FeatureSubsets(n, 2))
        for x in probes:
            for _, cls in classes:
                got = induced_posterior(dist, cls, x)
                want = subset_oracle(intercept, beta, cls.score.zero_based, x)[0]
                worst = max(worst, abs(got - want))
    verdict(4, worst <= 1e-6, f"max |error| {worst:.2e} over 3 distributions x 200 probes",
            time.perf_counter() - start, 30)


def test_criterion_05_surrogate_equivalence():
    start = time.perf_counter()
    dist = unit_segment()
    xs = np.linspace(0, 1, 1000)[:, None]
    q = xs[:, 0]
    mismatches = 0
    for c in np.random.default_rng(5).uniform(0.05, 0.95, size=5):
        far = np.abs(q - c) > 1e-6
        bayes = decide_many(OptimalBayes(c), dist, xs)
        for surrogate in Surrogate:
            got = decide_many(SurrogateMinimizer(surrogate, c), dist, xs)
            mismatches += int(np.sum(got[far] != bayes[far]))
    verdict(5, mismatches == 0, f"{mismatches} mismatches", time.perf_counter() - start, 5)


def test_criterion_06_no_md_smooth():
    start = time.perf_counter()
    bundle = build_construction("no_md_smooth", eps=0.05)
    dist = bundle.distribution
    r1, r2 = bundle.rules
    # the class holding only r2's threshold makes MD the disagreement mass itself
    mass = min_disagreement(dist, r1, ThresholdClass(r2.score, (r2.threshold, r2.threshold)))
    alpha = md_smoothness_alpha(dist, bundle.family, "H1", 2 / 5)
    identical = all(
        generate_log(bundle.agents[0], dist, 1000, s).same_records(generate_log(bundle.agents[1], dist, 1000, s))
        for s in range(20)
    )
    good = 0
    trials = 200
    for seed in range(trials):
        res = estimate_unknown_family(dist, bundle.family, generate_log(bundle.agents[0], dist, 10**4, seed))
        found = {d["id"]: tuple(map(float, d["interval"])) for d in res.diagnostics["consistent_classes"]}
        ok = set(found) == {"H1", "H2"}
        for cid, target in (("H1", 2 / 5), ("H2", 3 / 5)):
            lo, hi = found.get(cid, (1.0, 0.0))
            ok = ok and lo < target <= hi and hi - lo <= 0.05
        good += ok
    frac = good / trials
    ok = mass <= 1e-12 and alpha == UNBOUNDED and identical and frac >= 0.95
    verdict(6, ok, f"MD={mass:.1e} alpha={alpha} identical_logs={identical} bracketing={frac:.3f}",
            time.perf_counter() - start, 60)


def test_criterion_07_fairness():
    start = time.perf_counter()
    trials, m = 200, 10**4
    same = build_construction("two_group", c_a=0.5, c_b=0.5)
    split = build_construction("two_group", c_a=0.4, c_b=0.6)
    calibrated = 0
    flagged = 0
    for seed in range(trials):
        log = generate_log(same.agents[0], same.distribution, 2 * m, seed)
        calibrated += audit_fairness(same.distribution, log, eps=0.01).verdict == CALIBRATED
        log = generate_log(split.agents[0], split.distribution, 2 * m, seed)
        report = audit_fairness(split.distribution, log, eps=0.01)
        flagged += report.verdict == NOT_CALIBRATED and 0.18 <= report.witness[2] <= 0.22
    a, b = calibrated / trials, flagged / trials
    verdict(7, a >= 0.99 and b >= 0.99, f"calibrated={a:.3f} not_calibrated={b:.3f}",
            time.perf_counter() - start, 60)


def test_criterion_08_sliver_lower_bound():
    start = time.perf_counter()
    eps, p_c, delta, trials = 1 / 16, 0.1, 0.25, 500
    bundle = build_construction("nodim_lower", eps=eps, p_c=p_c)
    dist = bundle.distribution
    p1, p2 = (decision_moments(dist, r) for r in bundle.rules)
    mass = (p1[(1, 0)] + p1[(1, 1)]) - (p2[(1, 0)] + p2[(1, 1)])
    target = 20 * p_c * eps**2
    limit_m = math.log(1 / (2 * delta)) / (40 * p_c * eps**2)
    m = math.ceil(limit_m) - 1
    report = lower_bound_demo("nodim_lower", {"eps": eps, "p_c": p_c}, m, trials, eps, delta)
    worst = report["max_failure_frequency"]
    pvalue = binomtest(round(worst * trials), trials, delta, alternative="greater").pvalue
    ok = abs(mass - target) <= 0.02 * target and m < limit_m and pvalue < 0.01
    verdict(8, ok, f"mass={mass:.6f} target={target:.6f} m={m} worst_failure={worst:.3f} p={pvalue:.1e}",
            time.perf_counter() - start, 120)


def test_criterion_09_feature_subset_trend():
    start = time.perf_counter()
    intercept, beta = 0.15, (0.1, 0.6, 0.1)
    dist = product_dist(3, 1, intercept, beta)
    family = FeatureSubsets(3, 2)
    agent = FamilyMember(family, "S{2}", 0.55)
    trials = 200
    means, ses, selected = [], [], 0
    for k, m in enumerate((10**2, 10**3, 10**4, 10**5)):
        errs = []
        for t in range(trials):
            res = estimate_unknown_family(dist, family, generate_log(agent, dist, m, k * trials + t))
            errs.append(abs(res.c_hat - agent.c))
            if m == 10**5:
                selected += res.selected_class_id == "S{2}"
        means.append(float(np.mean(errs)))
        ses.append(float(np.std(errs, ddof=1) / math.sqrt(trials)))
    trend = all(b <= a + 2 * math.hypot(sa, sb) for a, b, sa, sb in zip(means, means[1:], ses, ses[1:]))
    frac = selected / trials
    detail = "mean_err=" + ",".join(f"{v:.2e}" for v in means) + f" selected={frac:.3f}"
    verdict(9, trend and frac >= 0.9, detail, time.perf_counter() - start, 300)


def test_criterion_10_property_suite():
    start = time.perf_counter()
    here = Path(__file__).parent
    files = [str(p) for p in sorted(here.glob("test_*.py")) if p.name != Path(__file__).name]
    env = dict(os.environ)
    env["PYTHONPATH"] = os.pathsep.join(filter(None, [str(here), env.get("PYTHONPATH")]))
    proc = subprocess.run(
        [sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *files],
        capture_output=True, text=True, env=env, cwd=here.parent,
    )
    tail = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr.strip()[-200:]
    verdict(10, proc.returncode == 0, tail, time.perf_counter() - start, 600)
