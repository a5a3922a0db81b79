import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from idt import (
    ClassRestricted,
    DecisionRule,
    ThresholdClass,
    build_construction,
    build_distribution,
    density_floor,
    dim_lower,
    estimate_optimal,
    generate_log,
    has_uncertainty,
    induced_posterior,
    md_smoothness_alpha,
    min_disagreement,
    near_optimal_counterexample,
    no_md_smooth_instance,
    no_uncertainty_instance,
    nodim_lower,
    optimal_threshold,
    risk,
)
from idt.analytic import decision_moments
from idt.constructions import CONSTRUCTIONS, SigmaClasses, band_lower_bound, dim_lower_patterns
from idt.errors import ParameterRangeError
from idt.hypothesis import UNBOUNDED, decide_rule, enumerate_family
from idt.distribution import sample

BUNDLES = [
    ("band_lower_bound", {"eps": 0.05, "p_c": 1.0}),
    ("band_lower_bound", {"eps": 0.2, "p_c": 0.5}),
    ("no_uncertainty", {}),
    ("near_optimal", {"delta_slack": 0.5, "eps": 0.1}),
    ("nodim_lower", {"eps": 1 / 16, "p_c": 0.1}),
    ("nodim_lower", {"eps": 0.1, "p_c": 0.05}),
    ("dim_lower", {"d": 6, "eps": 1 / 128, "p_c": 1.0, "sigma": [1, -1, 1, 1]}),
    ("dim_lower", {"d": 10, "eps": 1 / 256, "p_c": 0.5, "sigma": [1] * 8}),
    ("dim_lower_patterns", {"d": 6, "eps": 1 / 128, "p_c": 1.0, "sigmas": [[1, 1, 1, 1], [-1, 1, -1, 1]]}),
    ("no_md_smooth", {"eps": 0.05}),
    ("uniform_posterior", {"c": 0.3}),
]


@pytest.mark.parametrize("name,params", BUNDLES)
def test_bundle_is_valid_and_consistent(name, params):
    bundle = build_construction(name, **params)
    dist = bundle.distribution
    # rebuilding from the pieces re-runs every validation
    assert build_distribution(dist.ambient_dimension, dist.pieces) == dist
    assert len(bundle.agents) == len(bundle.parameters) == len(bundle.rules)
    if bundle.family is not None:
        members = [cls for _, cls in enumerate_family(bundle.family)]
        for agent in bundle.agents:
            if isinstance(agent, ClassRestricted):
                assert agent.cls in members
    for agent, c in zip(bundle.agents, bundle.parameters):
        assert agent.c == c


@pytest.mark.parametrize("name,params", BUNDLES)
def test_stated_rules_rederive(name, params):
    bundle = build_construction(name, **params)
    dist = bundle.distribution
    tol = bundle.notes.get("threshold_tolerance", 1e-8)
    for agent, c, rule in zip(bundle.agents, bundle.parameters, bundle.rules):
        cls = agent.cls if isinstance(agent, ClassRestricted) else ThresholdClass(rule.score)
        b = optimal_threshold(dist, cls, c)
        if abs(b - rule.threshold) <= tol:
            continue
        # several thresholds can be optimal; then the stated one must do as well
        assert risk(dist, c, DecisionRule(rule.score, b)) == pytest.approx(risk(dist, c, rule), abs=1e-12)
        assert name == "no_uncertainty"


def test_band_examples():
    bundle = band_lower_bound(0.05, 1.0)
    assert [p.weight for p in bundle.distribution.pieces] == pytest.approx([0.4, 0.2, 0.4])
    assert bundle.parameters == pytest.approx((0.45, 0.55))
    assert density_floor(bundle.distribution, 0.45, 0.05) == pytest.approx((0.05, 0.05), abs=1e-12)
    with pytest.raises(ParameterRangeError):
        band_lower_bound(0.3, 1.0)


# eps below about 1e-9 makes the central segment numerically degenerate
@settings(max_examples=200, deadline=None)
@given(eps=st.one_of(st.floats(-0.1, 0), st.floats(1e-6, 0.4)), p_c=st.floats(-1, 12))
def test_band_guard_is_exact(eps, p_c):
    valid = 0 < eps < 0.25 and 0 < p_c <= 1 / (8 * eps)
    try:
        band_lower_bound(eps, p_c)
        built = True
    except ParameterRangeError:
        built = False
    assert built == valid


@settings(max_examples=100, deadline=None)
@given(eps=st.one_of(st.floats(-0.05, 0), st.floats(1e-6, 0.2)), p_c=st.floats(-0.05, 0.2))
def test_nodim_guard_is_exact(eps, p_c):
    valid = 0 < eps <= 1 / 8 and 0 < p_c <= 1 / 10
    try:
        nodim_lower(eps, p_c)
        built = True
    except ParameterRangeError:
        built = False
    assert built == valid


@settings(max_examples=100, deadline=None)
@given(delta_slack=st.floats(-0.5, 1.5), eps=st.one_of(st.floats(-0.1, 0), st.floats(1e-6, 0.4)))
def test_near_optimal_guard_is_exact(delta_slack, eps):
    valid = 0 < delta_slack <= 1 and 0 < eps < 0.25
    try:
        near_optimal_counterexample(delta_slack, eps)
        built = True
    except ParameterRangeError:
        built = False
    assert built == valid


def test_other_guards():
    for eps in (0.0, 0.1, -0.01):
        with pytest.raises(ParameterRangeError):
            no_md_smooth_instance(eps)
    no_md_smooth_instance(0.0999)
    for d in (5, 8, 2, 6.0):
        with pytest.raises(ParameterRangeError):
            dim_lower(d, 1e-3, 1.0, [1] * 4)
    limit = 1 / (64 * 2)
    dim_lower(6, limit, 1.0, [1] * 4)
    with pytest.raises(ParameterRangeError):
        dim_lower(6, limit * 1.0001, 1.0, [1] * 4)
    with pytest.raises(ParameterRangeError):
        dim_lower(6, limit, 1.5, [1] * 4)
    with pytest.raises(ParameterRangeError):
        dim_lower(6, limit, 1.0, [1, 0, 1, 1])
    with pytest.raises(ParameterRangeError):
        dim_lower(6, limit, 1.0, [1, 1, 1])
    with pytest.raises(ParameterRangeError):
        build_construction("no_such_construction")
    with pytest.raises(ParameterRangeError):
        build_construction("band_lower_bound", eps=0.1)


def test_no_uncertainty_examples():
    bundle = no_uncertainty_instance()
    dist = bundle.distribution
    assert not has_uncertainty(dist)
    for m in (1, 50, 2000):
        a, b = (generate_log(agent, dist, m, 11) for agent in bundle.agents)
        assert a.same_records(b)
        assert estimate_optimal(dist, a).interval == (0.0, 1.0)


def test_near_optimal_examples():
    eps, slack = 0.05, 1.0
    bundle = near_optimal_counterexample(slack, eps)
    dist = bundle.distribution
    excess = bundle.notes["excess_risk_c2"]
    assert 0 <= excess <= 4 * eps * slack <= slack
    a, b = (generate_log(agent, dist, 300, 2) for agent in bundle.agents)
    assert a.same_records(b)
    rule = bundle.rules[0]
    grid = np.linspace(0, 1, 201)
    best = min(risk(dist, bundle.parameters[0], DecisionRule(rule.score, t)) for t in grid)
    assert risk(dist, bundle.parameters[0], rule) <= best + 1e-12


def test_nodim_examples():
    eps, p_c = 1 / 16, 0.1
    bundle = nodim_lower(eps, p_c)
    assert bundle.parameters[1] == pytest.approx(2 / 3)
    for e in np.linspace(1e-3, 0.125, 40):
        assert (1 + 16 * e) / (2 + 16 * e) >= 0.5 + 2 * e - 1e-15
    dist = bundle.distribution
    r1, r2 = bundle.rules
    p1 = decision_moments(dist, r1)
    p2 = decision_moments(dist, r2)
    mass = (p1[(1, 0)] + p1[(1, 1)]) - (p2[(1, 0)] + p2[(1, 1)])
    target = 20 * p_c * eps**2
    assert abs(mass - target) <= 0.02 * target
    assert bundle.notes["disagreement_mass_rel_error"] <= 0.02
    # the rules only disagree on the upper segment below x1 = 2 eps
    xs = sample(dist, 5, 20000).xs
    differ = decide_rule(dist, r1, xs) != decide_rule(dist, r2, xs)
    assert np.all(xs[differ, 1] == 1.0)
    assert np.all((xs[differ, 0] >= 0) & (xs[differ, 0] < 2 * eps))


def test_sign_pattern_examples():
    classes = SigmaClasses(4, 1 / 128)
    assert classes.loss_parameter((1, 1, 1, 1)) == pytest.approx(5 / 8)
    assert classes.loss_parameter((1, -1, 1, -1)) == pytest.approx(0.5)
    assert len(classes) == 16 and len(list(classes.patterns())) == 16


def test_sign_pattern_band():
    eps, n = 1 / 128, 4
    half = 8 * eps * math.sqrt(n)
    classes = SigmaClasses(n, eps)
    a = DecisionRule(classes.class_for((1, 1, 1, 1)).score, 0.5)
    b = DecisionRule(classes.class_for((-1, 1, 1, 1)).score, 0.5)
    bundle = dim_lower(6, eps, 1.0, (1, 1, 1, 1))
    t = np.linspace(0, 1, 2001)
    xs = np.zeros((len(t), n + 1))
    xs[:, 0], xs[:, n] = 1.0, t
    differ = decide_rule(bundle.distribution, a, xs) != decide_rule(bundle.distribution, b, xs)
    assert differ.any()
    assert np.all(np.abs(t[differ] - 0.5) <= half + 1e-12)
    # other segments never notice the first sign
    xs[:, 0], xs[:, 1] = 0.0, 1.0
    assert np.array_equal(decide_rule(bundle.distribution, a, xs), decide_rule(bundle.distribution, b, xs))


def test_patterns_bundle():
    sigmas = [(1, 1, 1, 1), (-1, -1, 1, 1), (-1, -1, -1, -1)]
    bundle = dim_lower_patterns(6, 1 / 128, 1.0, sigmas)
    assert len(bundle.agents) == 3
    assert bundle.parameters == pytest.approx((5 / 8, 1 / 2, 3 / 8))
    with pytest.raises(ParameterRangeError):
        dim_lower_patterns(6, 1 / 128, 1.0, [sigmas[0], sigmas[0]])


def test_no_md_smooth_examples():
    bundle = no_md_smooth_instance(0.05)
    dist = bundle.distribution
    (_, h1), (_, h2) = bundle.family.classes
    r1, r2 = bundle.rules
    assert min_disagreement(dist, r1, ThresholdClass(h2.score, (0.0, 0.0))) <= 1e-12
    assert induced_posterior(dist, h1, (-0.5, -0.5)) == pytest.approx(1 / 3, abs=1e-6)
    assert md_smoothness_alpha(dist, bundle.family, "H1", 2 / 5) == UNBOUNDED
    a, b = (generate_log(agent, dist, 1000, 4) for agent in bundle.agents)
    assert a.same_records(b)


def test_registry_names():
    assert set(CONSTRUCTIONS) >= {
        "band_lower_bound",
        "no_uncertainty",
        "near_optimal",
        "nodim_lower",
        "dim_lower",
        "no_md_smooth",
    }
