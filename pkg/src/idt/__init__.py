"""Inverse decision theory: recovering loss parameters from observed decisions."""

from .agents import (
    AttributeMap,
    ClassRestricted,
    DecisionLog,
    FamilyMember,
    GroupWise,
    OptimalBayes,
    Surrogate,
    SurrogateMinimizer,
    decide,
    generate_log,
    pointwise_surrogate_argmin,
)
from .analytic import cost_risk, density_floor, risk
from .classes import (
    Affine,
    DecisionRule,
    Explicit,
    FeatureSubsets,
    SubsetPosterior,
    ThresholdClass,
    bayes_score,
)
from .distribution import (
    AffinePosterior,
    CostMatrix,
    Piece,
    PiecewiseDistribution,
    PointMass,
    Rect,
    Segment,
    build_distribution,
    has_uncertainty,
    normalize_cost_matrix,
    posterior,
    sample,
)
from .constructions import (
    ConstructionBundle,
    band_lower_bound,
    build_construction,
    dim_lower,
    near_optimal_counterexample,
    no_md_smooth_instance,
    no_uncertainty_instance,
    nodim_lower,
)
from .errors import EstimationError, IDTError, ValidationError
from .estimators import (
    EstimateResult,
    FairnessReport,
    audit_fairness,
    estimate_known_class,
    estimate_optimal,
    estimate_unknown_family,
)
from .harness import TrialConfig, TrialReport, rate_curve, run_trials
from .hypothesis import (
    check_monotone,
    induced_posterior,
    induced_posterior_many,
    md_smoothness_alpha,
    min_disagreement,
    optimal_in_class,
    optimal_threshold,
)

__version__ = "0.1.0"
