"""Variance-reduced recursive estimation toolkit.

Recursive estimators (momentum, differential, and second-order corrected)
with reset schedules, their closed-form high-probability error envelopes,
mirror-descent and switching-gradient optimizers built on them, and a
Monte-Carlo harness that verifies the envelopes and the underlying vector
martingale tail bound on synthetic oracles.
"""

from .bounds import (
    BoundEnvelope,
    NoEnvelope,
    ParamSelection,
    confidence_factor,
    envelope,
    min_horizon,
    select_params_case1,
    select_params_case23,
)
from .estimator import (
    FAMILIES,
    FAMILY_FIRST,
    FAMILY_SECOND,
    FAMILY_ZEROTH,
    EstimatorConfig,
    Schedule,
    correction_term,
    estimator_init,
    estimator_step,
    run_estimation_trajectory,
)
from .geometry import GeometrySpec, box, bregman, dual_norm, euclidean, primal_norm, prox_map, prox_step, simplex
from .oracles import (
    ConstrainedLinear,
    FiniteSum,
    LinearGaussian,
    NoisyQuadratic,
    OracleSample,
    ProblemConstants,
    draw_sample,
    subgaussian_std_for_proxy,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
