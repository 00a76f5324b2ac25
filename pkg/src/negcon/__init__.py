"""Contagion effects in dyadic network data, adjusted for homophily bias
with a negative control exposure.

The workflow is two-step: fit the nameship (who-names-whom) model by
truncated maximum likelihood, then regress the ego's outcome within each
nameship type on the exposure, covariates and the fitted probabilities of
the other nameship types. A stacked sandwich covariance carries first-step
uncertainty into the outcome coefficients.
"""

__version__ = "0.1.0"

from .core import (
    AnalysisFrame,
    DyadRecord,
    Frames,
    ModelConfig,
    NameshipType,
    build_frames,
    classify_nameship,
    decode_nameship,
    read_csv,
    write_csv,
)
from .inference import SandwichCov, estimating_function, jacobian_fd, sandwich_cov
from .nameship import (
    MleReport,
    NameshipParams,
    category_probs,
    fit_nameship,
    joint_prob,
    log_likelihood,
    score,
    truncated_prob,
)
from .outcome import (
    OutcomeFit,
    WaldResult,
    contagion_effect,
    fit_additive,
    fit_adjusted,
    fit_multiplicative,
    fit_naive,
    homophily_wald_test,
    stage2_design,
)
from .montecarlo import MonteCarloResult, monte_carlo
from .pipeline import TwoStepResult, bootstrap, two_step
from .simulation import (
    SimConfig,
    SimOutput,
    example_config,
    oracle_conditional_mean,
    simulate,
    tilted_normal_check,
)

__all__ = [
    "AnalysisFrame", "DyadRecord", "Frames", "ModelConfig", "NameshipType", "build_frames",
    "classify_nameship", "decode_nameship", "read_csv", "write_csv", "SandwichCov",
    "estimating_function", "jacobian_fd", "sandwich_cov", "MleReport", "NameshipParams",
    "category_probs", "fit_nameship", "joint_prob", "log_likelihood", "score", "truncated_prob",
    "OutcomeFit", "WaldResult", "contagion_effect", "fit_additive", "fit_adjusted", "fit_multiplicative",
    "fit_naive", "homophily_wald_test", "stage2_design", "MonteCarloResult", "monte_carlo",
    "TwoStepResult", "bootstrap", "two_step", "SimConfig", "SimOutput", "example_config",
    "oracle_conditional_mean", "simulate",
    "tilted_normal_check",
]
