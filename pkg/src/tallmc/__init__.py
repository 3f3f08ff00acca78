"""Subsampling pseudo-marginal MCMC for tall datasets.

The package estimates the log-likelihood from a small with-replacement
subsample (optionally variance-reduced by control variates), corrects the
likelihood-scale bias, and runs Metropolis-Hastings on the augmented
(parameter, subsample) space, with diagnostics that trade chain efficiency
against computing cost.
"""

from .diagnostics import (
    EfficiencyReport,
    compare_posteriors,
    efficiency_report,
    error_scaling_study,
    inefficiency_factor,
    ks_statistic,
)
from .engine import (
    EngineConfig,
    IMHProposal,
    PMChain,
    Trace,
    acceptance_simplification_check,
    choose_m_for_target_error,
    find_mode_and_curvature,
    run_chain,
    rwm_propose,
)
from .errors import TallMCError
from .estimator import (
    CheapVariates,
    ExactVariates,
    LogLikEstimate,
    SignSplit,
    Term,
    ZeroVariates,
    adaptive_sample_size,
    bias_corrected_loglik,
    estimate_loglik,
    estimate_variance,
    sign_split,
)
from .sampling import (
    CorrelationParams,
    Subsample,
    draw_indicators,
    draw_pps,
    draw_srs,
    kappa_from_phi,
    propose_correlated_indicators,
    propose_infrequent,
)
from .surface import SurfaceFit, SurfaceVariates, fit_surface, predict_surface
from .variates import (
    CentroidSummary,
    ClusterSet,
    GLMSpec,
    Standardizer,
    TaylorVariates,
    bernoulli_logit_glm,
    cluster_epsilon_ball,
    glm_data_gradient_hessian,
    normal_glm,
    pps_weights,
    precompute_centroid_statistics,
    proxy_total,
    taylor_proxy,
)

__version__ = "0.1.0"
