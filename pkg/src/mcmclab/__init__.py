"""mcmclab: MCMC sampling engine and benchmark harness.

Samplers (RWM, Gibbs/MwG, MALA, HMC, NUTS), efficiency diagnostics
(ESS, split R-hat, ESJD, batch-means asymptotic variance), warmup
adaptation and ESS-driven tuning, surrogate delayed acceptance, a
mixture independence proposal for multimodal targets, and an
algorithm-selection advisor.
"""

__version__ = "0.1.0"

from .core import (
    ChainRecord,
    ChainState,
    CountingTarget,
    RngStream,
    StepInfo,
    accept_or_reject,
    discrete_stationarity_oracle,
    make_state,
    mh_accept_log_prob,
    run_chain,
)
from .targets import (
    TargetDensity,
    build_target,
    fd_gradient_check,
    make_ar1_gaussian,
    make_banana,
    make_bimodal_mixture,
    make_funnel,
    make_standard_gaussian,
)
from .classic import (
    FullConditionalSet,
    MwgConditional,
    RwmConfig,
    funnel_fcds,
    gaussian_fcd,
    gaussian_fcds,
    gibbs_step,
    mh_step,
    mwg_fcds,
    rwm_step,
)
from .gradient import (
    HmcConfig,
    LeapfrogResult,
    NutsConfig,
    PhasePoint,
    hamiltonian,
    hmc_step,
    leapfrog,
    mala_step,
    nuts_step,
    uturn_triggered,
)
from .adaptation import (
    DualAveragingState,
    TuningJob,
    adaptive_warmup,
    dual_averaging_update,
    estimate_mass_diag,
    find_reasonable_epsilon,
    init_dual_averaging,
    tune_by_ess,
)
from .ai_augment import (
    MixtureProposal,
    SurrogateModel,
    delayed_acceptance_step,
    fit_gmm,
    fit_surrogate,
    independence_proposal_step,
    refine_surrogate,
    surrogate_predict,
)
from .diagnostics import (
    DiagnosticsReport,
    autocorrelation,
    batch_means_variance,
    build_report,
    esjd,
    ess,
    gelman_rubin,
)
from .advisor import ProblemProfile, Recommendation, predict_iteration_cost, recommend
