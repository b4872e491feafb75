"""Conjugate Bayesian inference with unified skew-normal posteriors."""

from .approximations import EpState, VbState, ep, ep_scalable, mf_vb, pfm_vb
from .config import CONFIG, EngineConfig
from .conjugate import (
    PosteriorBundle,
    log_marginal_likelihood,
    log_predictive,
    update,
    update_gaussian_block,
)
from .errors import *  # noqa: F401,F403
from .model_builders import (
    Dataset,
    UnifiedLikelihood,
    build_gp,
    build_linear,
    build_multinomial_probit,
    build_multivariate_probit,
    build_probit,
    build_probit_threshold,
    build_sn_linear,
    build_sn_probit,
    build_sn_tobit,
    build_tobit,
    concat_likelihoods,
    log_likelihood,
    make_likelihood,
)
from .mvn_kernel import (
    McdfResult,
    TnMoments,
    TruncNormalSpec,
    mvn_cdf,
    mvn_cdf_shifted,
    sample_tmvn,
    tn_moments,
)
from .samplers import ChainOutput, effective_sample_size, gibbs, iid
from .sun_core import (
    SunParams,
    SunSample,
    params_allclose,
    sun_cdf,
    sun_linear,
    sun_log_density,
    sun_marginal,
    sun_mgf,
    sun_moments,
    sun_sample,
)

__version__ = "0.1.0"
