"""chest: MIMO channel estimation with mixture-of-experts diffusion priors.

The package provides synthetic multi-environment channel data, diffusion
machinery with a lightweight trained denoiser, analytic reference priors,
classical baselines, posterior-sampling estimators, and a variational loop
that selects the right expert prior directly from received pilots.
"""

from .numerics import RngStream, sample_standard_complex_gaussian, svd, cholesky_sample
from .channelgen import (
    ChannelModelSpec,
    Dataset,
    MeasurementSetup,
    generate_dataset,
    make_pilots,
    simulate_measurement,
    snr_to_noise_var,
    nmse,
    nmse_db,
    save_dataset,
    load_dataset,
)
from .diffusion import (
    NoiseSchedule,
    linear_schedule,
    forward_sample,
    score_from_epsilon,
    reverse_generative_step,
)
from .denoiser import DenoiserNetwork, AdamOptimizer, time_embedding, film_modulate
from .experts import (
    ScorePrior,
    AnalyticGaussianPrior,
    AnalyticGMMPrior,
    DenoiserPrior,
    train_expert,
    log_prior_elbo,
    refine_estimate,
    subsample_steps,
    save_expert_weights,
    load_expert_weights,
)
from .estimators import (
    EstimatorReport,
    rls_estimate,
    lasso_ista,
    lasso_lambda_max,
    likelihood_score,
    posterior_score,
    deterministic_dm_estimate,
    annealed_langevin_estimate,
    expected_log_pi,
    data_consistency_loglik,
    update_qz,
    update_qpi,
    dmvb_estimate,
)
from .api import (
    DiffusionExpert,
    RLSChannelEstimator,
    LassoChannelEstimator,
    DiffusionChannelEstimator,
    LangevinChannelEstimator,
    DMVBChannelEstimator,
)

__version__ = "0.1.0"
