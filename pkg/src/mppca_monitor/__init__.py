"""Mixture-of-PPCA process monitoring with composite statistics and KDE thresholds."""

from .mixture import (
    MixtureParams,
    TrainingConfig,
    TrainingReport,
    choose_q,
    em_fit,
    entropy_criterion,
    initialize,
    mixture_log_likelihood,
    responsibilities,
    select_k,
)
from .ppca import PosteriorMoments, PpcaParams, fit_ppca_closed_form, log_density, log_likelihood, model_covariance, posterior_moments

__version__ = "0.1.0"
