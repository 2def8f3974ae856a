"""Bayesian feature allocation model for multi-sample cytometry data."""

from .mcmc import ChainConfig, PosteriorTrace, init_state, run_chain
from .missingness import empirical_beta, empirical_betas, rho, solve_beta
from .model import ExpressionDataset, Hyperparams, ModelError, ModelState, RawDataset, preprocess, transform

__all__ = [
    "ChainConfig", "ExpressionDataset", "Hyperparams", "ModelError", "ModelState", "PosteriorTrace",
    "RawDataset", "empirical_beta", "empirical_betas", "init_state", "preprocess", "rho", "run_chain",
    "solve_beta", "transform",
]
