"""Regressors mapping feature vectors to degradation-mode fractions."""

from .fnn import WeightedFNNRegressor, fit_fnn, loss_and_gradients, weighted_rmse_loss
from .linear import ElasticNetRegression, MultipleLinearRegression, fit_enr, fit_mlr
from .persistence import load_model, save_model
from .sgpr import SparseGPRegressor, fit_sgpr
from .svr import EpsilonSVR, fit_svr

__all__ = [
    "ElasticNetRegression", "EpsilonSVR", "MultipleLinearRegression", "SparseGPRegressor",
    "WeightedFNNRegressor", "fit_enr", "fit_fnn", "fit_mlr", "fit_sgpr", "fit_svr",
    "load_model", "loss_and_gradients", "save_model", "weighted_rmse_loss",
]
