"""LASSO estimation and price transforms."""

from .lasso import (
    ConvergenceError,
    LarsPath,
    LassoFit,
    RegressionError,
    Standardizer,
    fit_lasso_aic,
    fit_lasso_cd,
    lars_lambda_by_aic,
    lars_path,
)
from .transforms import AsinhScaler, ScaleError, asinh_transform, inverse_asinh_transform

__all__ = [
    "AsinhScaler",
    "ConvergenceError",
    "LarsPath",
    "LassoFit",
    "RegressionError",
    "ScaleError",
    "Standardizer",
    "asinh_transform",
    "fit_lasso_aic",
    "fit_lasso_cd",
    "inverse_asinh_transform",
    "lars_lambda_by_aic",
    "lars_path",
]
