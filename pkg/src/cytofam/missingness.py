"""Quadratic-logit missingness probability and its anchor-based calibration."""

from __future__ import annotations

import numpy as np
from scipy.special import expit, logit

from .model import ExpressionDataset, ModelError

DEFAULT_QUANTILES = (0.0, 0.25, 0.5)
DEFAULT_RHO = (0.05, 0.80, 0.05)


def rho(y, beta, i=None):
    """Missing probability ``expit(b0 + b1*y + b2*y**2)``.

    ``beta`` is either a length-3 coefficient vector or an ``(I, 3)`` array
    together with the sample index ``i`` (scalar or array, broadcast with y).
    """
    b = np.asarray(beta, dtype=float)
    if b.ndim == 2:
        b = b[i]
    y = np.asarray(y, dtype=float)
    return expit(b[..., 0] + b[..., 1] * y + b[..., 2] * y * y)


def log_rho(y, beta, i=None):
    b = np.asarray(beta, dtype=float)
    if b.ndim == 2:
        b = b[i]
    y = np.asarray(y, dtype=float)
    eta = b[..., 0] + b[..., 1] * y + b[..., 2] * y * y
    # log expit(x) = -log1p(exp(-x)), stable for both signs
    return -np.logaddexp(0.0, -eta)


def solve_beta(anchors) -> np.ndarray:
    """Coefficients whose logit quadratic passes through three (y, rho) points."""
    pts = np.asarray(anchors, dtype=float)
    if pts.shape != (3, 2):
        raise ModelError("need exactly three (y, rho) anchors")
    ys, rhos = pts[:, 0], pts[:, 1]
    if not np.all((rhos > 0) & (rhos < 1)):
        raise ModelError(f"anchor probabilities must lie in (0, 1), got {rhos.tolist()}")
    if len(np.unique(ys)) < 3:
        raise ModelError(f"anchor locations must be distinct, got {ys.tolist()}")
    A = np.vander(ys, 3, increasing=True)
    return np.linalg.solve(A, logit(rhos))


def empirical_beta(data: ExpressionDataset, i: int, q=DEFAULT_QUANTILES, rho_targets=DEFAULT_RHO) -> np.ndarray:
    """Anchor the curve at quantiles of the negative observed values of sample i."""
    y, m = data.sample_y(i), data.sample_m(i)
    neg = y[m & (np.nan_to_num(y, nan=0.0) < 0)]
    if len(np.unique(neg)) < 3:
        raise ModelError(f"sample {i} has fewer than 3 distinct negative observed values")
    anchors_y = np.quantile(neg, q, method="linear")
    return solve_beta(np.column_stack([anchors_y, rho_targets]))


def empirical_betas(data: ExpressionDataset, q=DEFAULT_QUANTILES, rho_targets=DEFAULT_RHO) -> np.ndarray:
    return np.array([empirical_beta(data, i, q, rho_targets) for i in range(data.I)])


def vertex(beta) -> np.ndarray:
    """Location of the extremum of the logit quadratic, ``-b1 / (2 b2)``."""
    b = np.atleast_2d(np.asarray(beta, dtype=float))
    with np.errstate(divide="ignore", invalid="ignore"):
        return -b[:, 1] / (2.0 * b[:, 2])
