"""Point estimates of (Z, w, lambda) picked from the posterior draws."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .model import ModelError


def pairwise_allocation(Z, w) -> np.ndarray:
    """``A[j, j'] = sum_k w_k z_jk z_j'k`` for one sample's weights ``w``."""
    Z = np.asarray(Z, dtype=float)
    return (Z * np.asarray(w, dtype=float)) @ Z.T


def allocation_stack(trace) -> np.ndarray:
    """Pairwise allocation matrices of every draw and sample, shape (B, I, J, J)."""
    Z = np.stack([d.Z for d in trace.draws]).astype(float)  # (B, J, K)
    w = np.stack([d.w for d in trace.draws])  # (B, I, K)
    return np.einsum("bjk,bik,blk->bijl", Z, w, Z)


def mean_allocation(trace) -> np.ndarray:
    """Posterior mean allocation matrix per sample, shape (I, J, J)."""
    if len(trace.draws) == 0:
        raise ModelError("trace has no draws")
    return allocation_stack(trace).mean(axis=0)


def salso_losses(trace) -> np.ndarray:
    """Squared distance of each draw's allocation matrix to the mean, shape (B, I)."""
    A = allocation_stack(trace)
    return ((A - A.mean(axis=0)) ** 2).sum(axis=(2, 3))


@dataclass
class PointEstimate:
    sample: int
    draw: int  # 0-based index into the trace
    Z: np.ndarray  # (J, K)
    w: np.ndarray  # (K,)
    lam: np.ndarray  # (N_i,) or (N,) when sample sizes are unknown
    loss: float


def salso_select(trace, sizes=None) -> list[PointEstimate]:
    """Per sample, the draw minimising the allocation-matrix loss (lowest index on ties)."""
    if len(trace.draws) == 0:
        raise ModelError("cannot select a point estimate from an empty trace")
    losses = salso_losses(trace)
    sizes = getattr(trace, "sizes", None) if sizes is None else sizes
    offsets = None if sizes is None else np.concatenate([[0], np.cumsum(sizes)])
    out = []
    for i in range(losses.shape[1]):
        b = int(np.argmin(losses[:, i]))
        d = trace.draws[b]
        lam = d.lam if offsets is None else d.lam[offsets[i]:offsets[i + 1]]
        out.append(PointEstimate(i, b, d.Z.copy(), d.w[i].copy(), lam.copy(), float(losses[b, i])))
    return out


def filter_columns(Z, w, min_weight: float = 0.01):
    """Drop columns whose weight is below ``min_weight``; weights are not renormalised.

    Returns (Z', w', kept column indices).
    """
    w = np.asarray(w, dtype=float)
    keep = np.flatnonzero(w >= min_weight)
    return np.asarray(Z)[:, keep], w[keep], keep


def match_columns(Z_hat, Z_true):
    """Match columns of ``Z_hat`` to ``Z_true`` minimising total Hamming distance.

    Returns (est_idx, true_idx, distances) for the matched pairs.
    """
    Z_hat, Z_true = np.asarray(Z_hat, dtype=int), np.asarray(Z_true, dtype=int)
    cost = (Z_hat[:, :, None] != Z_true[:, None, :]).sum(axis=0)
    r, c = linear_sum_assignment(cost)
    return r, c, cost[r, c]
