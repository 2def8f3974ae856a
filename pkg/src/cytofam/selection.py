"""LPML, DIC and the negligible-weight calibration count used to choose K."""

from __future__ import annotations

import csv
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .estimate import salso_select
from .missingness import log_rho
from .model import ExpressionDataset, ModelError, log_normal_pdf, logsumexp


def _cell_loglik(data: ExpressionDataset, beta, y, mu, var) -> np.ndarray:
    """log f(m_n, y_n | theta) per cell; ``var`` is per cell."""
    ll = log_normal_pdf(y, mu, np.asarray(var)[:, None]).sum(axis=1)
    miss = np.where(~data.m, log_rho(y, beta, data.sample[:, None]), 0.0)
    return ll + miss.sum(axis=1)


def _draw_parts(draw, data, s2_eps):
    var = np.where(draw.lam > 0, draw.sigma2[data.sample], s2_eps)
    return draw.completed_y(data), draw.mu(), var


def draw_logliks(trace, data, beta=None) -> np.ndarray:
    """Per-draw, per-cell log likelihood, shape (B, N)."""
    if len(trace.draws) == 0:
        raise ModelError("trace has no draws")
    beta = trace.beta if beta is None else np.asarray(beta, dtype=float)
    s2 = trace.hyper.s2_eps
    return np.stack([_cell_loglik(data, beta, *_draw_parts(d, data, s2)) for d in trace.draws])


def log_cpo(trace, data, beta=None) -> np.ndarray:
    """log CPO per cell: minus the log of the mean inverse likelihood over draws."""
    ll = draw_logliks(trace, data, beta)
    with np.errstate(invalid="ignore"):
        return -(logsumexp(-ll, axis=0) - np.log(ll.shape[0]))


def lpml(trace, data, beta=None) -> float:
    lc = log_cpo(trace, data, beta)
    bad = np.flatnonzero(~np.isfinite(lc))
    if len(bad):
        warnings.warn(f"cell {bad[0]} has zero likelihood; LPML is -inf", RuntimeWarning, stacklevel=2)
        return -np.inf
    return float(lc.sum())


@dataclass(frozen=True)
class DICResult:
    dbar: float  # posterior mean deviance
    dhat: float  # deviance at the posterior means
    p_d: float  # dbar - dhat (effective number of parameters), used for K selection
    standard: float  # 2 dbar - dhat


def dic(trace, data, beta=None) -> DICResult:
    beta = trace.beta if beta is None else np.asarray(beta, dtype=float)
    ll = draw_logliks(trace, data, beta)
    dbar = float(np.mean(-2.0 * ll.sum(axis=1)))
    s2 = trace.hyper.s2_eps
    y_bar = mu_bar = var_bar = 0.0
    for d in trace.draws:
        y, mu, var = _draw_parts(d, data, s2)
        y_bar = y_bar + y
        mu_bar = mu_bar + mu
        var_bar = var_bar + var
    B = len(trace.draws)
    dhat = float(-2.0 * _cell_loglik(data, beta, y_bar / B, mu_bar / B, var_bar / B).sum())
    if not (np.isfinite(dbar) and np.isfinite(dhat)):
        bad = np.flatnonzero(~np.isfinite(ll).all(axis=0))
        where = f" (cell {bad[0]})" if len(bad) else ""
        warnings.warn(f"non-finite deviance{where}", RuntimeWarning, stacklevel=2)
    return DICResult(dbar, dhat, dbar - dhat, 2.0 * dbar - dhat)


@dataclass(frozen=True)
class Calibration:
    count: int  # negligible weights in the point estimates
    per_draw: np.ndarray  # negligible weights in each retained draw


def calibration_metric(trace, threshold: float = 0.01) -> Calibration:
    """Number of (sample, subpopulation) pairs whose weight is below ``threshold``."""
    est = salso_select(trace)
    count = int(sum((e.w < threshold).sum() for e in est))
    per_draw = np.array([(d.w < threshold).sum() for d in trace.draws], dtype=int)
    return Calibration(count, per_draw)


@dataclass(frozen=True)
class GridRow:
    K: int
    lpml: float
    dic: float  # dbar - dhat
    dic_standard: float
    calibration: int


def summarize_fit(trace, data, beta=None, threshold: float = 0.01) -> GridRow:
    dr = dic(trace, data, beta)
    return GridRow(trace.hyper.K, lpml(trace, data, beta), dr.p_d, dr.standard,
                   calibration_metric(trace, threshold).count)


@dataclass
class KGridReport:
    rows: list

    @property
    def K(self) -> np.ndarray:
        return np.array([r.K for r in self.rows])

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    def elbow_series(self):
        """(calibration counts, LPML) pairs in K order, for the elbow plot."""
        return self.column("calibration"), self.column("lpml")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(GridRow.__dataclass_fields__))
            writer.writeheader()
            for r in self.rows:
                writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in asdict(r).items()})

    def to_text(self) -> str:
        lines = [f"{'K':>4} {'LPML':>14} {'DIC':>14} {'DIC(2Dbar-Dhat)':>16} {'negligible':>10}"]
        for r in self.rows:
            lines.append(f"{r.K:>4d} {r.lpml:>14.2f} {r.dic:>14.2f} {r.dic_standard:>16.2f} {r.calibration:>10d}")
        return "\n".join(lines) + "\n"


def k_grid_report(fits, data=None, beta=None, threshold: float = 0.01) -> KGridReport:
    """One row per K, ascending.

    ``fits`` is either a mapping K -> trace (``data`` required) or an
    iterable of precomputed GridRow objects.
    """
    if isinstance(fits, dict):
        if data is None:
            raise ModelError("data is needed to score traces")
        rows = [summarize_fit(t, data, beta, threshold) for t in fits.values()]
    else:
        rows = list(fits)
    if not rows:
        raise ModelError("empty K grid")
    Ks = [r.K for r in rows]
    if len(set(Ks)) != len(Ks):
        raise ModelError("duplicate K in grid")
    return KGridReport(sorted(rows, key=lambda r: r.K))
