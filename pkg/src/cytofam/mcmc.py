"""Gibbs / Metropolis-within-Gibbs sampler for the feature allocation model.

Every update is split into a ``*_conditional`` function that returns the
parameters (or log-probabilities) of its full conditional and an
``update_*`` function that draws from it. The split lets tests compare each
conditional against ratios of the joint posterior.

The Z, lambda and missing-y conditionals integrate the mixture indicators
gamma out; gamma is redrawn right after the missing values, so the scan is
a valid partially collapsed Gibbs sampler.
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import expit, gammaln
from sklearn.cluster import KMeans
from sklearn.exceptions import ConvergenceWarning

from .missingness import log_rho, vertex
from .model import (
    ExpressionDataset,
    Hyperparams,
    ModelError,
    ModelState,
    cell_means,
    log_normal_pdf,
    logsumexp,
)

log = logging.getLogger(__name__)

UPDATE_ORDER = ("y", "gamma", "delta", "sigma2", "eta", "v", "Z", "alpha", "lambda", "w", "eps")

_TINY = np.finfo(float).tiny
_BELOW_ONE = np.nextafter(1.0, 0.0)


class ChainAbort(RuntimeError):
    def __init__(self, iteration: int, message: str):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration


@dataclass(frozen=True)
class ChainConfig:
    n_iter: int = 4000
    burn_in: int = 1000
    thin: int = 2
    seed: int = 0
    proposal_sd: float = 0.5
    fixed: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if not 0 <= self.burn_in < self.n_iter:
            raise ModelError("burn-in must be smaller than the total number of iterations")
        if self.thin < 1:
            raise ModelError("thinning stride must be at least 1")
        if not self.proposal_sd > 0:
            raise ModelError("proposal sd must be positive")
        unknown = set(self.fixed) - set(UPDATE_ORDER)
        if unknown:
            raise ModelError(f"unknown parameters to fix: {sorted(unknown)}")
        object.__setattr__(self, "fixed", frozenset(self.fixed))

    @property
    def n_draws(self) -> int:
        return -(-(self.n_iter - self.burn_in) // self.thin)


# ---------------------------------------------------------------------------
# random variate helpers


def _log_gamma_draw(shape, rng):
    """log of Gamma(shape, 1) draws, finite even when the draw underflows."""
    shape = np.asarray(shape, dtype=float)
    g = rng.gamma(shape + 1.0)
    u = rng.random(shape.shape)
    return np.log(g) + np.log(u) / shape


def _beta_draw(a, b, rng):
    la = _log_gamma_draw(a, rng)
    lb = _log_gamma_draw(b, rng)
    return np.clip(np.exp(la - np.logaddexp(la, lb)), _TINY, _BELOW_ONE)


def _dirichlet_draw(alpha, rng):
    lg = _log_gamma_draw(alpha, rng)
    return np.exp(lg - logsumexp(lg, axis=-1, keepdims=True))


def _categorical_draw(log_p, rng, axis=-1):
    """One draw per slice of normalised log-probabilities along ``axis``."""
    cdf = np.cumsum(np.exp(log_p), axis=axis)
    total = np.take(cdf, [-1], axis=axis)
    u = np.expand_dims(rng.random(np.delete(log_p.shape, axis % log_p.ndim)), axis) * total
    return np.minimum((cdf < u).sum(axis=axis), log_p.shape[axis] - 1)


# ---------------------------------------------------------------------------
# shared likelihood pieces


def component_terms(state: ModelState, data: ExpressionDataset, z: int) -> np.ndarray:
    """``log eta^z_{i,j,l} + log N(y | mu*_{z,l}, sigma2_i)`` with shape (L_z, N, J).

    The component axis comes first so reductions over it are elementwise.
    """
    with np.errstate(divide="ignore"):
        log_eta = np.log(np.moveaxis(state.eta(z), -1, 0))[:, data.sample]
    var = state.sigma2[data.sample][:, None]
    return log_eta + log_normal_pdf(state.y, state.mu_star(z)[:, None, None], var)


def log_mixtures(state, data, terms=None):
    """Per-entry log mixture densities (log F^0, log F^1), each (N, J)."""
    if terms is None:
        terms = (component_terms(state, data, 0), component_terms(state, data, 1))
    return logsumexp(terms[0], axis=0), logsumexp(terms[1], axis=0)


def _z_of_entries(state: ModelState) -> np.ndarray:
    """z_{j, lambda_n} per entry (N, J); rows of noisy cells are arbitrary."""
    return state.Z[:, np.maximum(state.lam - 1, 0)].T


# ---------------------------------------------------------------------------
# full conditionals


def v_conditional(state, hyper):
    J, K = state.Z.shape
    col = state.Z.sum(axis=0)
    return state.alpha / K + col, J + 1.0 - col


def update_v(state, hyper, rng):
    a, b = v_conditional(state, hyper)
    return _beta_draw(a, b, rng)


def Z_log_odds(state, hyper, data, logF=None):
    """log P(z_jk=1 | rest) - log P(z_jk=0 | rest), shape (J, K)."""
    logF0, logF1 = log_mixtures(state, data) if logF is None else logF
    K = state.Z.shape[1]
    onehot = (state.lam[:, None] == np.arange(1, K + 1)).astype(float)
    D = (logF1 - logF0).T @ onehot
    with np.errstate(divide="ignore"):
        return np.log(state.v) - np.log1p(-state.v) + D


def update_Z(state, hyper, data, rng, logF=None):
    p = expit(Z_log_odds(state, hyper, data, logF))
    return (rng.random(p.shape) < p).astype(np.int8)


def alpha_conditional(state, hyper):
    """(shape, rate) of the Gamma full conditional."""
    if np.any(state.v <= 0):
        raise ModelError("v contains zeros; log v diverges")
    K = state.Z.shape[1]
    return hyper.a_alpha + K, hyper.b_alpha - np.log(state.v).sum() / K


def update_alpha(state, hyper, rng):
    shape, rate = alpha_conditional(state, hyper)
    return max(rng.gamma(shape) / rate, _TINY)


def lambda_log_probs(state, hyper, data, logF=None):
    """Normalised log P(lambda_n = k | rest) for k = 0..K, shape (N, K+1)."""
    logF0, logF1 = log_mixtures(state, data) if logF is None else logF
    s = data.sample
    with np.errstate(divide="ignore"):
        lp0 = np.log(state.eps[s]) + log_normal_pdf(state.y, 0.0, hyper.s2_eps).sum(axis=1)
        lpk = (np.log1p(-state.eps[s])[:, None] + np.log(state.w[s])
               + logF0.sum(axis=1)[:, None] + (logF1 - logF0) @ state.Z.astype(float))
    lp = np.column_stack([lp0, lpk])
    return lp - logsumexp(lp, axis=1, keepdims=True)


def update_lambda(state, hyper, data, rng, logF=None):
    return _categorical_draw(lambda_log_probs(state, hyper, data, logF), rng)


def _lambda_counts(state, data, K):
    idx = data.sample * (K + 1) + state.lam
    return np.bincount(idx, minlength=data.I * (K + 1)).reshape(data.I, K + 1)


def w_conditional(state, hyper, data):
    K = state.Z.shape[1]
    return hyper.d / K + _lambda_counts(state, data, K)[:, 1:]


def update_w(state, hyper, data, rng):
    return _dirichlet_draw(w_conditional(state, hyper, data), rng)


def gamma_log_probs(state, hyper, data, terms=None, logF=None):
    """Normalised log P(gamma_nj = l | rest) with shape (max(L0, L1), N, J).

    The shorter mixture is padded with -inf; slices of noisy cells are unused.
    """
    if terms is None:
        terms = (component_terms(state, data, 0), component_terms(state, data, 1))
    if logF is None:
        logF = log_mixtures(state, data, terms)
    z = _z_of_entries(state) == 1
    Lmax = max(hyper.L0, hyper.L1)
    out = np.full((Lmax,) + z.shape, -np.inf)
    for zz, t, lf in ((0, terms[0], logF[0]), (1, terms[1], logF[1])):
        sel = z if zz else ~z
        out[: t.shape[0]] = np.where(sel, t - lf, out[: t.shape[0]])
    return out


def update_gamma(state, hyper, data, rng, terms=None, index=None, logF=None):
    """Draw gamma for every entry, or only for the entries in ``index`` = (n, j)."""
    if index is None:
        lp = gamma_log_probs(state, hyper, data, terms, logF)
        g = _categorical_draw(lp, rng, axis=0).astype(np.int8)
        g[state.lam == 0] = 0
        return g
    n, j = index
    g = state.gam.copy()
    if len(n) == 0:
        return g
    s = data.sample[n]
    z = state.Z[j, np.maximum(state.lam[n] - 1, 0)]
    var = state.sigma2[s][:, None]
    x = state.y[n, j][:, None]
    Lmax = max(hyper.L0, hyper.L1)
    lp = np.full((len(n), Lmax), -np.inf)
    with np.errstate(divide="ignore"):
        for zz in (0, 1):
            sel = z == zz
            L = hyper.L(zz)
            lp[sel, :L] = np.log(state.eta(zz)[s[sel], j[sel]]) + log_normal_pdf(x[sel], state.mu_star(zz), var[sel])
    lp -= logsumexp(lp, axis=-1, keepdims=True)
    new = _categorical_draw(lp, rng).astype(np.int8)
    g[n, j] = np.where(state.lam[n] > 0, new, 0)
    return g


def _delta_stats(state, data, z, sel=None):
    """Per-component sums (sum prec, sum prec * signed y) of entries informing delta_z."""
    if sel is None:
        sel = (state.lam > 0)[:, None] & (_z_of_entries(state) == z)
    L = len(state.delta1 if z else state.delta0)
    g = state.gam[sel].astype(np.intp)
    yv = state.y[sel] if z else -state.y[sel]
    prec = 1.0 / np.broadcast_to(state.sigma2[data.sample][:, None], sel.shape)[sel]
    return np.bincount(g, weights=prec, minlength=L), np.bincount(g, weights=prec * yv, minlength=L)


def _delta_moments(d, ell, P, PY, psi, tau2):
    # sum over entries with gamma >= ell of prec * (y - sum_{r <= gamma, r != ell} delta_r)
    cum = np.cumsum(d)
    P_tail = P[ell:].sum()
    num = PY[ell:].sum() - (P[ell:] * cum[ell:]).sum() + d[ell] * P_tail
    denom = 1.0 + tau2 * P_tail
    return (psi + tau2 * num) / denom, tau2 / denom


def delta_conditional(state, hyper, data, z, ell, sel=None):
    """(mean, variance) of the TN+ full conditional of delta_{z, ell} (0-based ell)."""
    d = state.delta1 if z else state.delta0
    psi, tau2 = (hyper.psi1, hyper.tau2_1) if z else (hyper.psi0, hyper.tau2_0)
    return _delta_moments(d, ell, *_delta_stats(state, data, z, sel), psi, tau2)


def _tn_plus_draw(mean, var, rng):
    sd = np.sqrt(var)
    x = stats.truncnorm.rvs(-mean / sd, np.inf, loc=mean, scale=sd, random_state=rng)
    return max(float(x), _TINY)


def update_delta(state, hyper, data, rng):
    """Sequential draws of every delta_{z,l}; returns (delta0, delta1)."""
    out = []
    for z in (0, 1):
        d = (state.delta1 if z else state.delta0).copy()
        psi, tau2 = (hyper.psi1, hyper.tau2_1) if z else (hyper.psi0, hyper.tau2_0)
        P, PY = _delta_stats(state, data, z)
        for ell in range(len(d)):
            d[ell] = _tn_plus_draw(*_delta_moments(d, ell, P, PY, psi, tau2), rng)
        out.append(d)
    return out[0], out[1]


def sigma2_conditional(state, hyper, data):
    """(shape, scale) of the inverse-gamma full conditionals, one per sample."""
    active = state.lam > 0
    resid2 = np.where(active[:, None], (state.y - state.mu()) ** 2, 0.0).sum(axis=1)
    R = np.bincount(data.sample, weights=active * data.J, minlength=data.I)
    SS = np.bincount(data.sample, weights=resid2, minlength=data.I)
    return hyper.a_sigma + R / 2.0, hyper.b_sigma + SS / 2.0


def update_sigma2(state, hyper, data, rng):
    shape, scale = sigma2_conditional(state, hyper, data)
    return scale / rng.gamma(shape)


def eta_conditional(state, hyper, data):
    """Dirichlet parameters (I, J, L0) and (I, J, L1)."""
    z_ent = _z_of_entries(state)
    active = (state.lam > 0)[:, None]
    jj = np.broadcast_to(np.arange(data.J), state.y.shape)
    ss = np.broadcast_to(data.sample[:, None], state.y.shape)
    out = []
    for z, L, a in ((0, hyper.L0, hyper.a_eta0), (1, hyper.L1, hyper.a_eta1)):
        sel = active & (z_ent == z)
        idx = (ss[sel] * data.J + jj[sel]) * L + state.gam[sel].astype(np.intp)
        counts = np.bincount(idx, minlength=data.I * data.J * L).reshape(data.I, data.J, L)
        out.append(a / L + counts)
    return out[0], out[1]


def update_eta(state, hyper, data, rng):
    a0, a1 = eta_conditional(state, hyper, data)
    return _dirichlet_draw(a0, rng), _dirichlet_draw(a1, rng)


def eps_conditional(state, hyper, data):
    counts = _lambda_counts(state, data, state.Z.shape[1])
    noisy = counts[:, 0]
    return hyper.a_eps + noisy, hyper.b_eps + counts[:, 1:].sum(axis=1)


def update_eps(state, hyper, data, rng):
    a, b = eps_conditional(state, hyper, data)
    return _beta_draw(a, b, rng)


def missing_index(data: ExpressionDataset):
    return np.nonzero(~data.m)


def missing_y_log_target(state, hyper, data, beta, values, index=None):
    """Unnormalised log full conditional of each missing entry, evaluated at ``values``.

    ``values`` is aligned with ``missing_index(data)``.
    """
    n, j = missing_index(data) if index is None else index
    values = np.asarray(values, dtype=float)
    s = data.sample[n]
    lam = state.lam[n]
    z = state.Z[j, np.maximum(lam - 1, 0)]
    dens = log_normal_pdf(values, 0.0, hyper.s2_eps)
    for zz in (0, 1):
        sel = (lam > 0) & (z == zz)
        if sel.any():
            with np.errstate(divide="ignore"):
                log_eta = np.log(state.eta(zz)[s[sel], j[sel]]).T
            comp = log_normal_pdf(values[sel], state.mu_star(zz)[:, None], state.sigma2[s[sel]])
            dens[sel] = logsumexp(log_eta + comp, axis=0)
    return log_rho(values, beta, s) + dens


def update_missing_y(state, hyper, data, beta, rng, proposal_sd=0.5):
    """One random-walk Metropolis step per missing entry; returns the completed y."""
    index = missing_index(data)
    y = state.y.copy()
    if len(index[0]) == 0:
        return y
    cur = y[index]
    prop = cur + proposal_sd * rng.standard_normal(cur.shape)
    log_ratio = (missing_y_log_target(state, hyper, data, beta, prop, index)
                 - missing_y_log_target(state, hyper, data, beta, cur, index))
    accept = np.log(rng.random(cur.shape)) < log_ratio
    y[index] = np.where(accept, prop, cur)
    return y


# ---------------------------------------------------------------------------
# joint posterior


def log_joint(state, hyper, data, beta, collapse_gamma=False) -> float:
    """Unnormalised log posterior of the (optionally gamma-collapsed) state."""
    K = state.Z.shape[1]
    Z = state.Z.astype(float)
    s = data.sample
    lp = stats.beta.logpdf(state.v, state.alpha / K, 1.0).sum()
    lp += (Z * np.log(state.v) + (1 - Z) * np.log1p(-state.v)).sum()
    lp += stats.gamma.logpdf(state.alpha, hyper.a_alpha, scale=1.0 / hyper.b_alpha)
    lp += stats.beta.logpdf(state.eps, hyper.a_eps, hyper.b_eps).sum()
    lp += sum(stats.dirichlet.logpdf(wi, np.full(K, hyper.d / K)) for wi in state.w)
    active = state.lam > 0
    with np.errstate(divide="ignore"):
        lam_prior = np.where(active, np.log1p(-state.eps[s]) + np.log(state.w[s, np.maximum(state.lam - 1, 0)]),
                             np.log(state.eps[s]))
    lp += lam_prior.sum()
    for d, psi, tau2 in ((state.delta0, hyper.psi0, hyper.tau2_0), (state.delta1, hyper.psi1, hyper.tau2_1)):
        sd = np.sqrt(tau2)
        lp += stats.truncnorm.logpdf(d, -psi / sd, np.inf, loc=psi, scale=sd).sum()
    lp += stats.invgamma.logpdf(state.sigma2, hyper.a_sigma, scale=hyper.b_sigma).sum()
    for eta, a, L in ((state.eta0, hyper.a_eta0, hyper.L0), (state.eta1, hyper.a_eta1, hyper.L1)):
        lp += _dirichlet_logpdf(eta, a / L).sum()
    lp += log_rho(state.y[~data.m], beta, np.broadcast_to(s[:, None], data.m.shape)[~data.m]).sum()
    noisy_ll = log_normal_pdf(state.y, 0.0, hyper.s2_eps).sum(axis=1)
    if collapse_gamma:
        logF0, logF1 = log_mixtures(state, data)
        cell_ll = np.where(_z_of_entries(state) == 1, logF1, logF0).sum(axis=1)
    else:
        z_ent = _z_of_entries(state)
        g = state.gam.astype(np.intp)
        gi = np.minimum(g, np.where(z_ent == 1, hyper.L1, hyper.L0) - 1)
        jj = np.arange(data.J)[None, :]
        with np.errstate(divide="ignore"):
            log_eta = np.where(z_ent == 1, np.log(state.eta1[s[:, None], jj, np.minimum(gi, hyper.L1 - 1)]),
                               np.log(state.eta0[s[:, None], jj, np.minimum(gi, hyper.L0 - 1)]))
        cell_ll = (log_eta + log_normal_pdf(state.y, state.mu(), state.sigma2[s][:, None])).sum(axis=1)
    lp += np.where(active, cell_ll, noisy_ll).sum()
    return float(lp)


def _dirichlet_logpdf(x, a):
    """Row-wise Dirichlet log density with a common scalar concentration."""
    L = x.shape[-1]
    with np.errstate(divide="ignore"):
        return gammaln(a * L) - L * gammaln(a) + ((a - 1) * np.log(x)).sum(axis=-1)


def log_likelihood(state, hyper, data, beta) -> float:
    """Observed-data log likelihood used for monitoring (missing-factor form)."""
    s = data.sample
    var = np.where(state.lam > 0, state.sigma2[s], hyper.s2_eps)[:, None]
    ll = log_normal_pdf(state.y, state.mu(), var).sum()
    ll += log_rho(state.y[~data.m], beta, np.broadcast_to(s[:, None], data.m.shape)[~data.m]).sum()
    return float(ll)


# ---------------------------------------------------------------------------
# initialisation and driver


def init_missing_values(data: ExpressionDataset, beta) -> np.ndarray:
    """Complete y with each sample's missingness-curve vertex.

    Falls back to the sample's smallest observed value when the curve has
    no interior maximum (b2 >= 0).
    """
    beta = np.asarray(beta, dtype=float)
    vert = vertex(beta)
    y = data.y.copy()
    for i in range(data.I):
        rows = data.rows(i)
        fill = vert[i]
        if not (beta[i, 2] < 0 and np.isfinite(fill)):
            obs = data.sample_y(i)[data.sample_m(i)]
            fill = obs.min() if obs.size else 0.0
        block = y[rows]
        block[~data.m[rows]] = fill
        y[rows] = block
    return y


def init_state(data: ExpressionDataset, hyper: Hyperparams, beta, rng, n_restarts: int = 10) -> ModelState:
    K, J, I = hyper.K, data.J, data.I
    y = init_missing_values(data, beta)
    if data.N >= K:
        km = KMeans(n_clusters=K, n_init=n_restarts, random_state=int(rng.integers(2**31 - 1)))
        with warnings.catch_warnings():
            # duplicated rows (e.g. many identical imputations) may leave clusters empty
            warnings.simplefilter("ignore", ConvergenceWarning)
            lam = km.fit_predict(y) + 1
    else:
        lam = rng.integers(1, K + 1, size=data.N)
    centers = np.zeros((K, J))
    for k in range(K):
        members = y[lam == k + 1]
        centers[k] = members.mean(axis=0) if len(members) else rng.standard_normal(J)
    Z = (centers.T > 0).astype(np.int8)
    counts = np.zeros((I, K))
    np.add.at(counts, (data.sample, lam - 1), 1.0)
    w = (counts + hyper.d / K) / (counts.sum(axis=1, keepdims=True) + hyper.d)

    alpha = max(rng.gamma(hyper.a_alpha) / hyper.b_alpha, _TINY)
    v = _beta_draw(np.full(K, alpha / K), np.ones(K), rng)
    eps = _beta_draw(np.full(I, hyper.a_eps), np.full(I, hyper.b_eps), rng)
    delta0 = np.array([_tn_plus_draw(hyper.psi0, hyper.tau2_0, rng) for _ in range(hyper.L0)])
    delta1 = np.array([_tn_plus_draw(hyper.psi1, hyper.tau2_1, rng) for _ in range(hyper.L1)])
    sigma2 = hyper.b_sigma / rng.gamma(np.full(I, hyper.a_sigma))
    eta0 = _dirichlet_draw(np.full((I, J, hyper.L0), hyper.a_eta0 / hyper.L0), rng)
    eta1 = _dirichlet_draw(np.full((I, J, hyper.L1), hyper.a_eta1 / hyper.L1), rng)
    state = ModelState(Z=Z, v=v, alpha=alpha, w=w, eps=eps, lam=lam.astype(np.intp),
                       gam=np.zeros((data.N, J), dtype=np.int8), delta0=delta0, delta1=delta1,
                       sigma2=sigma2, eta0=eta0, eta1=eta1, y=y)
    state.gam = update_gamma(state, hyper, data, rng)
    return state


@dataclass
class Draw:
    """Thinned snapshot of a chain state; ``y_missing`` follows ``missing_index``.

    ``v``, ``alpha``, ``eta0`` and ``eta1`` may be None for slim stored traces.
    """

    Z: np.ndarray
    w: np.ndarray
    lam: np.ndarray
    gam: np.ndarray
    delta0: np.ndarray
    delta1: np.ndarray
    sigma2: np.ndarray
    eps: np.ndarray
    y_missing: np.ndarray
    v: np.ndarray | None = None
    alpha: float | None = None
    eta0: np.ndarray | None = None
    eta1: np.ndarray | None = None

    @classmethod
    def of(cls, state: ModelState, data: ExpressionDataset) -> "Draw":
        return cls(Z=state.Z.copy(), w=state.w.copy(), lam=state.lam.copy(), gam=state.gam.copy(),
                   delta0=state.delta0.copy(), delta1=state.delta1.copy(), sigma2=state.sigma2.copy(),
                   eps=state.eps.copy(), y_missing=state.y[~data.m].copy(), v=state.v.copy(),
                   alpha=float(state.alpha), eta0=state.eta0.copy(), eta1=state.eta1.copy())

    def mu(self) -> np.ndarray:
        return cell_means(self.Z, self.lam, self.gam, self.delta0, self.delta1)

    def completed_y(self, data: ExpressionDataset) -> np.ndarray:
        y = data.y.copy()
        y[~data.m] = self.y_missing
        return y


@dataclass
class PosteriorTrace:
    draws: list
    iterations: np.ndarray
    seed: int
    hyper: Hyperparams
    beta: np.ndarray
    loglik: np.ndarray = field(default_factory=lambda: np.zeros(0))
    config: ChainConfig | None = None
    wall_time: float = 0.0
    sizes: np.ndarray | None = None  # cells per sample, for splitting labels

    def __len__(self):
        return len(self.draws)

    @property
    def K(self) -> int:
        return self.hyper.K


def sweep(state, hyper, data, beta, rng, proposal_sd=0.5, fixed=frozenset()) -> ModelState:
    """One full scan in the fixed update order; mutates and returns ``state``."""
    if "y" not in fixed:
        state.y = update_missing_y(state, hyper, data, beta, rng, proposal_sd)
    if "gamma" not in fixed:
        # observed entries were redrawn at the end of the previous sweep and
        # their conditionals have not changed since
        state.gam = update_gamma(state, hyper, data, rng, index=missing_index(data))
    if "delta" not in fixed:
        state.delta0, state.delta1 = update_delta(state, hyper, data, rng)
    if "sigma2" not in fixed:
        state.sigma2 = update_sigma2(state, hyper, data, rng)
    if "eta" not in fixed:
        state.eta0, state.eta1 = update_eta(state, hyper, data, rng)
    terms = (component_terms(state, data, 0), component_terms(state, data, 1))
    logF = log_mixtures(state, data, terms)
    if "v" not in fixed:
        state.v = update_v(state, hyper, rng)
    if "Z" not in fixed:
        state.Z = update_Z(state, hyper, data, rng, logF)
    if "alpha" not in fixed:
        state.alpha = update_alpha(state, hyper, rng)
    if "lambda" not in fixed:
        state.lam = update_lambda(state, hyper, data, rng, logF)
    if "w" not in fixed:
        state.w = update_w(state, hyper, data, rng)
    if "eps" not in fixed:
        state.eps = update_eps(state, hyper, data, rng)
    # keep gamma consistent with the new (Z, lambda) so stored means are coherent
    if "gamma" not in fixed:
        state.gam = update_gamma(state, hyper, data, rng, terms, logF=logF)
    return state


def run_chain(data: ExpressionDataset, hyper: Hyperparams, beta, config: ChainConfig,
              state: ModelState | None = None, progress_every: int = 0) -> PosteriorTrace:
    beta = np.asarray(beta, dtype=float).reshape(data.I, 3)
    rng = np.random.default_rng(config.seed)
    if state is None:
        state = init_state(data, hyper, beta, rng)
    draws, iters = [], []
    loglik = np.empty(config.n_iter)
    t0 = time.perf_counter()
    for it in range(config.n_iter):
        sweep(state, hyper, data, beta, rng, config.proposal_sd, config.fixed)
        loglik[it] = log_likelihood(state, hyper, data, beta)
        if not np.isfinite(loglik[it]):
            raise ChainAbort(it, "non-finite log-likelihood")
        if it >= config.burn_in and (it - config.burn_in) % config.thin == 0:
            draws.append(Draw.of(state, data))
            iters.append(it)
        if progress_every and (it + 1) % progress_every == 0:
            log.info("K=%d iteration %d/%d loglik %.2f", hyper.K, it + 1, config.n_iter, loglik[it])
    return PosteriorTrace(draws=draws, iterations=np.array(iters), seed=config.seed, hyper=hyper,
                          beta=beta, loglik=loglik, config=config, wall_time=time.perf_counter() - t0,
                          sizes=data.sizes.copy())
