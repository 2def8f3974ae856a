"""Random valid states and an independent loop-based joint posterior oracle."""

from __future__ import annotations

import math

import numpy as np
from scipy import stats

from cytofam.model import ExpressionDataset, Hyperparams, ModelState


def random_problem(rng, sizes=(3, 2), J=2, K=2, L0=2, L1=3, miss=0.3, noisy=0.2):
    """Tiny dataset plus a random valid state (not a posterior draw)."""
    sizes = np.asarray(sizes)
    I, N = len(sizes), int(sizes.sum())
    y = rng.normal(0, 2, size=(N, J))
    m = rng.random((N, J)) > miss
    ys = np.split(np.where(m, y, np.nan), np.cumsum(sizes)[:-1])
    ms = np.split(m, np.cumsum(sizes)[:-1])
    data = ExpressionDataset.from_samples(ys, masks=ms)
    hyper = Hyperparams(K=K, L0=L0, L1=L1, a_alpha=rng.uniform(.5, 2), b_alpha=rng.uniform(.5, 2),
                        psi0=rng.uniform(.5, 2), tau2_0=rng.uniform(.5, 2), psi1=rng.uniform(.5, 2),
                        tau2_1=rng.uniform(.5, 2), a_sigma=rng.uniform(1, 4), b_sigma=rng.uniform(1, 4),
                        a_eta0=rng.uniform(.5, 2), a_eta1=rng.uniform(.5, 2), d=rng.uniform(.5, 2),
                        a_eps=rng.uniform(.5, 2), b_eps=rng.uniform(2, 10), s2_eps=rng.uniform(5, 15))
    beta = np.column_stack([rng.normal(0, 1, I), rng.normal(0, 1, I), -rng.uniform(.05, .5, I)])
    state = random_state(rng, data, hyper, noisy)
    return data, hyper, beta, state


def random_state(rng, data, hyper, noisy=0.2):
    I, J, N, K = data.I, data.J, data.N, hyper.K
    lam = np.where(rng.random(N) < noisy, 0, rng.integers(1, K + 1, N))
    Z = (rng.random((J, K)) < .5).astype(np.int8)
    state = ModelState(
        Z=Z, v=rng.uniform(.05, .95, K), alpha=rng.uniform(.5, 3), w=rng.dirichlet(np.ones(K), I),
        eps=rng.uniform(.02, .5, I), lam=lam, gam=np.zeros((N, J), dtype=np.int8),
        delta0=rng.uniform(.2, 2, hyper.L0), delta1=rng.uniform(.2, 2, hyper.L1),
        sigma2=rng.uniform(.3, 2, I), eta0=rng.dirichlet(np.ones(hyper.L0), (I, J)),
        eta1=rng.dirichlet(np.ones(hyper.L1), (I, J)),
        y=np.where(data.m, data.y, rng.normal(-1, 1.5, (N, J))))
    zent = Z[:, np.maximum(lam - 1, 0)].T
    gam = np.where(zent == 1, rng.integers(0, hyper.L1, (N, J)), rng.integers(0, hyper.L0, (N, J)))
    state.gam = np.where(lam[:, None] > 0, gam, 0).astype(np.int8)
    return state


def oracle_log_joint(state, hyper, data, beta, collapse_gamma=False):
    """Element-by-element unnormalised log posterior using scipy.stats densities."""
    K = hyper.K
    lp = 0.0
    for k in range(K):
        lp += stats.beta.logpdf(state.v[k], state.alpha / K, 1.0)
        for j in range(data.J):
            lp += stats.bernoulli.logpmf(state.Z[j, k], state.v[k])
    lp += stats.gamma.logpdf(state.alpha, hyper.a_alpha, scale=1 / hyper.b_alpha)
    for i in range(data.I):
        lp += stats.beta.logpdf(state.eps[i], hyper.a_eps, hyper.b_eps)
        lp += stats.dirichlet.logpdf(state.w[i], [hyper.d / K] * K)
        lp += stats.invgamma.logpdf(state.sigma2[i], hyper.a_sigma, scale=hyper.b_sigma)
        for j in range(data.J):
            lp += stats.dirichlet.logpdf(state.eta0[i, j], [hyper.a_eta0 / hyper.L0] * hyper.L0)
            lp += stats.dirichlet.logpdf(state.eta1[i, j], [hyper.a_eta1 / hyper.L1] * hyper.L1)
    for d, psi, tau2 in ((state.delta0, hyper.psi0, hyper.tau2_0), (state.delta1, hyper.psi1, hyper.tau2_1)):
        for x in d:
            # normal density renormalised to the positive half line
            lp += stats.norm.logpdf(x, psi, math.sqrt(tau2)) - stats.norm.logsf(0, psi, math.sqrt(tau2))
    mu0, mu1 = -np.cumsum(state.delta0), np.cumsum(state.delta1)
    for n in range(data.N):
        i = data.sample[n]
        lam = state.lam[n]
        lp += math.log(state.eps[i]) if lam == 0 else math.log(1 - state.eps[i]) + math.log(state.w[i, lam - 1])
        for j in range(data.J):
            y = state.y[n, j]
            if not data.m[n, j]:
                b = beta[i]
                lp += math.log(stats.logistic.cdf(b[0] + b[1] * y + b[2] * y * y))
            if lam == 0:
                lp += stats.norm.logpdf(y, 0, math.sqrt(hyper.s2_eps))
                continue
            z = state.Z[j, lam - 1]
            eta = state.eta1[i, j] if z else state.eta0[i, j]
            mus = mu1 if z else mu0
            sd = math.sqrt(state.sigma2[i])
            if collapse_gamma:
                lp += math.log(sum(e * stats.norm.pdf(y, mu, sd) for e, mu in zip(eta, mus)))
            else:
                g = state.gam[n, j]
                lp += math.log(eta[g]) + stats.norm.logpdf(y, mus[g], sd)
    return lp
