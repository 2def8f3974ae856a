"""Synthetic multi-sample datasets with known subpopulation structure."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ExpressionDataset, ModelError

MU_STAR0 = (-1.0, -2.3, -3.5)
MU_STAR1 = (1.0, 2.0, 3.0)
SIGMA2 = (0.2, 0.1, 0.3)
EPS = 0.05
NOISE_VAR = 9.0
P_EXPRESSED = 0.6
MISSING_CAP = 0.7

SIM1_SIZES = (4000, 500, 1000)
SIM2_SIZES = (40000, 5000, 10000)

# true abundances of the canned designs, one row per sample
SIM1_W = np.array([
    [0.068, 0.163, 0.351, 0.297, 0.118],
    [0.194, 0.282, 0.066, 0.257, 0.199],
    [0.112, 0.141, 0.224, 0.119, 0.402],
])
# printed with three decimals, so rows are renormalised on use
SIM2_W = np.array([
    [0.136, 0.132, 0.111, 0.157, 0.044, 0.046, 0.215, 0.072, 0.018, 0.065],
    [0.160, 0.021, 0.037, 0.084, 0.183, 0.111, 0.045, 0.109, 0.109, 0.135],
    [0.033, 0.128, 0.257, 0.110, 0.049, 0.142, 0.142, 0.001, 0.099, 0.035],
])

# quantile levels of the three missingness mechanisms used in sensitivity runs
MECHANISMS = {
    "MM-0": (0.0, 0.25, 0.5),
    "MM-I": (0.0, 0.20, 0.4),
    "MM-II": (0.0, 0.15, 0.3),
}


@dataclass
class SimulationTruth:
    Z: np.ndarray  # (J, K) int8
    w: np.ndarray  # (I, K)
    eps: np.ndarray  # (I,)
    mu_star0: np.ndarray  # (L,)
    mu_star1: np.ndarray  # (L,)
    sigma2: np.ndarray  # (I,)
    eta0: np.ndarray  # (I, J, L)
    eta1: np.ndarray  # (I, J, L)
    lam: np.ndarray  # (N,) 0 = noisy
    sizes: np.ndarray  # (I,)
    p: np.ndarray | None = None  # (I, J) missing proportions

    @property
    def K(self) -> int:
        return self.Z.shape[1]

    @property
    def sample(self) -> np.ndarray:
        return np.repeat(np.arange(len(self.sizes)), self.sizes)


def _random_Z(J, K, rng, p=P_EXPRESSED, max_tries=100000):
    for _ in range(max_tries):
        Z = (rng.random((J, K)) < p).astype(np.int8)
        if Z.any(axis=0).all() and Z.any(axis=1).all():
            return Z
    raise ModelError("could not draw a Z without empty rows or columns")


def gen_truth(I, J, K, sizes, rng, Z=None, w=None, eps=EPS, mu_star0=MU_STAR0,
              mu_star1=MU_STAR1, sigma2=SIGMA2) -> SimulationTruth:
    """Draw a ground truth; ``Z`` and ``w`` may be supplied to fix them."""
    sizes = np.asarray(sizes, dtype=int)
    if sizes.shape != (I,) or np.any(sizes < 1):
        raise ModelError(f"need {I} positive sample sizes")
    if Z is None:
        Z = _random_Z(J, K, rng)
    Z = np.asarray(Z, dtype=np.int8)
    if Z.shape != (J, K) or not (Z.any(axis=0).all() and Z.any(axis=1).all()):
        raise ModelError("Z must be J x K without all-zero rows or columns")
    if w is None:
        w = np.array([rng.dirichlet(rng.permutation(np.arange(1, K + 1))) for _ in range(I)])
    w = np.asarray(w, dtype=float)
    w = w / w.sum(axis=1, keepdims=True)
    if w.shape != (I, K):
        raise ModelError(f"w must have shape {(I, K)}")
    mu0, mu1 = np.asarray(mu_star0, dtype=float), np.asarray(mu_star1, dtype=float)
    L = len(mu1)
    if len(mu0) != L:
        raise ModelError("both mixtures need the same number of components")
    eta = [np.array([[rng.dirichlet(rng.permutation(np.arange(1, L + 1))) for _ in range(J)]
                     for _ in range(I)]) for _ in range(2)]
    eps_arr = np.broadcast_to(np.asarray(eps, dtype=float), (I,)).copy()
    s2 = np.resize(np.asarray(sigma2, dtype=float), I)
    lam = np.concatenate([
        np.where(rng.random(n) < eps_arr[i], 0, 1 + rng.choice(K, size=n, p=w[i]))
        for i, n in enumerate(sizes)
    ])
    return SimulationTruth(Z=Z, w=w, eps=eps_arr, mu_star0=mu0, mu_star1=mu1, sigma2=s2,
                           eta0=eta[0], eta1=eta[1], lam=lam, sizes=sizes)


def gen_expressions(truth: SimulationTruth, rng, noise_var: float = NOISE_VAR) -> ExpressionDataset:
    """Fully observed expressions drawn from the truth's mixtures."""
    s = truth.sample
    N, J, L = len(s), truth.Z.shape[0], len(truth.mu_star1)
    lam = truth.lam
    z = truth.Z[:, np.maximum(lam - 1, 0)].T
    eta = np.where(z[..., None] == 1, truth.eta1[s], truth.eta0[s])
    cdf = np.cumsum(eta, axis=-1)
    g = np.minimum((cdf < rng.random((N, J))[..., None] * cdf[..., -1:]).sum(axis=-1), L - 1)
    mu = np.where(z == 1, truth.mu_star1[g], truth.mu_star0[g])
    sd = np.sqrt(truth.sigma2[s])[:, None]
    y = mu + sd * rng.standard_normal((N, J))
    noisy = lam == 0
    y[noisy] = np.sqrt(noise_var) * rng.standard_normal((int(noisy.sum()), J))
    ys = np.split(y, np.cumsum(truth.sizes)[:-1])
    return ExpressionDataset.from_samples(ys)


def missing_weight_log(y):
    """log of 1 / (1 + exp(9.2 + 2.3 y)); lower expressions weigh more."""
    return -np.logaddexp(0.0, 9.2 + 2.3 * np.asarray(y, dtype=float))


def gen_missingness(truth: SimulationTruth, data: ExpressionDataset, rng, cap: float = MISSING_CAP):
    """Mask out values of non-expressed markers; returns (masked dataset, p).

    For each (i, j) a proportion ``p ~ U(0, cap * sum_k w_ik (1 - z_jk))`` of
    cells is removed by weighted sampling without replacement.
    """
    I, J = data.I, data.J
    upper = cap * truth.w @ (1 - truth.Z.T)  # (I, J)
    p = rng.random((I, J)) * upper
    m = data.m.copy()
    for i in range(I):
        rows = np.arange(data.rows(i).start, data.rows(i).stop)
        n_i = len(rows)
        for j in range(J):
            count = int(np.floor(p[i, j] * n_i))
            if count == 0:
                continue
            # exponential-sort weighted sampling without replacement
            keys = np.log(rng.exponential(size=n_i)) - missing_weight_log(data.y[rows, j])
            m[rows[np.argpartition(keys, count - 1)[:count]], j] = False
    masked = ExpressionDataset(np.where(m, data.y, np.nan), m, data.sample, data.sizes, data.markers)
    return masked, p


def gen_simulation(rng, K, sizes, J=20, Z=None, w=None):
    I = len(sizes)
    truth = gen_truth(I, J, K, sizes, rng, Z=Z, w=w)
    full = gen_expressions(truth, rng)
    data, truth.p = gen_missingness(truth, full, rng)
    return data, truth


def gen_simulation1(rng, sizes=SIM1_SIZES, J=20, canned_w: bool = False):
    """Five subpopulations over three samples; ``canned_w`` uses the tabulated abundances."""
    return gen_simulation(rng, 5, sizes, J, w=SIM1_W if canned_w else None)


def gen_simulation2(rng, sizes=SIM2_SIZES, J=20, canned_w: bool = True, Z=None):
    """Ten subpopulations over three larger samples."""
    return gen_simulation(rng, 10, sizes, J, Z=Z, w=SIM2_W if canned_w else None)
