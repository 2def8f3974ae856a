"""Core data types, the cutoff log-transform, preprocessing and density helpers.

Cells from all samples are stored stacked in one ``(N, J)`` array with a
``sample`` index vector, so every per-cell computation in the sampler is a
single vectorised numpy expression.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

LOG_2PI = np.log(2.0 * np.pi)


class ModelError(ValueError):
    """Invalid model input or state."""


@dataclass(frozen=True)
class RawDataset:
    """Positive raw intensities per sample; ``nan`` marks an absent value."""

    values: list[np.ndarray]
    cutoffs: np.ndarray  # (I, J)
    markers: list[str]

    def __post_init__(self):
        J = len(self.markers)
        if np.shape(self.cutoffs) != (len(self.values), J):
            raise ModelError(f"cutoffs must have shape {(len(self.values), J)}")
        for i, v in enumerate(self.values):
            if v.ndim != 2 or v.shape[1] != J:
                raise ModelError(f"sample {i} has {v.shape[1] if v.ndim == 2 else '?'} columns, expected {J}")


@dataclass(frozen=True)
class ExpressionDataset:
    """Log-ratio expressions ``y`` with observed mask ``m`` (True = observed).

    Missing entries of ``y`` hold ``nan``.
    """

    y: np.ndarray  # (N, J)
    m: np.ndarray  # (N, J) bool
    sample: np.ndarray  # (N,) int
    sizes: np.ndarray  # (I,) int
    markers: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.y.ndim != 2 or self.y.shape != self.m.shape:
            raise ModelError("y and m must be matching 2-d arrays")
        if self.sample.shape != (self.y.shape[0],):
            raise ModelError("sample index must have one entry per cell")
        if self.y.shape[1] < 1 or len(self.sizes) < 1:
            raise ModelError("need at least one marker and one sample")
        if np.any(self.sizes < 1):
            raise ModelError("every sample needs at least one cell")
        if int(self.sizes.sum()) != self.y.shape[0]:
            raise ModelError("sample sizes do not add up to the number of cells")
        if not np.all(np.isfinite(self.y[self.m])):
            raise ModelError("observed expressions must be finite")
        if not self.markers:
            object.__setattr__(self, "markers", [f"m{j + 1}" for j in range(self.y.shape[1])])

    @classmethod
    def from_samples(cls, ys, markers=None, masks=None):
        """Build from a list of per-sample ``(N_i, J)`` arrays (``nan`` = missing)."""
        ys = [np.asarray(y, dtype=float) for y in ys]
        if masks is None:
            masks = [~np.isnan(y) for y in ys]
        y = np.vstack(ys)
        m = np.vstack([np.asarray(mk, dtype=bool) for mk in masks])
        y = np.where(m, y, np.nan)
        sizes = np.array([len(v) for v in ys], dtype=int)
        sample = np.repeat(np.arange(len(ys)), sizes)
        return cls(y, m, sample, sizes, list(markers) if markers is not None else [])

    @property
    def I(self) -> int:
        return len(self.sizes)

    @property
    def J(self) -> int:
        return self.y.shape[1]

    @property
    def N(self) -> int:
        return self.y.shape[0]

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.sizes)])

    def rows(self, i: int) -> slice:
        off = self.offsets
        return slice(int(off[i]), int(off[i + 1]))

    def sample_y(self, i: int) -> np.ndarray:
        return self.y[self.rows(i)]

    def sample_m(self, i: int) -> np.ndarray:
        return self.m[self.rows(i)]


@dataclass(frozen=True)
class Hyperparams:
    K: int
    L0: int = 5
    L1: int = 5
    a_alpha: float = 0.1
    b_alpha: float = 0.1
    psi0: float = 1.0
    tau2_0: float = 1.0
    psi1: float = 1.0
    tau2_1: float = 1.0
    a_sigma: float = 3.0
    b_sigma: float = 2.0
    a_eta0: float = 1.0
    a_eta1: float = 1.0
    d: float = 1.0
    a_eps: float = 1.0
    b_eps: float = 99.0
    s2_eps: float = 10.0

    def __post_init__(self):
        for name, value in vars(self).items():
            if not value > 0:
                raise ModelError(f"hyperparameter {name} must be positive, got {value}")
        for name in ("K", "L0", "L1"):
            if int(getattr(self, name)) != getattr(self, name):
                raise ModelError(f"{name} must be an integer")

    def L(self, z: int) -> int:
        return self.L1 if z else self.L0

    def with_K(self, K: int) -> "Hyperparams":
        return replace(self, K=K)


@dataclass
class ModelState:
    """Full parameter vector of one Markov chain state.

    ``delta0`` holds positive magnitudes; the non-expressed locations are
    their negated cumulative sums. ``gam`` is the 0-based mixture component
    of each entry and is meaningful only where ``lam > 0``. ``y`` is the
    completed data matrix (observed values plus current imputations).
    """

    Z: np.ndarray  # (J, K) int8
    v: np.ndarray  # (K,)
    alpha: float
    w: np.ndarray  # (I, K)
    eps: np.ndarray  # (I,)
    lam: np.ndarray  # (N,) int, 0 = noisy cell
    gam: np.ndarray  # (N, J) int8
    delta0: np.ndarray  # (L0,)
    delta1: np.ndarray  # (L1,)
    sigma2: np.ndarray  # (I,)
    eta0: np.ndarray  # (I, J, L0)
    eta1: np.ndarray  # (I, J, L1)
    y: np.ndarray  # (N, J)

    @property
    def mu_star0(self) -> np.ndarray:
        return -np.cumsum(self.delta0)

    @property
    def mu_star1(self) -> np.ndarray:
        return np.cumsum(self.delta1)

    def mu_star(self, z: int) -> np.ndarray:
        return self.mu_star1 if z else self.mu_star0

    def eta(self, z: int) -> np.ndarray:
        return self.eta1 if z else self.eta0

    def copy(self) -> "ModelState":
        return ModelState(**{k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in vars(self).items()})

    def check(self, tol: float = 1e-10) -> None:
        """Raise ModelError if any structural invariant is violated."""
        if not np.all((self.v > 0) & (self.v < 1)):
            raise ModelError("v must lie in (0, 1)")
        if not self.alpha > 0:
            raise ModelError("alpha must be positive")
        if np.any(self.w < 0) or np.max(np.abs(self.w.sum(axis=1) - 1)) > tol:
            raise ModelError("rows of w must lie on the simplex")
        if not np.all((self.eps > 0) & (self.eps < 1)):
            raise ModelError("eps must lie in (0, 1)")
        if np.any(self.delta0 <= 0) or np.any(self.delta1 <= 0):
            raise ModelError("delta magnitudes must be positive")
        if np.any(self.sigma2 <= 0):
            raise ModelError("sigma2 must be positive")
        for eta in (self.eta0, self.eta1):
            if np.any(eta < 0) or np.max(np.abs(eta.sum(axis=-1) - 1)) > tol:
                raise ModelError("eta rows must lie on the simplex")
        K = self.Z.shape[1]
        if np.any((self.lam < 0) | (self.lam > K)):
            raise ModelError("lambda out of range")
        active = self.lam > 0
        z = self.Z[:, np.maximum(self.lam - 1, 0)].T  # (N, J)
        limit = np.where(z == 1, len(self.delta1), len(self.delta0))
        g = self.gam.astype(int)
        if np.any(active[:, None] & ((g < 0) | (g >= limit))):
            raise ModelError("gamma out of range for an assigned cell")
        if not np.all(np.isfinite(self.y)):
            raise ModelError("completed data must be finite")

    def mu(self) -> np.ndarray:
        """Per-entry mean implied by (Z, lambda, gamma, delta); 0 for noisy cells."""
        return cell_means(self.Z, self.lam, self.gam, self.delta0, self.delta1)


def cell_means(Z, lam, gam, delta0, delta1) -> np.ndarray:
    mu0 = -np.cumsum(delta0)
    mu1 = np.cumsum(delta1)
    z = Z[:, np.maximum(lam - 1, 0)].T
    g = gam.astype(np.intp)
    mu = np.where(z == 1, mu1[np.minimum(g, len(mu1) - 1)], mu0[np.minimum(g, len(mu0) - 1)])
    mu[lam == 0] = 0.0
    return mu


def transform(raw: RawDataset) -> ExpressionDataset:
    """Map raw intensities to ``log(raw / cutoff)``; absent values become missing."""
    cut = np.asarray(raw.cutoffs, dtype=float)
    bad = np.argwhere(~(cut > 0))
    if len(bad):
        i, j = bad[0]
        raise ModelError(f"cutoff for sample {i}, marker {raw.markers[j]!r} is not positive: {cut[i, j]}")
    ys = []
    for i, v in enumerate(raw.values):
        present = ~np.isnan(v)
        bad = np.argwhere(present & ~(np.where(present, v, 1.0) > 0))
        if len(bad):
            n, j = bad[0]
            raise ModelError(f"raw value at sample {i}, cell {n}, marker {raw.markers[j]!r} is not positive: {v[n, j]}")
        with np.errstate(invalid="ignore"):
            ys.append(np.log(v / cut[i]))
    return ExpressionDataset.from_samples(ys, raw.markers)


def inverse_transform(data: ExpressionDataset, cutoffs: np.ndarray) -> list[np.ndarray]:
    """Raw-scale values per sample (``nan`` where missing)."""
    cut = np.asarray(cutoffs, dtype=float)
    return [np.exp(data.sample_y(i)) * cut[i] for i in range(data.I)]


@dataclass
class PreprocessReport:
    dropped_markers: list[str]
    dropped_cells: list[int]  # per-sample counts


def preprocess(data: ExpressionDataset, pos_frac: float = 0.9, miss_frac: float = 0.9,
               floor: float = -6.0) -> tuple[ExpressionDataset, PreprocessReport]:
    """Drop uninformative markers, then cells with any observed value below ``floor``.

    A marker is dropped when in every sample more than ``pos_frac`` of cells
    are positive, or more than ``miss_frac`` are missing or negative.
    """
    if not (0 < pos_frac <= 1 and 0 < miss_frac <= 1):
        raise ModelError("pos_frac and miss_frac must lie in (0, 1]")
    keep = np.ones(data.J, dtype=bool)
    pos = np.zeros((data.I, data.J))
    neg = np.zeros((data.I, data.J))
    for i in range(data.I):
        y, m = data.sample_y(i), data.sample_m(i)
        with np.errstate(invalid="ignore"):
            pos[i] = np.mean(m & (y > 0), axis=0)
            neg[i] = np.mean(~m | (y < 0), axis=0)
    keep &= ~np.all(pos > pos_frac, axis=0)
    keep &= ~np.all(neg > miss_frac, axis=0)
    if not keep.any():
        raise ModelError("preprocessing removed every marker")
    y, m = data.y[:, keep], data.m[:, keep]
    with np.errstate(invalid="ignore"):
        bad_cell = np.any(m & (y < floor), axis=1)
    ys, ms, dropped = [], [], []
    for i in range(data.I):
        rows = data.rows(i)
        ok = ~bad_cell[rows]
        if not ok.any():
            raise ModelError(f"preprocessing removed every cell of sample {i}")
        ys.append(y[rows][ok])
        ms.append(m[rows][ok])
        dropped.append(int((~ok).sum()))
    markers = [mk for mk, k in zip(data.markers, keep) if k]
    out = ExpressionDataset.from_samples(ys, markers, ms)
    return out, PreprocessReport([mk for mk, k in zip(data.markers, keep) if not k], dropped)


def logsumexp(a, axis=-1, keepdims=False):
    """Log-sum-exp along one axis; rows that are all -inf give -inf."""
    a = np.asarray(a, dtype=float)
    mx = np.max(a, axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - mx), axis=axis, keepdims=True)) + mx
    return out if keepdims else np.squeeze(out, axis=axis)


def log_normal_pdf(y, mean, var):
    return -0.5 * (LOG_2PI + np.log(var) + (y - mean) ** 2 / var)


def log_mixture_density(y, eta, mu_star, var):
    """log sum_l eta_l N(y | mu_star_l, var), broadcasting over leading axes of eta."""
    y = np.asarray(y, dtype=float)[..., None]
    with np.errstate(divide="ignore"):
        return logsumexp(np.log(eta) + log_normal_pdf(y, mu_star, np.asarray(var)[..., None]), axis=-1)


def mixture_density(y: float, z: int, i: int, j: int, state: ModelState, hyper: Hyperparams,
                    noisy: bool = False) -> float:
    """Density of one expression under the z-mixture of sample i, marker j.

    With ``noisy=True`` returns the noisy-cell density N(y | 0, s2_eps).
    """
    if noisy:
        return float(np.exp(log_normal_pdf(y, 0.0, hyper.s2_eps)))
    eta = state.eta(z)[i, j]
    return float(np.exp(log_mixture_density(y, eta, state.mu_star(z), state.sigma2[i])))
