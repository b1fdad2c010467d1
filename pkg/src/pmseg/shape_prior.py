"""Kernel-density shape prior and its subsampled unbiased estimator.

The prior for class s is an equal-weight mixture of isotropic Gaussians
centered on the training level sets of that class. Everything is computed
in the log domain end to end: at MNIST scale (d = 784) the linear-domain
kernel values underflow to zero, so the estimator carried by the chain is
stored as log z and combined with log-sum-exp.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import LevelSet

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class TrainingSet:
    """Per-class training level sets plus per-class kernel bandwidths.

    classes[s] is an (m_s, height*width) array whose rows are level-set
    vectors; sigmas[s] is the bandwidth used by every kernel of class s.
    labels, when present, carries the original class labels for reporting.
    Immutable after construction and shareable across threads.
    """

    height: int
    width: int
    classes: tuple[np.ndarray, ...]
    sigmas: tuple[float, ...]
    labels: tuple[int, ...] | None = None

    def __post_init__(self):
        if len(self.classes) < 1:
            raise ValueError("training set needs at least one class")
        if len(self.sigmas) != len(self.classes):
            raise ValueError("one bandwidth per class required")
        d = self.height * self.width
        frozen = []
        for s, X in enumerate(self.classes):
            X = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
            if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] != d:
                raise ValueError(f"class {s}: expected (m_s, {d}) level sets, got {X.shape}")
            if not np.all(np.isfinite(X)):
                raise ValueError(f"class {s}: non-finite level-set values")
            X.flags.writeable = False
            frozen.append(X)
        for s, sig in enumerate(self.sigmas):
            if not (sig > 0 and math.isfinite(sig)):
                raise ValueError(f"class {s}: bandwidth must be positive, got {sig}")
        object.__setattr__(self, "classes", tuple(frozen))
        if self.labels is not None and len(self.labels) != len(self.classes):
            raise ValueError("one label per class required")

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def dim(self) -> int:
        return self.height * self.width

    def class_size(self, s: int) -> int:
        return self.classes[s].shape[0]


@dataclass(frozen=True)
class LogDensityEstimate:
    """log of the unbiased estimator z of p(x|s), plus the subsample size used."""

    log_value: float
    subsample_size: int


def _vec(x) -> np.ndarray:
    if isinstance(x, LevelSet):
        return x.data
    return np.asarray(x, dtype=np.float64)


def _logsumexp(a: np.ndarray) -> float:
    m = a.max()
    return float(m + math.log(np.exp(a - m).sum()))


def log_gaussian_kernel(x, center, sigma: float) -> float:
    """log N(x; center, sigma^2 I) for d-dimensional x."""
    if not sigma > 0:
        raise ValueError(f"bandwidth must be positive, got {sigma} (calibration bug)")
    v = _vec(x)
    c = _vec(center)
    if v.shape != c.shape:
        raise ValueError(f"shape mismatch: {v.shape} vs {c.shape}")
    diff = v - c
    d = v.size
    return -0.5 * d * (_LOG_2PI + 2.0 * math.log(sigma)) - float(diff @ diff) / (2.0 * sigma * sigma)


def _log_kernels(x, s: int, train: TrainingSet, rows: np.ndarray | None) -> np.ndarray:
    """Log kernel values of x against (a subset of) class s training shapes."""
    X = train.classes[s]
    if rows is not None:
        X = X[rows]
    sigma = train.sigmas[s]
    diff = X - _vec(x)
    sq = np.einsum("ij,ij->i", diff, diff)
    d = train.dim
    return -0.5 * d * (_LOG_2PI + 2.0 * math.log(sigma)) - sq / (2.0 * sigma * sigma)


def log_prior_full(x, s: int, train: TrainingSet) -> float:
    """log p(x|s): log of the equal-weight mixture over all m_s kernels."""
    lk = _log_kernels(x, s, train, None)
    return _logsumexp(lk) - math.log(lk.size)


def log_prior_at_subset(x, s: int, train: TrainingSet, indices: np.ndarray) -> float:
    """Deterministic core of the subsampled estimator: log mean kernel over given rows.

    Exposed separately so the estimator can be enumerated over every possible
    subset when testing unbiasedness.
    """
    lk = _log_kernels(x, s, train, indices)
    return _logsumexp(lk) - math.log(lk.size)


def _draw_without_replacement(rng: np.random.Generator, m: int, k: int) -> np.ndarray:
    # partial Fisher-Yates: O(k) swaps, exact uniformity over k-subsets
    pool = np.arange(m)
    for i in range(k):
        j = int(rng.integers(i, m))
        pool[i], pool[j] = pool[j], pool[i]
    return pool[:k]


def log_prior_subsampled(
    x, s: int, train: TrainingSet, m_hat: int, rng: np.random.Generator
) -> LogDensityEstimate:
    """Unbiased KDE estimate from m_hat kernels drawn without replacement.

    The linear-domain estimator (1/m_hat) sum of the drawn kernels has
    expectation exactly p(x|s); the log of it is what the pseudo-marginal
    chain stores as log z. With m_hat = m_s no drawing happens and the
    result equals log_prior_full bit for bit.
    """
    m = train.class_size(s)
    if not 1 <= m_hat <= m:
        raise ValueError(f"subsample size {m_hat} outside [1, {m}] for class {s}")
    if m_hat == m:
        return LogDensityEstimate(log_prior_full(x, s, train), m_hat)
    rows = _draw_without_replacement(rng, m, m_hat)
    return LogDensityEstimate(log_prior_at_subset(x, s, train, rows), m_hat)


def calibrate_bandwidth(class_levelsets: list) -> float:
    """Maximum-likelihood leave-one-out bandwidth for one class.

    Maximizes sum_i log[(1/(m-1)) sum_{j != i} N(x_i; x_j, sigma^2 I)] by
    golden-section search on log sigma. The bracket is data driven:
    [1e-3 * D, 10 * D] with D the median pairwise distance normalized by
    sqrt(d), which scales correctly with dimension without magic constants.
    """
    X = np.stack([_vec(v) for v in class_levelsets]).astype(np.float64)
    m, d = X.shape
    if m < 2:
        raise ValueError(
            "leave-one-out calibration needs at least 2 shapes; supply sigma manually"
        )
    sq_norms = np.einsum("ij,ij->i", X, X)
    G = sq_norms[:, None] + sq_norms[None, :] - 2.0 * (X @ X.T)
    np.clip(G, 0.0, None, out=G)
    iu = np.triu_indices(m, k=1)
    D = float(np.median(np.sqrt(G[iu]))) / math.sqrt(d)
    if not (D > 0 and math.isfinite(D)):
        D = 1e-6  # all shapes identical; any tiny scale keeps the bracket valid
    np.fill_diagonal(G, np.inf)  # excludes self-kernels from the LOO sums

    def loo(t: float) -> float:
        sigma2 = math.exp(2.0 * t)
        lk = -0.5 * d * (_LOG_2PI + math.log(sigma2)) - G / (2.0 * sigma2)
        mx = lk.max(axis=1)
        lse = mx + np.log(np.exp(lk - mx[:, None]).sum(axis=1))
        return float(lse.sum()) - m * math.log(m - 1)

    lo = math.log(1e-3 * D)
    hi = math.log(10.0 * D)
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    e = a + inv_phi * (b - a)
    fc, fe = loo(c), loo(e)
    while b - a > 1e-4:  # gap in log sigma = relative tolerance on sigma
        if fc > fe:
            b, e, fe = e, c, fc
            c = b - inv_phi * (b - a)
            fc = loo(c)
        else:
            a, c, fc = c, e, fe
            e = a + inv_phi * (b - a)
            fe = loo(e)
    return math.exp(0.5 * (a + b))
