"""Smooth-perturbation covariance and the gradient-shifted shape proposal.

The proposal for a shape move is x' ~ N(x - gamma * grad_E, perturb_scale^2 * Sigma)
where grad_E combines a pull toward one training shape with the image data
term, and Sigma is a fixed covariance whose draws are spatially smooth
fields. Sigma is built once per run from a random matrix Z and its blurred
counterpart F: solving Z A = F recovers the blur as a linear operator, and
Sigma = symmetrize(A A^T) projected to the nearest PSD matrix plus jitter.

The rows of F are the blurred rows of Z. Storing the blurred rows as
columns instead (so that A = Z^-1 B Z^T) yields a covariance dominated by
the inverse's worst-conditioned directions; its draws are neither unit
variance under an identity blur nor spatially smooth, so the row
orientation here is the one under which the construction does what it is
for. With an identity blur the recovered operator is the identity and the
draws are exactly white.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla
from scipy import ndimage

from .geometry import GrayImage, LevelSet
from .likelihood import ChanVeseLikelihood, LikelihoodParams
from .shape_prior import TrainingSet

DEFAULT_DENSE_CAP = 4096


@dataclass(frozen=True)
class ProposalParams:
    """Step scale gamma for the drift and a scale on the covariance draw.

    Zero is allowed for either knob: it degrades the proposal to pure
    perturbation (gamma = 0) or to the deterministic drift (perturb_scale = 0),
    both of which the degenerate-move tests rely on.
    """

    gamma: float = 1.0
    perturb_scale: float = 1.0

    def __post_init__(self):
        if self.gamma < 0 or self.perturb_scale < 0:
            raise ValueError(
                f"gamma and perturb_scale must be non-negative, got "
                f"{self.gamma}, {self.perturb_scale}"
            )


@dataclass(frozen=True)
class SmoothCovariance:
    """Factored covariance: Sigma = factor @ factor.T, factor lower triangular."""

    dim: int
    factor: np.ndarray
    blur_sigma: float
    jitter: float
    inv_factor: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]

    def __post_init__(self):
        if self.factor.shape != (self.dim, self.dim):
            raise ValueError(f"factor must be {self.dim}x{self.dim}")
        if not np.all(np.isfinite(self.factor)):
            raise ValueError("covariance factor must be finite")
        if self.inv_factor is None:
            inv = sla.solve_triangular(self.factor, np.eye(self.dim), lower=True)
            object.__setattr__(self, "inv_factor", inv)

    def sigma(self) -> np.ndarray:
        S = self.factor @ self.factor.T
        return 0.5 * (S + S.T)

    def whiten(self, v: np.ndarray) -> np.ndarray:
        return self.inv_factor @ v


def _blur_kernel(blur_sigma: float) -> np.ndarray:
    # truncated discrete Gaussian, radius ceil(3 sigma), unit sum
    r = int(math.ceil(3.0 * blur_sigma))
    i = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-0.5 * (i / blur_sigma) ** 2)
    return k / k.sum()


def _blur_rows(Z: np.ndarray, M: int, N: int, blur_sigma: float) -> np.ndarray:
    """Blur each row of Z as an M x N image (reflect boundary)."""
    if blur_sigma <= 0:
        return Z.copy()
    k = _blur_kernel(blur_sigma)
    imgs = Z.reshape(Z.shape[0], M, N)
    sm = ndimage.correlate1d(imgs, k, axis=1, mode="reflect")
    sm = ndimage.correlate1d(sm, k, axis=2, mode="reflect")
    return sm.reshape(Z.shape[0], M * N)


def nearest_psd(A: np.ndarray) -> np.ndarray:
    """Frobenius-nearest symmetric PSD matrix: clip negative eigenvalues."""
    S = 0.5 * (A + A.T)
    w, V = np.linalg.eigh(S)
    np.clip(w, 0.0, None, out=w)
    P = (V * w) @ V.T
    return 0.5 * (P + P.T)


def build_smooth_covariance(
    M: int,
    N: int,
    blur_sigma: float,
    rng: np.random.Generator,
    dense_cap: int = DEFAULT_DENSE_CAP,
) -> SmoothCovariance:
    """Construct the smooth-perturbation covariance for an M x N grid.

    Draws Z with i.i.d. unit Gaussian entries, blurs its rows into F,
    solves Z A = F, and factors nearest_psd(symmetrize(A A^T)) plus a
    trace-scaled jitter. Redraws Z up to 3 times if it is numerically
    singular. Dense O((MN)^3): refuses grids past dense_cap.
    """
    d = M * N
    if d > dense_cap:
        raise ValueError(
            f"grid {M}x{N} has {d} pixels, past the dense cap {dense_cap}; "
            "use the blur-operator mode (build_blur_operator_covariance)"
        )
    A = None
    for _ in range(3):
        Z = rng.standard_normal((d, d))
        if np.linalg.cond(Z) > 1e12:
            continue
        F = _blur_rows(Z, M, N, blur_sigma)
        A = np.linalg.solve(Z, F)
        break
    if A is None:
        raise ValueError("could not draw a well-conditioned Z in 3 attempts")
    S = nearest_psd(A @ A.T)
    jitter = 1e-6 * float(np.trace(S)) / d
    S[np.diag_indices(d)] += jitter
    return SmoothCovariance(
        dim=d, factor=np.linalg.cholesky(S), blur_sigma=float(blur_sigma), jitter=jitter
    )


def build_blur_operator_covariance(M: int, N: int, blur_sigma: float) -> SmoothCovariance:
    """Alternative mode: Sigma = B B^T with B the explicit blur operator.

    Distributionally analogous to the Z/F construction (draws are blurred
    white noise) but deterministic and one factorization cheaper; intended
    for grids past the dense cap of the random-matrix route. Off by default.
    """
    d = M * N
    k = _blur_kernel(blur_sigma) if blur_sigma > 0 else np.array([1.0])
    K_M = ndimage.correlate1d(np.eye(M), k, axis=0, mode="reflect")
    K_N = ndimage.correlate1d(np.eye(N), k, axis=0, mode="reflect")
    B = np.kron(K_M, K_N)
    S = nearest_psd(B @ B.T)
    jitter = 1e-6 * float(np.trace(S)) / d
    S[np.diag_indices(d)] += jitter
    return SmoothCovariance(
        dim=d, factor=np.linalg.cholesky(S), blur_sigma=float(blur_sigma), jitter=jitter
    )


def drift_mean(
    x_vec: np.ndarray,
    j: int,
    s: int,
    train: TrainingSet,
    like,
    gamma: float,
) -> np.ndarray:
    """Proposal mean x - gamma * grad_E with grad_E the prior pull plus data term."""
    sigma = train.sigmas[s]
    grad = (x_vec - train.classes[s][j]) / (sigma * sigma) + like.energy_gradient(x_vec)
    return x_vec - gamma * grad


def propose_shape_for(
    x_vec: np.ndarray,
    j: int,
    s: int,
    train: TrainingSet,
    like,
    cov: SmoothCovariance,
    params: ProposalParams,
    rng: np.random.Generator,
) -> np.ndarray:
    """Raw-vector proposal draw against an arbitrary likelihood strategy."""
    mean = drift_mean(x_vec, j, s, train, like, params.gamma)
    if params.perturb_scale == 0.0:
        return mean
    eps = rng.standard_normal(cov.dim)
    return mean + params.perturb_scale * (cov.factor @ eps)


def propose_shape(
    x: LevelSet,
    j: int,
    s: int,
    train: TrainingSet,
    y: GrayImage,
    cov: SmoothCovariance,
    params: ProposalParams,
    likp: LikelihoodParams,
    rng: np.random.Generator,
) -> LevelSet:
    if not 0 <= j < train.class_size(s):
        raise IndexError(f"training index {j} out of range for class {s}")
    like = ChanVeseLikelihood(y, likp)
    out = propose_shape_for(x.data, j, s, train, like, cov, params, rng)
    return LevelSet(x.height, x.width, out)


def log_proposal_ratio_for(
    x_vec: np.ndarray,
    xp_vec: np.ndarray,
    j: int,
    s: int,
    train: TrainingSet,
    like,
    cov: SmoothCovariance,
    params: ProposalParams,
) -> float:
    """log q(x | x') - log q(x' | x) for the same (s, j) in both directions.

    Both densities share the normalization of N(0, ps^2 Sigma), which is
    never computed. A zero perturb_scale makes the kernel a point mass; the
    ratio is then defined as 0 (only the degenerate tests exercise this).
    """
    ps = params.perturb_scale
    if ps == 0.0:
        return 0.0
    mu_fwd = drift_mean(x_vec, j, s, train, like, params.gamma)
    mu_rev = drift_mean(xp_vec, j, s, train, like, params.gamma)
    r_fwd = cov.whiten(xp_vec - mu_fwd)
    r_rev = cov.whiten(x_vec - mu_rev)
    inv2 = 1.0 / (ps * ps)
    return 0.5 * inv2 * float(r_fwd @ r_fwd) - 0.5 * inv2 * float(r_rev @ r_rev)


def log_proposal_ratio(
    x: LevelSet,
    x_prime: LevelSet,
    j: int,
    s: int,
    train: TrainingSet,
    y: GrayImage,
    cov: SmoothCovariance,
    params: ProposalParams,
    likp: LikelihoodParams,
) -> float:
    like = ChanVeseLikelihood(y, likp)
    return log_proposal_ratio_for(x.data, x_prime.data, j, s, train, like, cov, params)
