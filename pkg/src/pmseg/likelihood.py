"""Piecewise-constant (Chan-Vese) data fidelity and its pixelwise gradient.

log p(y|x) is the negative two-region squared residual of the image against
its inside/outside means, scaled by beta; the additive normalization is
dropped because it cancels in every Metropolis-Hastings ratio. The gradient
freezes the region means at the current mask, which is the discrete
approximation used by the proposal drift.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import GrayImage, LevelSet, levelset_to_mask, region_means


@dataclass(frozen=True)
class LikelihoodParams:
    """beta scales the residual energy (inverse noise-variance role)."""

    beta: float = 1.0

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")


def log_likelihood(y: GrayImage, x: LevelSet, params: LikelihoodParams) -> float:
    if (y.height, y.width) != (x.height, x.width):
        raise ValueError(
            f"image is {y.height}x{y.width} but level set is {x.height}x{x.width}"
        )
    mask = levelset_to_mask(x)
    mu_in, mu_out = region_means(y, mask)
    ones = mask.data == 1
    res_in = y.data[ones] - mu_in
    res_out = y.data[~ones] - mu_out
    return -params.beta * (float(res_in @ res_in) + float(res_out @ res_out))


def data_gradient(y: GrayImage, x: LevelSet, params: LikelihoodParams) -> np.ndarray:
    """beta * [(y - mu_in)^2 - (y - mu_out)^2] elementwise, means frozen at the mask."""
    if (y.height, y.width) != (x.height, x.width):
        raise ValueError(
            f"image is {y.height}x{y.width} but level set is {x.height}x{x.width}"
        )
    mu_in, mu_out = region_means(y, levelset_to_mask(x))
    return params.beta * ((y.data - mu_in) ** 2 - (y.data - mu_out) ** 2)


class ChanVeseLikelihood:
    """Likelihood strategy binding an observed image to the functions above.

    The sampler talks to likelihoods through log_density / energy_gradient
    on raw level-set vectors so that alternative observation models (the
    exactness toy uses a Gaussian one) can be swapped in.
    """

    def __init__(self, y: GrayImage, params: LikelihoodParams):
        self.y = y
        self.params = params

    def log_density(self, x_vec: np.ndarray) -> float:
        x = LevelSet(self.y.height, self.y.width, x_vec)
        return log_likelihood(self.y, x, self.params)

    def energy_gradient(self, x_vec: np.ndarray) -> np.ndarray:
        x = LevelSet(self.y.height, self.y.width, x_vec)
        return data_gradient(self.y, x, self.params)


class IsotropicGaussianLikelihood:
    """Gaussian observation directly on the level-set vector.

    log p(y|x) = -precision/2 * ||x - target||^2 up to a constant. Smooth in
    x, which makes full-drift finite-difference checks meaningful; used by
    the low-dimensional exactness harness.
    """

    def __init__(self, target: np.ndarray, precision: float = 1.0):
        if not precision > 0:
            raise ValueError(f"precision must be positive, got {precision}")
        self.target = np.asarray(target, dtype=np.float64)
        self.precision = float(precision)

    def log_density(self, x_vec: np.ndarray) -> float:
        diff = x_vec - self.target
        return -0.5 * self.precision * float(diff @ diff)

    def energy_gradient(self, x_vec: np.ndarray) -> np.ndarray:
        return self.precision * (x_vec - self.target)
