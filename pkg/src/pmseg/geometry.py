"""Binary masks, level-set embeddings, and region statistics.

A segmentation is carried in two interchangeable forms: a binary mask over
the M x N pixel grid, and its level-set embedding, the signed Euclidean
distance to the nearest opposite-region pixel (positive inside the object).
Thresholding the level set at zero recovers the mask exactly, so the two
maps are mutual pseudo-inverses on the set of binary masks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class GrayImage:
    """Observed image: row-major intensities in [0, 1], length height*width."""

    height: int
    width: int
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.shape != (self.height * self.width,):
            raise ValueError(
                f"image data length {data.shape} does not match {self.height}x{self.width}"
            )
        if not np.all(np.isfinite(data)):
            raise ValueError("image intensities must be finite")
        if data.size and (data.min() < 0.0 or data.max() > 1.0):
            raise ValueError("image intensities must lie in [0, 1]")
        object.__setattr__(self, "data", data)

    def grid(self) -> np.ndarray:
        return self.data.reshape(self.height, self.width)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.data, dtype=dtype)


@dataclass(frozen=True)
class BinaryMask:
    """Segmenting curve: row-major values in {0, 1}, 1 = object."""

    height: int
    width: int
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.uint8)
        if data.shape != (self.height * self.width,):
            raise ValueError(
                f"mask data length {data.shape} does not match {self.height}x{self.width}"
            )
        if data.size and data.max() > 1:
            raise ValueError("mask values must be 0 or 1")
        object.__setattr__(self, "data", data)

    def grid(self) -> np.ndarray:
        return self.data.reshape(self.height, self.width)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.data, dtype=dtype)


@dataclass(frozen=True)
class LevelSet:
    """Level-set embedding x = phi(c): flattened row-major, positive inside.

    Values are assumed finite; producers (mask_to_levelset, the proposal)
    guarantee this, and consumers do not re-validate on every construction
    because level sets are created inside the sampler's hot loop.
    """

    height: int
    width: int
    data: np.ndarray

    def grid(self) -> np.ndarray:
        return self.data.reshape(self.height, self.width)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.data, dtype=dtype)


def mask_to_levelset(mask: BinaryMask) -> LevelSet:
    """Signed exact Euclidean distance transform of a binary mask.

    Inside pixels get +distance to the nearest outside pixel, outside pixels
    -distance to the nearest inside pixel. A mask with no boundary (all zeros
    or all ones) has no opposite pixel anywhere; those pixels get a finite
    sentinel distance of height+width, which is >= 1 for any valid mask and
    keeps every downstream density evaluation finite.
    """
    grid = mask.grid().astype(bool)
    M, N = mask.height, mask.width
    sentinel = float(M + N)
    if not grid.any():
        return LevelSet(M, N, np.full(M * N, -sentinel))
    if grid.all():
        return LevelSet(M, N, np.full(M * N, sentinel))
    # distance_transform_edt measures to the nearest zero of its argument,
    # so each of the two calls covers one region and is zero on the other
    d_in = ndimage.distance_transform_edt(grid)
    d_out = ndimage.distance_transform_edt(~grid)
    return LevelSet(M, N, (d_in - d_out).ravel())


def levelset_to_mask(x: LevelSet) -> BinaryMask:
    """Threshold a level set at zero: strictly positive maps to object."""
    return BinaryMask(x.height, x.width, (x.data > 0).astype(np.uint8))


def region_means(y: GrayImage, mask: BinaryMask) -> tuple[float, float]:
    """Mean intensity inside and outside the mask.

    An empty region has no well-defined mean; it falls back to 0.5 (the
    midpoint of the intensity range) so degenerate proposals keep the
    likelihood and its gradient finite instead of aborting the chain.
    """
    if (y.height, y.width) != (mask.height, mask.width):
        raise ValueError(
            f"image is {y.height}x{y.width} but mask is {mask.height}x{mask.width}"
        )
    ones = mask.data == 1
    n_in = int(ones.sum())
    n_out = ones.size - n_in
    mu_in = float(y.data[ones].mean()) if n_in else 0.5
    mu_out = float(y.data[~ones].mean()) if n_out else 0.5
    return mu_in, mu_out
