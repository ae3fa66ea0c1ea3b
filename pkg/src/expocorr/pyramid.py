"""Gaussian and Laplacian image pyramids.

Blur is the separable binomial ``[1, 4, 6, 4, 1] / 16`` with mirror
(reflect-without-edge-repeat) borders; downsampling keeps every second
sample, so odd sizes round up. Expansion uses the same half-pixel bilinear
x2 upsampling as the network, cropped back to the finer level's size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .core.functional import upsample2x_array

BINOMIAL_5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
MIN_LEVELS, MAX_LEVELS = 2, 6


class PyramidError(ValueError):
    pass


@dataclass
class GaussPyramid:
    levels: list[np.ndarray]

    def __len__(self) -> int:
        return len(self.levels)

    def __getitem__(self, i: int) -> np.ndarray:
        return self.levels[i]

    @property
    def shapes(self) -> list[tuple[int, ...]]:
        return [lvl.shape for lvl in self.levels]


@dataclass
class LaplacePyramid:
    """``levels[:-1]`` are signed band-pass images, ``levels[-1]`` the low-pass residual."""

    levels: list[np.ndarray]

    def __len__(self) -> int:
        return len(self.levels)

    def __getitem__(self, i: int) -> np.ndarray:
        return self.levels[i]

    @property
    def shapes(self) -> list[tuple[int, ...]]:
        return [lvl.shape for lvl in self.levels]


def blur(img: np.ndarray, axes: tuple[int, int] = (0, 1)) -> np.ndarray:
    kernel = BINOMIAL_5.astype(img.dtype)
    out = correlate1d(img, kernel, axis=axes[0], mode="mirror")
    return correlate1d(out, kernel, axis=axes[1], mode="mirror")


def downsample(img: np.ndarray, axes: tuple[int, int] = (0, 1)) -> np.ndarray:
    out = blur(img, axes)
    index = [slice(None)] * img.ndim
    index[axes[0]] = slice(None, None, 2)
    index[axes[1]] = slice(None, None, 2)
    return np.ascontiguousarray(out[tuple(index)])


def expand(img: np.ndarray, shape: tuple[int, int], axes: tuple[int, int] = (0, 1)) -> np.ndarray:
    """Bilinear x2 upsample then crop the spatial axes to ``shape``."""
    up = upsample2x_array(img, axes)
    index = [slice(None)] * img.ndim
    index[axes[0]] = slice(0, shape[0])
    index[axes[1]] = slice(0, shape[1])
    return up[tuple(index)]


def _check(img: np.ndarray, levels: int, axes: tuple[int, int]) -> None:
    if not MIN_LEVELS <= levels <= MAX_LEVELS:
        raise PyramidError(f"levels must be in [{MIN_LEVELS}, {MAX_LEVELS}], got {levels}")
    need = 2 ** (levels - 1)
    h, w = img.shape[axes[0]], img.shape[axes[1]]
    if h < need or w < need:
        raise PyramidError(f"image {h}x{w} too small for {levels} levels (needs >= {need} per axis)")


def gauss_pyramid(img: np.ndarray, levels: int = 4, axes: tuple[int, int] = (0, 1)) -> GaussPyramid:
    img = np.asarray(img)
    _check(img, levels, axes)
    out = [img]
    for _ in range(levels - 1):
        out.append(downsample(out[-1], axes))
    return GaussPyramid(out)


def laplace_pyramid(img: np.ndarray, levels: int = 4, axes: tuple[int, int] = (0, 1)) -> LaplacePyramid:
    gp = gauss_pyramid(img, levels, axes)
    bands = []
    for fine, coarse in zip(gp.levels[:-1], gp.levels[1:]):
        size = (fine.shape[axes[0]], fine.shape[axes[1]])
        bands.append(fine - expand(coarse, size, axes))
    bands.append(gp.levels[-1])
    return LaplacePyramid(bands)


def collapse(lp: LaplacePyramid, clamp: bool = True, axes: tuple[int, int] = (0, 1)) -> np.ndarray:
    """Rebuild the image from its Laplacian pyramid (clamped to [0, 1] on request)."""
    levels = lp.levels
    if len(levels) < 1:
        raise PyramidError("empty pyramid")
    x = levels[-1]
    for band in reversed(levels[:-1]):
        h, w = band.shape[axes[0]], band.shape[axes[1]]
        expected = (-(-h // 2), -(-w // 2))
        got = (x.shape[axes[0]], x.shape[axes[1]])
        if got != expected or band.ndim != x.ndim:
            raise PyramidError(f"level shape {x.shape} is not the half-size of {band.shape}")
        x = band + expand(x, (h, w), axes)
    return np.clip(x, 0.0, 1.0) if clamp else x


def band_visual(band: np.ndarray) -> np.ndarray:
    """Map a signed band-pass level to [0, 1] for display."""
    return np.clip(band + 0.5, 0.0, 1.0)
