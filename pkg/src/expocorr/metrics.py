"""Full-reference quality metrics: PSNR and SSIM.

SSIM follows Wang et al. (2004): an 11-tap Gaussian window (sigma 1.5) applied
with 'valid' extent, K1 = 0.01, K2 = 0.03, computed per channel and averaged.
:func:`ssim_tensor` is the differentiable twin used by the training loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import functional as F
from .core.tensor import Tensor

PSNR_INF = math.inf


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class SsimParams:
    window_size: int = 11
    window_sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    peak: float = 1.0

    def __post_init__(self):
        if self.window_size < 1 or self.window_size % 2 == 0:
            raise MetricError(f"window_size must be odd and positive, got {self.window_size}")
        if self.window_sigma <= 0 or self.peak <= 0 or self.k1 <= 0 or self.k2 <= 0:
            raise MetricError("window_sigma, peak, k1 and k2 must be positive")

    @property
    def c1(self) -> float:
        return (self.k1 * self.peak) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.peak) ** 2

    def window(self) -> np.ndarray:
        r = np.arange(self.window_size, dtype=np.float64) - (self.window_size - 1) / 2
        g = np.exp(-(r**2) / (2.0 * self.window_sigma**2))
        return g / g.sum()


def _same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise MetricError(f"dimension mismatch: {a.shape} vs {b.shape}")


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """PSNR in dB; ``math.inf`` when the images are identical."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _same_shape(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_INF
    return 10.0 * math.log10(peak**2 / mse)


def _filter_valid(x: np.ndarray, taps: np.ndarray, axis: int) -> np.ndarray:
    n = x.shape[axis] - len(taps) + 1
    x = np.moveaxis(x, axis, 0)
    out = taps[0] * x[0:n]
    for k in range(1, len(taps)):
        out = out + taps[k] * x[k : k + n]
    return np.moveaxis(out, 0, axis)


def ssim_map(a: np.ndarray, b: np.ndarray, params: SsimParams = SsimParams()) -> np.ndarray:
    """Local SSIM map of H x W (x C) images; spatial size shrinks by window_size - 1."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _same_shape(a, b)
    if min(a.shape[0], a.shape[1]) < params.window_size:
        raise MetricError(f"image {a.shape[:2]} smaller than the {params.window_size}px SSIM window")
    g = params.window()

    def smooth(x):
        return _filter_valid(_filter_valid(x, g, 0), g, 1)

    mu_a, mu_b = smooth(a), smooth(b)
    var_a = smooth(a * a) - mu_a * mu_a
    var_b = smooth(b * b) - mu_b * mu_b
    cov = smooth(a * b) - mu_a * mu_b
    c1, c2 = params.c1, params.c2
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a: np.ndarray, b: np.ndarray, params: SsimParams = SsimParams()) -> float:
    """Mean SSIM over the local map of each channel, averaged over channels."""
    return float(np.mean(ssim_map(a, b, params)))


def ssim_tensor(x: Tensor, y: Tensor, params: SsimParams = SsimParams()) -> Tensor:
    """Differentiable mean SSIM of two NCHW batches (scalar tensor)."""
    if x.shape != y.shape:
        raise MetricError(f"dimension mismatch: {x.shape} vs {y.shape}")
    n, c, h, w = x.shape
    if min(h, w) < params.window_size:
        raise MetricError(f"image {h}x{w} smaller than the {params.window_size}px SSIM window")
    g = params.window()
    stacked = F.concat([x, y, x * x, y * y, x * y], axis=0)
    smoothed = F.filter_valid(F.filter_valid(stacked, g, 2), g, 3)
    mu_x, mu_y = smoothed[0:n], smoothed[n : 2 * n]
    e_xx, e_yy, e_xy = smoothed[2 * n : 3 * n], smoothed[3 * n : 4 * n], smoothed[4 * n : 5 * n]

    mu_xy = mu_x * mu_y
    mu_xx = mu_x * mu_x
    mu_yy = mu_y * mu_y
    num = (2.0 * mu_xy + params.c1) * (2.0 * (e_xy - mu_xy) + params.c2)
    den = (mu_xx + mu_yy + params.c1) * ((e_xx - mu_xx) + (e_yy - mu_yy) + params.c2)
    return F.mean(num / den)
