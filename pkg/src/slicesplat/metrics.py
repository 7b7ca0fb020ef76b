"""Image-quality metrics: MSE, PSNR, and SSIM with an exact gradient.

SSIM uses an 11x11 Gaussian window (sigma 1.5), C1=1e-4 and C2=9e-4 for
images on [0, 1], and symmetric border padding. The gradient variant feeds
the D-SSIM term of the photometric loss; its window adjoint folds padded
borders back exactly, so finite differences agree everywhere including
edges.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def mse(a: np.ndarray, b: np.ndarray) -> float:
    a, b = _check_pair(a, b)
    d = a - b
    return float(np.mean(d * d))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10*log10(1/mse) for [0,1] images; +inf for identical inputs."""
    m = mse(a, b)
    if m == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / m)


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def _window() -> np.ndarray:
    half = SSIM_WINDOW // 2
    x = np.arange(SSIM_WINDOW) - half
    k = np.exp(-(x * x) / (2.0 * SSIM_SIGMA ** 2))
    k /= k.sum()
    return np.outer(k, k)


_WIN = _window()
_PAD = SSIM_WINDOW // 2


def _pad_index(shape):
    """Source-pixel index map for symmetric padding (edge repeated)."""
    idx = np.arange(shape[0] * shape[1]).reshape(shape)
    return np.pad(idx, _PAD, mode="symmetric")


def _filt(img: np.ndarray, idx: np.ndarray) -> np.ndarray:
    return convolve2d(img.ravel()[idx], _WIN, mode="valid")


def _filt_adjoint(grad: np.ndarray, idx: np.ndarray, shape) -> np.ndarray:
    """Exact adjoint of _filt: full correlation then fold borders back."""
    g_pad = convolve2d(grad, _WIN, mode="full")
    flat = np.bincount(idx.ravel(), weights=g_pad.ravel(),
                       minlength=shape[0] * shape[1])
    return flat.reshape(shape)


def _ssim_terms(x: np.ndarray, y: np.ndarray):
    idx = _pad_index(x.shape)
    mu_x = _filt(x, idx)
    mu_y = _filt(y, idx)
    xx = _filt(x * x, idx)
    yy = _filt(y * y, idx)
    xy = _filt(x * y, idx)
    var_x = xx - mu_x * mu_x
    var_y = yy - mu_y * mu_y
    cov = xy - mu_x * mu_y
    a1 = 2.0 * mu_x * mu_y + SSIM_C1
    a2 = 2.0 * cov + SSIM_C2
    b1 = mu_x * mu_x + mu_y * mu_y + SSIM_C1
    b2 = var_x + var_y + SSIM_C2
    s = (a1 * a2) / (b1 * b2)
    return idx, mu_x, mu_y, var_x, a1, a2, b1, b2, s


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean local SSIM over all pixels."""
    a, b = _check_pair(a, b)
    return float(np.mean(_ssim_terms(a, b)[-1]))


def ssim_with_grad(x: np.ndarray, y: np.ndarray):
    """(mean SSIM, gradient of mean SSIM w.r.t. x)."""
    x, y = _check_pair(x, y)
    idx, mu_x, mu_y, var_x, a1, a2, b1, b2, s = _ssim_terms(x, y)
    n = x.size
    u = 1.0 / n  # upstream d(mean)/dS per pixel
    inv_bb = 1.0 / (b1 * b2)
    d_a1 = a2 * inv_bb
    d_a2 = a1 * inv_bb
    d_b1 = -s / b1
    d_b2 = -s / b2
    # S depends on mu_x directly and through var_x = E[x^2] - mu_x^2 and
    # cov = E[xy] - mu_x mu_y; split into the three filtered fields.
    d_mu = u * (2.0 * mu_y * d_a1 + 2.0 * mu_x * d_b1
                - 2.0 * mu_x * d_b2 - mu_y * 2.0 * d_a2)
    d_xx = u * d_b2
    d_xy = u * 2.0 * d_a2
    shape = x.shape
    grad = (_filt_adjoint(d_mu, idx, shape)
            + _filt_adjoint(d_xx, idx, shape) * 2.0 * x
            + _filt_adjoint(d_xy, idx, shape) * y)
    return float(np.mean(s)), grad


@dataclass
class MetricReport:
    """Per-slice PSNR/SSIM plus means, printable as a table or key-values."""

    slice_ids: list
    psnrs: list
    ssims: list
    label: str = "slices"

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnrs)) if self.psnrs else math.nan

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssims)) if self.ssims else math.nan

    def as_table(self) -> str:
        lines = [f"{'slice':>8} {'psnr_db':>10} {'ssim':>8}"]
        for sid, p, s in zip(self.slice_ids, self.psnrs, self.ssims):
            lines.append(f"{sid:>8} {p:>10.4f} {s:>8.4f}")
        lines.append(f"{'mean':>8} {self.mean_psnr:>10.4f} "
                     f"{self.mean_ssim:>8.4f}")
        return "\n".join(lines)

    def as_keyvalues(self) -> str:
        lines = []
        for sid, p, s in zip(self.slice_ids, self.psnrs, self.ssims):
            lines.append(f"{self.label}.{sid}.psnr = {p:.6f}")
            lines.append(f"{self.label}.{sid}.ssim = {s:.6f}")
        lines.append(f"{self.label}.mean.psnr = {self.mean_psnr:.6f}")
        lines.append(f"{self.label}.mean.ssim = {self.mean_ssim:.6f}")
        return "\n".join(lines)
