"""Photometric training loss: L1 blended with D-SSIM."""

import numpy as np

from .metrics import ssim_with_grad

DSSIM_WEIGHT = 0.2


def photometric_loss(rendered: np.ndarray, target: np.ndarray,
                     dssim_weight: float = DSSIM_WEIGHT):
    """L = (1-w)*mean|r-t| + w*(1-SSIM)/2, with its image-space gradient.

    Returns (loss, grad_image, l1, dssim); grad_image is dL/d(rendered).
    """
    rendered = np.asarray(rendered, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if rendered.shape != target.shape:
        raise ValueError(f"image shapes differ: {rendered.shape} vs "
                         f"{target.shape}")
    diff = rendered - target
    l1 = float(np.mean(np.abs(diff)))
    grad = (1.0 - dssim_weight) * np.sign(diff) / diff.size
    if dssim_weight != 0.0:
        s, s_grad = ssim_with_grad(rendered, target)
        dssim = (1.0 - s) / 2.0
        grad = grad + dssim_weight * (-0.5) * s_grad
    else:
        dssim = 0.0
    loss = (1.0 - dssim_weight) * l1 + dssim_weight * dssim
    return loss, grad, l1, dssim
