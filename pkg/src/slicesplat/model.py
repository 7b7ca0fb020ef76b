"""Canonical 2D Gaussian primitives and the per-volume model.

Coordinate convention: image x grows with columns, y with rows, and the
center of pixel (row r, col c) is at (c + 0.5, r + 0.5). Means live in
pixel units. Scales are stored as log-scales, opacity as a logit, so the
optimizer works on unconstrained parameters. Every Gaussian shares one
axial coordinate and one axial scale (Z0, SZ0 below); an axial slice
therefore observes a plain 2D Gaussian with an in-plane rotation angle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

# Shared axial constants: the axial coordinate and axial scale are fixed and
# identical for all Gaussians, so they are module-level constants rather than
# per-Gaussian state. Their values are arbitrary; only their uniformity matters.
Z0 = 0.0
SZ0 = 1.0

# Added to the covariance diagonal before inversion.
EPS_DIAG = 1e-6

# Column layout of a deformation delta vector / batch. There are exactly five
# slots: axial offset, axial scale offset and rotation offset do not exist.
DELTA_DIM = 5
COL_DX, COL_DY, COL_DLSX, COL_DLSY, COL_DOP = range(DELTA_DIM)


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p / (1.0 - p))


@dataclass
class Gaussian2D:
    """One primitive: in-plane mean, log-scales, rotation, opacity logit, intensity."""

    mean: tuple[float, float]
    log_scale: tuple[float, float]
    rotation: float
    opacity_logit: float
    intensity: float

    @property
    def opacity(self) -> float:
        return float(sigmoid(self.opacity_logit))

    @property
    def scale(self) -> tuple[float, float]:
        return (math.exp(self.log_scale[0]), math.exp(self.log_scale[1]))


@dataclass
class DeformationDelta:
    """Per-Gaussian offsets predicted by the deformation field.

    Carries only in-plane mean, in-plane log-scale and opacity-logit offsets;
    there is no axial, axial-scale or rotation component by construction.
    """

    d_mean: tuple[float, float] = (0.0, 0.0)
    d_log_scale: tuple[float, float] = (0.0, 0.0)
    d_opacity_logit: float = 0.0

    def as_array(self) -> np.ndarray:
        out = np.empty(DELTA_DIM, dtype=np.float64)
        out[COL_DX], out[COL_DY] = self.d_mean
        out[COL_DLSX], out[COL_DLSY] = self.d_log_scale
        out[COL_DOP] = self.d_opacity_logit
        return out

    @staticmethod
    def from_array(row: np.ndarray) -> "DeformationDelta":
        return DeformationDelta(
            d_mean=(float(row[COL_DX]), float(row[COL_DY])),
            d_log_scale=(float(row[COL_DLSX]), float(row[COL_DLSY])),
            d_opacity_logit=float(row[COL_DOP]),
        )


def build_covariance(log_scale, rotation: float) -> np.ndarray:
    """2x2 covariance R(theta) diag(sx^2, sy^2) R(theta)^T.

    Symmetric positive definite by construction; eigenvalues are exactly
    (sx^2, sy^2) with s = exp(log_scale). No epsilon here -- EPS_DIAG is
    applied by callers just before inversion.
    """
    sx2 = math.exp(2.0 * log_scale[0])
    sy2 = math.exp(2.0 * log_scale[1])
    c = math.cos(rotation)
    s = math.sin(rotation)
    sxx = c * c * sx2 + s * s * sy2
    syy = s * s * sx2 + c * c * sy2
    sxy = c * s * (sx2 - sy2)
    return np.array([[sxx, sxy], [sxy, syy]], dtype=np.float64)


def invert_covariance(cov: np.ndarray) -> np.ndarray:
    """Inverse of cov + EPS_DIAG*I (the conic used for evaluation)."""
    a = cov[0, 0] + EPS_DIAG
    b = cov[0, 1]
    c = cov[1, 1] + EPS_DIAG
    det = a * c - b * b
    return np.array([[c, -b], [-b, a]], dtype=np.float64) / det


def eval_gaussian(g: Gaussian2D, p) -> float:
    """Unnormalized density exp(-0.5 d^T Sigma^-1 d) at point p, in (0, 1]."""
    conic = invert_covariance(build_covariance(g.log_scale, g.rotation))
    dx = p[0] - g.mean[0]
    dy = p[1] - g.mean[1]
    q = conic[0, 0] * dx * dx + 2.0 * conic[0, 1] * dx * dy + conic[1, 1] * dy * dy
    return math.exp(-0.5 * q)


def apply_deformation(g: Gaussian2D, delta: DeformationDelta) -> Gaussian2D:
    """Offset mean, log-scale and opacity logit; rotation and intensity pass through."""
    return replace(
        g,
        mean=(g.mean[0] + delta.d_mean[0], g.mean[1] + delta.d_mean[1]),
        log_scale=(
            g.log_scale[0] + delta.d_log_scale[0],
            g.log_scale[1] + delta.d_log_scale[1],
        ),
        opacity_logit=g.opacity_logit + delta.d_opacity_logit,
    )


def timestamp_of_slice(index: int, total: int) -> float:
    """Normalized axial coordinate t = index / (total - 1)."""
    if total < 2:
        raise ValueError(f"cannot normalize timestamps for {total} slice(s); need >= 2")
    if not 0 <= index <= total - 1:
        raise ValueError(f"slice index {index} out of range for {total} slices")
    return index / (total - 1)


class VolumeModel:
    """The full Gaussian set for one volume, stored as arrays.

    Ordering is stable: it is the creation order, changed only by explicit
    density-control events (which append new Gaussians and drop pruned rows).
    """

    def __init__(self, means, log_scales, rotations, opacity_logits, intensities,
                 width: int, height: int, z0: float = Z0, sz0: float = SZ0):
        self.means = np.ascontiguousarray(means, dtype=np.float64).reshape(-1, 2)
        n = self.means.shape[0]
        self.log_scales = np.ascontiguousarray(log_scales, dtype=np.float64).reshape(n, 2)
        self.rotations = np.ascontiguousarray(rotations, dtype=np.float64).reshape(n)
        self.opacity_logits = np.ascontiguousarray(opacity_logits, dtype=np.float64).reshape(n)
        self.intensities = np.ascontiguousarray(intensities, dtype=np.float64).reshape(n)
        self.width = int(width)
        self.height = int(height)
        self.z0 = float(z0)
        self.sz0 = float(sz0)

    @property
    def n(self) -> int:
        return self.means.shape[0]

    def gaussian(self, i: int) -> Gaussian2D:
        return Gaussian2D(
            mean=(float(self.means[i, 0]), float(self.means[i, 1])),
            log_scale=(float(self.log_scales[i, 0]), float(self.log_scales[i, 1])),
            rotation=float(self.rotations[i]),
            opacity_logit=float(self.opacity_logits[i]),
            intensity=float(self.intensities[i]),
        )

    @classmethod
    def from_gaussians(cls, gaussians, width: int, height: int) -> "VolumeModel":
        gs = list(gaussians)
        return cls(
            means=np.array([g.mean for g in gs], dtype=np.float64).reshape(-1, 2),
            log_scales=np.array([g.log_scale for g in gs], dtype=np.float64).reshape(-1, 2),
            rotations=np.array([g.rotation for g in gs], dtype=np.float64),
            opacity_logits=np.array([g.opacity_logit for g in gs], dtype=np.float64),
            intensities=np.array([g.intensity for g in gs], dtype=np.float64),
            width=width,
            height=height,
        )

    def copy(self) -> "VolumeModel":
        return VolumeModel(
            self.means.copy(), self.log_scales.copy(), self.rotations.copy(),
            self.opacity_logits.copy(), self.intensities.copy(),
            self.width, self.height,
        )

    def deformed(self, deltas: np.ndarray | None):
        """Apply a (n, 5) delta batch; returns (means, log_scales, opacity_logits).

        Rotation and intensity have no delta slots and are read straight from
        the model by consumers.
        """
        if deltas is None:
            return self.means, self.log_scales, self.opacity_logits
        deltas = np.asarray(deltas, dtype=np.float64)
        if deltas.shape != (self.n, DELTA_DIM):
            raise ValueError(
                f"delta batch shape {deltas.shape} does not match "
                f"({self.n}, {DELTA_DIM})"
            )
        return (
            self.means + deltas[:, (COL_DX, COL_DY)],
            self.log_scales + deltas[:, (COL_DLSX, COL_DLSY)],
            self.opacity_logits + deltas[:, COL_DOP],
        )


def bilinear_sample(image: np.ndarray, x: float, y: float) -> float:
    """Sample image at continuous (x, y) with pixel centers on half-integers."""
    h, w = image.shape
    fx = min(max(x - 0.5, 0.0), w - 1.0)
    fy = min(max(y - 0.5, 0.0), h - 1.0)
    x0 = min(int(fx), w - 2) if w > 1 else 0
    y0 = min(int(fy), h - 2) if h > 1 else 0
    x1 = min(x0 + 1, w - 1)
    y1 = min(y0 + 1, h - 1)
    ax = fx - x0
    ay = fy - y0
    return float(
        image[y0, x0] * (1 - ax) * (1 - ay)
        + image[y0, x1] * ax * (1 - ay)
        + image[y1, x0] * (1 - ax) * ay
        + image[y1, x1] * ax * ay
    )


def initialize_model(first_slice: np.ndarray, seed: int,
                     max_gaussians: int | None = None,
                     init_scale_px: float = 1.5,
                     init_opacity: float = 0.1) -> VolumeModel:
    """Dense jittered-grid initialization from the first observed slice.

    One Gaussian per 2x2-pixel cell (25% of the pixel count), capped at
    max_gaussians by seeded subsampling of the cells. Intensity starts at the
    bilinear sample of the slice at each mean, which gives a strong
    photometric start without any structure estimation.
    """
    height, width = first_slice.shape
    rng = np.random.default_rng(seed)
    cells = [
        (cx, cy)
        for cy in range(math.ceil(height / 2))
        for cx in range(math.ceil(width / 2))
    ]
    if max_gaussians is not None and max_gaussians < len(cells):
        idx = rng.choice(len(cells), size=max_gaussians, replace=False)
        cells = [cells[i] for i in sorted(idx)]
    n = len(cells)
    means = np.empty((n, 2), dtype=np.float64)
    for i, (cx, cy) in enumerate(cells):
        means[i, 0] = min((cx * 2) + rng.uniform(0.0, 2.0), width - 1e-9)
        means[i, 1] = min((cy * 2) + rng.uniform(0.0, 2.0), height - 1e-9)
    intensities = np.array(
        [bilinear_sample(first_slice, mx, my) for mx, my in means], dtype=np.float64
    )
    return VolumeModel(
        means=means,
        log_scales=np.full((n, 2), math.log(init_scale_px)),
        rotations=np.zeros(n),
        opacity_logits=np.full(n, float(logit(init_opacity))),
        intensities=intensities,
        width=width,
        height=height,
    )
