"""Differentiable tile-based compositing of 2D Gaussians into an image.

`render` produces the image plus a `RenderAux` record of every surviving
contribution (Gaussian id, alpha, transmittance before blending) per pixel;
`render_backward` consumes it to push a loss-image gradient back onto all
per-Gaussian parameters analytically. Both dispatch to the numba kernels or
the pure-numpy fallback chosen by `slicesplat.backends`.
"""

from dataclasses import dataclass, field

import numpy as np

from .backends import get_kernels
from .model import EPS_DIAG, VolumeModel

TILE = 16
ALPHA_SKIP = 1.0 / 255.0
ALPHA_CLAMP = 0.99
FOOTPRINT_SIGMA = 3.0


@dataclass
class _Geometry:
    """Deformed per-Gaussian quantities shared by forward and backward."""

    means: np.ndarray
    conics: np.ndarray
    opacs: np.ndarray
    intens: np.ndarray
    int_live: np.ndarray
    sx2: np.ndarray
    sy2: np.ndarray
    cosr: np.ndarray
    sinr: np.ndarray
    radii: np.ndarray
    q_cut: np.ndarray


@dataclass
class RenderAux:
    """Per-pixel contribution record from a forward render.

    `offsets` indexes pixel-major (row * width + col) slices into the flat
    `ids`/`alphas`/`trans` arrays; `trans` holds the transmittance *before*
    each blend, `t_final` the leftover transmittance per pixel.
    """

    width: int
    height: int
    n_gaussians: int
    offsets: np.ndarray
    ids: np.ndarray
    alphas: np.ndarray
    trans: np.ndarray
    t_final: np.ndarray
    touched: np.ndarray
    geometry: _Geometry = field(repr=False, default=None)

    def pixel_contributions(self, row: int, col: int):
        """(ids, alphas, trans) for one pixel, in blending order."""
        pix = row * self.width + col
        sl = slice(self.offsets[pix], self.offsets[pix + 1])
        return self.ids[sl], self.alphas[sl], self.trans[sl]


@dataclass
class RenderGrads:
    """Loss gradients w.r.t. deformed per-Gaussian parameters.

    Deformation offsets are additive, so these equal the gradients w.r.t.
    the base parameters and w.r.t. the deformation deltas alike.
    """

    d_means: np.ndarray
    d_log_scales: np.ndarray
    d_rotations: np.ndarray
    d_opacity_logits: np.ndarray
    d_intensities: np.ndarray

    def delta_batch(self) -> np.ndarray:
        """(n, 5) gradient w.r.t. [dx, dy, dls_x, dls_y, do_logit] deltas."""
        return np.column_stack([self.d_means,
                                self.d_log_scales,
                                self.d_opacity_logits])


def _prepare(model: VolumeModel, deltas) -> _Geometry:
    if deltas is None:
        means = model.means.astype(np.float64, copy=True)
        log_scales = model.log_scales
        logits = model.opacity_logits
    else:
        deltas = np.asarray(deltas, dtype=np.float64)
        if deltas.shape != (model.n, 5):
            raise ValueError(f"deltas must have shape ({model.n}, 5), "
                             f"got {deltas.shape}")
        means = model.means + deltas[:, 0:2]
        log_scales = model.log_scales + deltas[:, 2:4]
        logits = model.opacity_logits + deltas[:, 4]
    sx2 = np.exp(2.0 * log_scales[:, 0])
    sy2 = np.exp(2.0 * log_scales[:, 1])
    cosr = np.cos(model.rotations)
    sinr = np.sin(model.rotations)
    # Sigma = R diag(sx2, sy2) R^T, then conic = inv(Sigma + eps I).
    s00 = cosr * cosr * sx2 + sinr * sinr * sy2 + EPS_DIAG
    s01 = cosr * sinr * (sx2 - sy2)
    s11 = sinr * sinr * sx2 + cosr * cosr * sy2 + EPS_DIAG
    det = s00 * s11 - s01 * s01
    conics = np.column_stack([s11 / det, -s01 / det, s00 / det])
    opacs = 1.0 / (1.0 + np.exp(-logits))
    raw_int = model.intensities
    intens = np.clip(raw_int, 0.0, 1.0)
    int_live = ((raw_int >= 0.0) & (raw_int <= 1.0)).astype(np.float64)
    radii = FOOTPRINT_SIGMA * np.sqrt(np.maximum(sx2, sy2) + EPS_DIAG)
    with np.errstate(divide="ignore"):
        q_cut = np.where(opacs * 255.0 > 1.0,
                         2.0 * np.log(opacs * 255.0), -1.0)
    return _Geometry(np.ascontiguousarray(means), conics, opacs, intens,
                     int_live, sx2, sy2, cosr, sinr, radii, q_cut)


def _bin_tiles(geom: _Geometry, width: int, height: int):
    """Assign each Gaussian to every tile its footprint box overlaps.

    Returns flat per-tile id lists (ascending within a tile), offsets, the
    tile-grid width, and a touched mask for Gaussians overlapping the image.
    """
    tiles_x = (width + TILE - 1) // TILE
    tiles_y = (height + TILE - 1) // TILE
    mx = geom.means[:, 0]
    my = geom.means[:, 1]
    r = geom.radii
    tx0 = np.maximum(np.floor((mx - r) / TILE).astype(np.int64), 0)
    tx1 = np.minimum(np.floor((mx + r) / TILE).astype(np.int64), tiles_x - 1)
    ty0 = np.maximum(np.floor((my - r) / TILE).astype(np.int64), 0)
    ty1 = np.minimum(np.floor((my + r) / TILE).astype(np.int64), tiles_y - 1)
    touched = (tx0 <= tx1) & (ty0 <= ty1)
    nx = np.where(touched, tx1 - tx0 + 1, 0)
    ny = np.where(touched, ty1 - ty0 + 1, 0)
    per_gauss = nx * ny
    total = int(per_gauss.sum())
    gids = np.repeat(np.arange(len(mx), dtype=np.int32), per_gauss)
    if total:
        # local tile index within each Gaussian's (ny, nx) block
        starts = np.concatenate(([0], np.cumsum(per_gauss)[:-1]))
        local = np.arange(total, dtype=np.int64) - starts[gids]
        lx = local % nx[gids]
        ly = local // nx[gids]
        tiles = (ty0[gids] + ly) * tiles_x + (tx0[gids] + lx)
        order = np.lexsort((gids, tiles))
        tile_gauss = gids[order]
        counts = np.bincount(tiles, minlength=tiles_x * tiles_y)
    else:
        tile_gauss = np.empty(0, dtype=np.int32)
        counts = np.zeros(tiles_x * tiles_y, dtype=np.int64)
    tile_offsets = np.zeros(tiles_x * tiles_y + 1, dtype=np.int64)
    np.cumsum(counts, out=tile_offsets[1:])
    return tile_gauss, tile_offsets, tiles_x, touched


def render(model: VolumeModel, deltas=None, kernels=None):
    """Composite the (optionally deformed) model; returns (image, aux)."""
    geom = _prepare(model, deltas)
    tile_gauss, tile_offsets, tiles_x, touched = _bin_tiles(
        geom, model.width, model.height)
    kern = kernels if kernels is not None else get_kernels()
    image, t_final, offsets, ids, alphas, trans = kern.forward(
        model.height, model.width, geom.means, geom.conics, geom.opacs,
        geom.intens, geom.radii, geom.q_cut, tile_gauss, tile_offsets,
        tiles_x)
    aux = RenderAux(model.width, model.height, model.n, offsets, ids,
                    alphas, trans, t_final, touched, geom)
    return image, aux


def render_backward(grad_image: np.ndarray, aux: RenderAux,
                    model: VolumeModel, kernels=None) -> RenderGrads:
    """Pull an image-space gradient back to per-Gaussian parameter space."""
    if aux.n_gaussians != model.n:
        raise ValueError("aux does not match model size")
    grad_image = np.ascontiguousarray(grad_image, dtype=np.float64)
    if grad_image.shape != (aux.height, aux.width):
        raise ValueError("grad_image shape mismatch")
    geom = aux.geometry
    kern = kernels if kernels is not None else get_kernels()
    grads = kern.backward(aux.height, aux.width, geom.means, geom.conics,
                          geom.opacs, geom.intens, geom.int_live, geom.sx2,
                          geom.sy2, geom.cosr, geom.sinr, grad_image,
                          aux.offsets, aux.ids, aux.alphas, aux.trans)
    return RenderGrads(d_means=grads[:, 0:2].copy(),
                       d_log_scales=grads[:, 2:4].copy(),
                       d_rotations=grads[:, 4].copy(),
                       d_opacity_logits=grads[:, 5].copy(),
                       d_intensities=grads[:, 6].copy())


def dump_aux(aux: RenderAux, path) -> None:
    """Write every contribution as text lines: row col id alpha T."""
    with open(path, "w") as fh:
        fh.write(f"# width={aux.width} height={aux.height} "
                 f"gaussians={aux.n_gaussians}\n")
        for row in range(aux.height):
            for col in range(aux.width):
                ids, alphas, trans = aux.pixel_contributions(row, col)
                for g, a, t in zip(ids, alphas, trans):
                    fh.write(f"{row} {col} {g} {a:.17g} {t:.17g}\n")
