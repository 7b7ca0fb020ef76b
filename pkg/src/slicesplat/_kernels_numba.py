"""Numba-jitted compositing kernels (hot path).

Semantics are shared with `_kernels_numpy`; see `slicesplat.rasterizer` for
the driver that prepares geometry and tile bins. All loops are sequential so
two runs of the same inputs are bitwise identical.
"""

import math

import numpy as np
from numba import njit

TILE = 16


@njit(cache=True)
def forward_count(height, width, means, conics, radii, q_cut,
                  tile_gauss, tile_offsets, tiles_x):
    """Per-pixel contribution counts (the q <= q_cut test, no exp needed)."""
    counts = np.zeros(height * width, dtype=np.int64)
    n_tiles = tile_offsets.shape[0] - 1
    for tile in range(n_tiles):
        k0 = tile_offsets[tile]
        k1 = tile_offsets[tile + 1]
        if k0 == k1:
            continue
        ty = tile // tiles_x
        tx = tile - ty * tiles_x
        y0 = ty * TILE
        x0 = tx * TILE
        y1 = min(y0 + TILE, height)
        x1 = min(x0 + TILE, width)
        for py in range(y0, y1):
            fy = py + 0.5
            row = py * width
            for px in range(x0, x1):
                fx = px + 0.5
                cnt = 0
                for k in range(k0, k1):
                    g = tile_gauss[k]
                    dx = fx - means[g, 0]
                    if abs(dx) > radii[g]:
                        continue
                    dy = fy - means[g, 1]
                    if abs(dy) > radii[g]:
                        continue
                    q = (conics[g, 0] * dx * dx
                         + 2.0 * conics[g, 1] * dx * dy
                         + conics[g, 2] * dy * dy)
                    if q > q_cut[g]:
                        continue
                    cnt += 1
                counts[row + px] = cnt
    return counts


@njit(cache=True)
def forward_fill(height, width, means, conics, opacs, intens, radii, q_cut,
                 tile_gauss, tile_offsets, tiles_x, offsets,
                 image, t_final, ids, alphas, trans):
    """Front-to-back alpha compositing, recording (id, alpha, T) per pixel.

    Blending order within a pixel is ascending Gaussian index (tile lists are
    sorted). T recorded is the transmittance *before* blending the Gaussian.
    """
    n_tiles = tile_offsets.shape[0] - 1
    for tile in range(n_tiles):
        k0 = tile_offsets[tile]
        k1 = tile_offsets[tile + 1]
        ty = tile // tiles_x
        tx = tile - ty * tiles_x
        y0 = ty * TILE
        x0 = tx * TILE
        y1 = min(y0 + TILE, height)
        x1 = min(x0 + TILE, width)
        for py in range(y0, y1):
            fy = py + 0.5
            for px in range(x0, x1):
                fx = px + 0.5
                pix = py * width + px
                slot = offsets[pix]
                t_cur = 1.0
                color = 0.0
                for k in range(k0, k1):
                    g = tile_gauss[k]
                    dx = fx - means[g, 0]
                    if abs(dx) > radii[g]:
                        continue
                    dy = fy - means[g, 1]
                    if abs(dy) > radii[g]:
                        continue
                    q = (conics[g, 0] * dx * dx
                         + 2.0 * conics[g, 1] * dx * dy
                         + conics[g, 2] * dy * dy)
                    if q > q_cut[g]:
                        continue
                    alpha = opacs[g] * math.exp(-0.5 * q)
                    if alpha > 0.99:
                        alpha = 0.99
                    ids[slot] = g
                    alphas[slot] = alpha
                    trans[slot] = t_cur
                    slot += 1
                    color += intens[g] * alpha * t_cur
                    t_cur *= 1.0 - alpha
                image[py, px] = color
                t_final[py, px] = t_cur


def forward(height, width, means, conics, opacs, intens, radii, q_cut,
            tile_gauss, tile_offsets, tiles_x):
    """Two-pass forward: count contributions, then composite into slots."""
    counts = forward_count(height, width, means, conics, radii, q_cut,
                           tile_gauss, tile_offsets, tiles_x)
    offsets = np.zeros(height * width + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    total = int(offsets[-1])
    image = np.zeros((height, width), dtype=np.float64)
    t_final = np.ones((height, width), dtype=np.float64)
    ids = np.empty(total, dtype=np.int32)
    alphas = np.empty(total, dtype=np.float64)
    trans = np.empty(total, dtype=np.float64)
    forward_fill(height, width, means, conics, opacs, intens, radii, q_cut,
                 tile_gauss, tile_offsets, tiles_x, offsets,
                 image, t_final, ids, alphas, trans)
    return image, t_final, offsets, ids, alphas, trans


def backward(height, width, means, conics, opacs, intens, int_live,
             sx2, sy2, cosr, sinr, grad_image, offsets, ids, alphas, trans):
    grads = np.zeros((means.shape[0], 7), dtype=np.float64)
    _backward(height, width, means, conics, opacs, intens, int_live,
              sx2, sy2, cosr, sinr, grad_image, offsets, ids, alphas, trans,
              grads)
    return grads


@njit(cache=True)
def _backward(height, width, means, conics, opacs, intens, int_live,
              sx2, sy2, cosr, sinr, grad_image, offsets, ids, alphas, trans,
              grads):
    """Analytic gradients of the composite w.r.t. all per-Gaussian parameters.

    Walks each pixel's recorded contributions back to front, maintaining the
    suffix sum S = sum_{j>i} c_j a_j T_j so that

        dC/da_i = c_i T_i - S / (1 - a_i).

    G is recovered as alpha/opacity (exact: alpha was stored unclamped below
    0.99); clamped contributions pass no gradient to opacity or geometry.
    Gradient columns: mx, my, ls_x, ls_y, theta, opacity_logit, intensity.
    """
    for py in range(height):
        fy = py + 0.5
        for px in range(width):
            pix = py * width + px
            k0 = offsets[pix]
            k1 = offsets[pix + 1]
            if k0 == k1:
                continue
            go = grad_image[py, px]
            if go == 0.0:
                continue
            fx = px + 0.5
            suffix = 0.0
            for k in range(k1 - 1, k0 - 1, -1):
                g = ids[k]
                alpha = alphas[k]
                t_pre = trans[k]
                d_alpha = go * (intens[g] * t_pre - suffix / (1.0 - alpha))
                if int_live[g] != 0.0:
                    grads[g, 6] += go * alpha * t_pre
                suffix += intens[g] * alpha * t_pre
                if alpha >= 0.99:
                    continue
                o = opacs[g]
                gkern = alpha / o
                d_gkern = d_alpha * o
                grads[g, 5] += d_alpha * gkern * o * (1.0 - o)
                d_q = -0.5 * gkern * d_gkern
                ca = conics[g, 0]
                cb = conics[g, 1]
                cc = conics[g, 2]
                dx = fx - means[g, 0]
                dy = fy - means[g, 1]
                grads[g, 0] += d_q * (-2.0) * (ca * dx + cb * dy)
                grads[g, 1] += d_q * (-2.0) * (cb * dx + cc * dy)
                # d(conic) = d_q * d d^T; chain through A = inv(Sigma + eps I)
                # via dL/dSigma = -A (dL/dA) A, then to scales and angle.
                m00 = d_q * dx * dx
                m01 = d_q * dx * dy
                m11 = d_q * dy * dy
                am00 = ca * m00 + cb * m01
                am01 = ca * m01 + cb * m11
                am10 = cb * m00 + cc * m01
                am11 = cb * m01 + cc * m11
                g00 = -(am00 * ca + am01 * cb)
                g01 = -(am00 * cb + am01 * cc)
                g11 = -(am10 * cb + am11 * cc)
                co = cosr[g]
                si = sinr[g]
                d_sx2 = g00 * co * co + 2.0 * g01 * co * si + g11 * si * si
                d_sy2 = g00 * si * si - 2.0 * g01 * co * si + g11 * co * co
                grads[g, 2] += d_sx2 * 2.0 * sx2[g]
                grads[g, 3] += d_sy2 * 2.0 * sy2[g]
                diff = sx2[g] - sy2[g]
                grads[g, 4] += diff * (-2.0 * co * si * g00
                                       + 2.0 * (co * co - si * si) * g01
                                       + 2.0 * co * si * g11)
