"""Pure-numpy compositing kernels, semantically identical to `_kernels_numba`.

The forward pass sweeps Gaussians in index order and blends each one into the
running image over its footprint, which reproduces the per-pixel front-to-back
order of the tile kernel exactly (per-pixel blending order is ascending
Gaussian index in both). Contributions are then re-sorted pixel-major with a
stable sort so the aux layout matches the tile kernel's.
"""

import numpy as np

TILE = 16


def _col_range(center, radius, limit):
    """Integer pixel range whose centers fall within +-radius of center."""
    lo = int(np.ceil(center - radius - 0.5))
    hi = int(np.floor(center + radius - 0.5))
    return max(lo, 0), min(hi, limit - 1)


def forward(height, width, means, conics, opacs, intens, radii, q_cut,
            tile_gauss, tile_offsets, tiles_x):
    image = np.zeros((height, width), dtype=np.float64)
    t_img = np.ones((height, width), dtype=np.float64)
    pix_parts = []
    id_parts = []
    alpha_parts = []
    trans_parts = []
    n = means.shape[0]
    for g in range(n):
        r = radii[g]
        x0, x1 = _col_range(means[g, 0], r, width)
        if x1 < x0:
            continue
        y0, y1 = _col_range(means[g, 1], r, height)
        if y1 < y0:
            continue
        fx = np.arange(x0, x1 + 1) + 0.5
        fy = np.arange(y0, y1 + 1) + 0.5
        dx = (fx - means[g, 0])[None, :]
        dy = (fy - means[g, 1])[:, None]
        q = (conics[g, 0] * dx * dx + 2.0 * conics[g, 1] * dx * dy
             + conics[g, 2] * dy * dy)
        keep = q <= q_cut[g]
        if not keep.any():
            continue
        alpha = np.minimum(opacs[g] * np.exp(-0.5 * q[keep]), 0.99)
        rows, cols = np.nonzero(keep)
        pix = (rows + y0) * width + (cols + x0)
        t_pre = t_img.ravel()[pix]
        image.ravel()[pix] += intens[g] * alpha * t_pre
        t_img.ravel()[pix] = t_pre * (1.0 - alpha)
        pix_parts.append(pix)
        id_parts.append(np.full(pix.shape[0], g, dtype=np.int32))
        alpha_parts.append(alpha)
        trans_parts.append(t_pre)
    if pix_parts:
        pix_all = np.concatenate(pix_parts)
        order = np.argsort(pix_all, kind="stable")
        ids = np.concatenate(id_parts)[order]
        alphas = np.concatenate(alpha_parts)[order]
        trans = np.concatenate(trans_parts)[order]
        counts = np.bincount(pix_all, minlength=height * width)
    else:
        ids = np.empty(0, dtype=np.int32)
        alphas = np.empty(0, dtype=np.float64)
        trans = np.empty(0, dtype=np.float64)
        counts = np.zeros(height * width, dtype=np.int64)
    offsets = np.zeros(height * width + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return image, t_img, offsets, ids, alphas, trans


def backward(height, width, means, conics, opacs, intens, int_live,
             sx2, sy2, cosr, sinr, grad_image, offsets, ids, alphas, trans):
    n = means.shape[0]
    grads = np.zeros((n, 7), dtype=np.float64)
    total = ids.shape[0]
    if total == 0:
        return grads
    seg_len = np.diff(offsets)
    pix = np.repeat(np.arange(height * width, dtype=np.int64), seg_len)
    go = grad_image.ravel()[pix]
    c_at = intens[ids] * alphas * trans
    # Suffix sum within each pixel segment: S_i = sum_{j > i} c_j a_j T_j.
    cum = np.concatenate(([0.0], np.cumsum(c_at)))
    seg_total = cum[offsets[1:]] - cum[offsets[:-1]]
    incl = cum[1:] - cum[offsets[pix]]
    suffix = seg_total[pix] - incl
    d_alpha = go * (intens[ids] * trans - suffix / (1.0 - alphas))

    grads[:, 6] = np.bincount(ids, weights=go * alphas * trans,
                              minlength=n) * int_live

    live = alphas < 0.99
    o = opacs[ids]
    gkern = np.where(live, alphas / o, 0.0)
    d_gkern = np.where(live, d_alpha * o, 0.0)
    grads[:, 5] = np.bincount(ids, weights=d_alpha * gkern * o * (1.0 - o),
                              minlength=n)
    d_q = -0.5 * gkern * d_gkern
    ca = conics[ids, 0]
    cb = conics[ids, 1]
    cc = conics[ids, 2]
    fx = (pix % width) + 0.5
    fy = (pix // width) + 0.5
    dx = fx - means[ids, 0]
    dy = fy - means[ids, 1]
    grads[:, 0] = np.bincount(ids, weights=d_q * -2.0 * (ca * dx + cb * dy),
                              minlength=n)
    grads[:, 1] = np.bincount(ids, weights=d_q * -2.0 * (cb * dx + cc * dy),
                              minlength=n)
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
    co = cosr[ids]
    si = sinr[ids]
    d_sx2 = g00 * co * co + 2.0 * g01 * co * si + g11 * si * si
    d_sy2 = g00 * si * si - 2.0 * g01 * co * si + g11 * co * co
    grads[:, 2] = np.bincount(ids, weights=d_sx2, minlength=n) * 2.0 * sx2
    grads[:, 3] = np.bincount(ids, weights=d_sy2, minlength=n) * 2.0 * sy2
    d_theta = (-2.0 * co * si * g00 + 2.0 * (co * co - si * si) * g01
               + 2.0 * co * si * g11)
    grads[:, 4] = np.bincount(ids, weights=d_theta, minlength=n) \
        * (sx2 - sy2)
    return grads
