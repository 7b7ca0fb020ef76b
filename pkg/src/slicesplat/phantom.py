"""Synthetic isotropic test volumes: tubes, ellipsoids, membranes.

Structure parameters are drawn from a SplitMix64 generator specified here
byte-for-byte (mix constants below, 53-bit uniform mantissa), so a seed
pins the same volume on every platform. Structures are composited by max,
giving occlusive EM-like blobs with values in [0, 1].
"""

import math

import numpy as np

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


class SplitMix64:
    """64-bit SplitMix generator (Steele et al. mixing constants)."""

    def __init__(self, seed: int):
        self.state = seed & _MASK

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK
        return (z ^ (z >> 31)) & _MASK

    def uniform(self) -> float:
        """U[0, 1) with 53 random mantissa bits."""
        return (self.next_u64() >> 11) * (2.0 ** -53)

    def uniform_in(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.uniform()


def _unit_vector(rng: SplitMix64) -> np.ndarray:
    """Deterministic rejection sampling of a direction from the cube."""
    while True:
        v = np.array([rng.uniform_in(-1, 1) for _ in range(3)])
        n = float(np.linalg.norm(v))
        if 0.1 <= n <= 1.0:
            return v / n


def _grid(dims):
    w, h, d = dims
    z = np.arange(d, dtype=np.float64)[:, None, None]
    y = np.arange(h, dtype=np.float64)[None, :, None]
    x = np.arange(w, dtype=np.float64)[None, None, :]
    return x, y, z


def _bezier_points(ctrl: np.ndarray, n: int) -> np.ndarray:
    t = np.linspace(0.0, 1.0, n)[:, None]
    u = 1.0 - t
    return (u ** 3 * ctrl[0] + 3 * u ** 2 * t * ctrl[1]
            + 3 * u * t ** 2 * ctrl[2] + t ** 3 * ctrl[3])


def _tube(vol: np.ndarray, rng: SplitMix64, dims) -> None:
    w, h, d = dims
    lo = np.array([0.1 * w, 0.1 * h, 0.1 * d])
    hi = np.array([0.9 * w, 0.9 * h, 0.9 * d])
    ctrl = np.array([[rng.uniform_in(lo[k], hi[k]) for k in range(3)]
                     for _ in range(4)])
    radius = rng.uniform_in(1.5, 4.0)
    inten = rng.uniform_in(0.5, 1.0)
    sigma = radius / 2.0
    poly_len = float(np.sum(np.linalg.norm(np.diff(ctrl, axis=0), axis=1)))
    n_samples = max(48, int(math.ceil(2.0 * poly_len)))
    pts = _bezier_points(ctrl, n_samples)
    reach = 3.0 * sigma
    span = int(math.ceil(reach))
    dsq = np.full(vol.shape, np.inf)
    for px, py, pz in pts:
        x0 = max(int(math.floor(px - span)), 0)
        x1 = min(int(math.ceil(px + span)) + 1, w)
        y0 = max(int(math.floor(py - span)), 0)
        y1 = min(int(math.ceil(py + span)) + 1, h)
        z0 = max(int(math.floor(pz - span)), 0)
        z1 = min(int(math.ceil(pz + span)) + 1, d)
        if x0 >= x1 or y0 >= y1 or z0 >= z1:
            continue
        gx = np.arange(x0, x1, dtype=np.float64) - px
        gy = np.arange(y0, y1, dtype=np.float64) - py
        gz = np.arange(z0, z1, dtype=np.float64) - pz
        local = (gz[:, None, None] ** 2 + gy[None, :, None] ** 2
                 + gx[None, None, :] ** 2)
        view = dsq[z0:z1, y0:y1, x0:x1]
        np.minimum(view, local, out=view)
    hit = dsq <= reach * reach
    vol[hit] = np.maximum(vol[hit],
                          inten * np.exp(-dsq[hit] / (2.0 * sigma * sigma)))


def _ellipsoid(vol: np.ndarray, rng: SplitMix64, dims) -> None:
    w, h, d = dims
    center = np.array([rng.uniform_in(0.15 * w, 0.85 * w),
                       rng.uniform_in(0.15 * h, 0.85 * h),
                       rng.uniform_in(0.15 * d, 0.85 * d)])
    axes = np.array([rng.uniform_in(3.0, 10.0) for _ in range(3)])
    inten = rng.uniform_in(0.4, 0.9)
    # rotation from three Euler-style angles
    angs = [rng.uniform_in(0.0, 2.0 * math.pi) for _ in range(3)]
    rot = _rot_z(angs[0]) @ _rot_y(angs[1]) @ _rot_z(angs[2])
    x, y, z = _grid(dims)
    dx = x - center[0]
    dy = y - center[1]
    dz = z - center[2]
    u = (rot[0, 0] * dx + rot[0, 1] * dy + rot[0, 2] * dz) / axes[0]
    v = (rot[1, 0] * dx + rot[1, 1] * dy + rot[1, 2] * dz) / axes[1]
    s = (rot[2, 0] * dx + rot[2, 1] * dy + rot[2, 2] * dz) / axes[2]
    q = u * u + v * v + s * s
    falloff = inten * np.exp(-np.maximum(q - 1.0, 0.0) * 3.0)
    falloff[q > 4.0] = 0.0
    np.maximum(vol, falloff, out=vol)


def _membrane(vol: np.ndarray, rng: SplitMix64, dims) -> None:
    w, h, d = dims
    normal = _unit_vector(rng)
    point = np.array([rng.uniform_in(0.2 * w, 0.8 * w),
                      rng.uniform_in(0.2 * h, 0.8 * h),
                      rng.uniform_in(0.2 * d, 0.8 * d)])
    thickness = rng.uniform_in(1.0, 2.0)
    inten = rng.uniform_in(0.3, 0.8)
    sigma = thickness / 2.0
    x, y, z = _grid(dims)
    dist = (normal[0] * (x - point[0]) + normal[1] * (y - point[1])
            + normal[2] * (z - point[2]))
    field = inten * np.exp(-(dist * dist) / (2.0 * sigma * sigma))
    field[np.abs(dist) > 3.0 * sigma] = 0.0
    np.maximum(vol, field, out=vol)


def _rot_z(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _rot_y(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def generate_phantom(seed: int, dims, n_structures: int = 12) -> np.ndarray:
    """Volume (depth, height, width) in [0,1], reproducible from the seed.

    dims is (width, height, depth), each >= 16. Structure mix per draw:
    tube with probability 0.5, ellipsoid 0.3, membrane 0.2.
    """
    w, h, d = (int(v) for v in dims)
    if min(w, h, d) < 16:
        raise ValueError("phantom dims must be at least 16 in every axis")
    rng = SplitMix64(seed)
    vol = np.zeros((d, h, w), dtype=np.float64)
    for _ in range(n_structures):
        kind = rng.uniform()
        if kind < 0.5:
            _tube(vol, rng, (w, h, d))
        elif kind < 0.8:
            _ellipsoid(vol, rng, (w, h, d))
        else:
            _membrane(vol, rng, (w, h, d))
    return np.clip(vol, 0.0, 1.0)
