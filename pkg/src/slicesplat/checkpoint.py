"""Binary checkpoint serialization.

Layout, all little-endian:
  header   : magic "EMG1", u32 gaussian count, u32 reserved, u32 reserved
             (16 bytes total)
  gaussians: per Gaussian 7 x f64 in field order
             (mean.x, mean.y, ls_x, ls_y, theta, opacity_logit, intensity)
  network  : u32 layer count, then per layer u32 rows, u32 cols,
             rows*cols f64 weights row-major, rows f64 biases
  trailer  : magic "EMGX", u32 width, u32 height, u32 l_pos, u32 l_time,
             f64 mean_scale, f64 z0, f64 sz0

A checkpoint with layer count 0 carries no deformation network (canonical
model only). Round-trips preserve every f64 bit.
"""

import struct

import numpy as np

from .deformnet import DeformationNet
from .model import VolumeModel

MAGIC = b"EMG1"
TRAILER = b"EMGX"


def save_checkpoint(path, model: VolumeModel, net: DeformationNet = None):
    if net is not None and (net.width_px != model.width
                            or net.height_px != model.height):
        raise ValueError("model and deformation net disagree on image size")
    parts = [MAGIC, struct.pack("<III", model.n, 0, 0)]
    record = np.column_stack([
        model.means,
        model.log_scales,
        model.rotations,
        model.opacity_logits,
        model.intensities,
    ]).astype("<f8")
    parts.append(record.tobytes())
    if net is None:
        parts.append(struct.pack("<I", 0))
        width = model.width
        height = model.height
        l_pos = l_time = 0
        mean_scale = 0.0
    else:
        parts.append(struct.pack("<I", len(net.weights)))
        for w, b in zip(net.weights, net.biases):
            rows, cols = w.shape
            parts.append(struct.pack("<II", rows, cols))
            parts.append(w.astype("<f8").tobytes())
            parts.append(b.astype("<f8").tobytes())
        width = net.width_px
        height = net.height_px
        l_pos = net.l_pos
        l_time = net.l_time
        mean_scale = net.mean_scale
    parts.append(TRAILER)
    parts.append(struct.pack("<IIII", width, height, l_pos, l_time))
    parts.append(struct.pack("<ddd", mean_scale, model.z0, model.sz0))
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ValueError(f"{self.path}: truncated checkpoint")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, count=1):
        vals = struct.unpack(f"<{count}I", self.take(4 * count))
        return vals[0] if count == 1 else vals

    def f64_array(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(
            np.float64)


def load_checkpoint(path):
    """Returns (VolumeModel, DeformationNet or None)."""
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data, path)
    if r.take(4) != MAGIC:
        raise ValueError(f"{path}: bad checkpoint magic")
    n, _, _ = r.u32(3)
    record = r.f64_array(7 * n).reshape(n, 7)
    n_layers = r.u32()
    layers = []
    for _ in range(n_layers):
        rows, cols = r.u32(2)
        w = r.f64_array(rows * cols).reshape(rows, cols)
        b = r.f64_array(rows)
        layers.append((w, b))
    if r.take(4) != TRAILER:
        raise ValueError(f"{path}: missing checkpoint trailer")
    width, height, l_pos, l_time = r.u32(4)
    mean_scale, z0, sz0 = struct.unpack("<ddd", r.take(24))
    model = VolumeModel(
        means=np.ascontiguousarray(record[:, 0:2]),
        log_scales=np.ascontiguousarray(record[:, 2:4]),
        rotations=record[:, 4].copy(),
        opacity_logits=record[:, 5].copy(),
        intensities=record[:, 6].copy(),
        width=width,
        height=height,
        z0=z0,
        sz0=sz0,
    )
    net = None
    if n_layers:
        net = _net_from_layers(layers, width, height, l_pos, l_time,
                               mean_scale, path)
    return model, net


def _net_from_layers(layers, width, height, l_pos, l_time, mean_scale, path):
    depth = len(layers) - 1
    hidden_width = layers[0][0].shape[0]
    net = DeformationNet(width, height, hidden_width=hidden_width,
                         depth=depth, l_pos=l_pos, l_time=l_time,
                         mean_scale=mean_scale, seed=0)
    flat = []
    for w, b in layers:
        flat.append(w)
        flat.append(b)
    try:
        net.set_parameters(flat)
    except ValueError as exc:
        raise ValueError(f"{path}: network layout mismatch: {exc}") from exc
    return net
