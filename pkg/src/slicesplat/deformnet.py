"""Deformation field: frequency-encoded MLP mapping (mean, t) to offsets.

Output arity is fixed at 5 — (dx, dy, dls_x, dls_y, do_logit) — so no code
path can deform the axial coordinate, axial scale, or rotation. The mean
offset is tanh-bounded and scaled (default 0.1 * image width); log-scale and
opacity-logit offsets are raw. The final layer starts at zero, making the
network an exact identity map until trained.
"""

import math
from dataclasses import dataclass

import numpy as np

from .model import DELTA_DIM

HIDDEN_WIDTH = 128
HIDDEN_DEPTH = 6
L_POS = 10
L_TIME = 6
SKIP_LAYER = 3  # 0-based hidden layer whose input gets the encoding again
MEAN_SCALE_FRAC = 0.1


def encoding_dim(l_pos: int, l_time: int) -> int:
    return 4 * l_pos + 2 * l_time + 3


def _check_t(t: float) -> float:
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"timestamp {t} outside [0, 1]")
    return t


@dataclass
class NetGrads:
    """Gradients aligned with DeformationNet.weights / .biases."""

    d_weights: list
    d_biases: list

    def parameters(self):
        """Flat list matching DeformationNet.parameters() ordering."""
        out = []
        for w, b in zip(self.d_weights, self.d_biases):
            out.append(w)
            out.append(b)
        return out


class DeformationNet:
    """Fully-connected ReLU network over a sin/cos frequency encoding.

    Frequencies are 2^k * pi for k = 0..L-1, applied per coordinate after
    mapping the mean into [-1, 1]^2 by the image dimensions (t is already in
    [0, 1]); the raw normalized (x, y, t) triple is appended. Hidden layer
    `SKIP_LAYER` (when depth allows) receives the encoding concatenated onto
    the previous activations.
    """

    def __init__(self, width_px, height_px, hidden_width=HIDDEN_WIDTH,
                 depth=HIDDEN_DEPTH, l_pos=L_POS, l_time=L_TIME,
                 mean_scale=None, seed=0):
        self.width_px = int(width_px)
        self.height_px = int(height_px)
        self.hidden_width = int(hidden_width)
        self.depth = int(depth)
        self.l_pos = int(l_pos)
        self.l_time = int(l_time)
        if mean_scale is None:
            mean_scale = MEAN_SCALE_FRAC * width_px
        self.mean_scale = float(mean_scale)
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        enc = encoding_dim(self.l_pos, self.l_time)
        self.skip_index = SKIP_LAYER if self.depth > SKIP_LAYER else None
        rng = np.random.default_rng(seed)
        self.weights = []
        self.biases = []
        in_dim = enc
        for i in range(self.depth):
            if i == self.skip_index:
                in_dim += enc
            self.weights.append(_kaiming(rng, self.hidden_width, in_dim))
            self.biases.append(np.zeros(self.hidden_width))
            in_dim = self.hidden_width
        # zero final layer: identity deformation at initialization
        self.weights.append(np.zeros((DELTA_DIM, in_dim)))
        self.biases.append(np.zeros(DELTA_DIM))

    # -- parameter plumbing -------------------------------------------------

    def parameters(self):
        """Flat list alternating weight and bias arrays, input to output."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def set_parameters(self, arrays) -> None:
        expected = 2 * len(self.weights)
        if len(arrays) != expected:
            raise ValueError(f"expected {expected} arrays, got {len(arrays)}")
        for i in range(len(self.weights)):
            w = np.asarray(arrays[2 * i], dtype=np.float64)
            b = np.asarray(arrays[2 * i + 1], dtype=np.float64)
            if w.shape != self.weights[i].shape \
                    or b.shape != self.biases[i].shape:
                raise ValueError("parameter shape mismatch")
            self.weights[i] = w.copy()
            self.biases[i] = b.copy()

    def copy(self) -> "DeformationNet":
        dup = object.__new__(DeformationNet)
        dup.__dict__.update(self.__dict__)
        dup.weights = [w.copy() for w in self.weights]
        dup.biases = [b.copy() for b in self.biases]
        return dup

    def n_params(self) -> int:
        return sum(a.size for a in self.parameters())

    # -- encoding -----------------------------------------------------------

    def encode(self, means: np.ndarray, t: float) -> np.ndarray:
        means = np.atleast_2d(np.asarray(means, dtype=np.float64))
        n = means.shape[0]
        nx = means[:, 0] * (2.0 / self.width_px) - 1.0
        ny = means[:, 1] * (2.0 / self.height_px) - 1.0
        enc = np.empty((n, encoding_dim(self.l_pos, self.l_time)))
        col = 0
        for coord in (nx, ny):
            for k in range(self.l_pos):
                w = (2.0 ** k) * math.pi
                enc[:, col] = np.sin(w * coord)
                enc[:, col + 1] = np.cos(w * coord)
                col += 2
        for k in range(self.l_time):
            w = (2.0 ** k) * math.pi
            enc[:, col] = math.sin(w * t)
            enc[:, col + 1] = math.cos(w * t)
            col += 2
        enc[:, col] = nx
        enc[:, col + 1] = ny
        enc[:, col + 2] = t
        return enc

    # -- forward / backward -------------------------------------------------

    def _run(self, means, t):
        """Forward pass keeping per-layer inputs and pre-activations."""
        enc = self.encode(means, t)
        inputs = []
        zs = []
        h = enc
        for i in range(self.depth):
            inp = h if i != self.skip_index else np.hstack([h, enc])
            z = inp @ self.weights[i].T + self.biases[i]
            inputs.append(inp)
            zs.append(z)
            h = np.maximum(z, 0.0)
        raw = h @ self.weights[-1].T + self.biases[-1]
        return enc, inputs, zs, h, raw

    def _head(self, raw):
        out = raw.copy()
        out[:, 0:2] = np.tanh(raw[:, 0:2]) * self.mean_scale
        return out

    def batched_forward(self, means: np.ndarray, t: float) -> np.ndarray:
        """Deltas (n, 5) for all means at one timestamp."""
        t = _check_t(t)
        means = np.atleast_2d(np.asarray(means, dtype=np.float64))
        if means.shape[0] == 0:
            return np.zeros((0, DELTA_DIM))
        _, _, _, _, raw = self._run(means, t)
        return self._head(raw)

    def forward(self, mean, t: float):
        from .model import DeformationDelta
        out = self.batched_forward(np.asarray(mean)[None, :], t)
        return DeformationDelta.from_array(out[0])

    def backward(self, means: np.ndarray, t: float, grad_deltas: np.ndarray):
        """Exact gradients: returns (NetGrads, grad_means (n, 2)).

        grad_means is the gradient through the encoding's trig terms; no
        gradient w.r.t. t is produced (t is data).
        """
        t = _check_t(t)
        means = np.atleast_2d(np.asarray(means, dtype=np.float64))
        grad_deltas = np.atleast_2d(np.asarray(grad_deltas, dtype=np.float64))
        n = means.shape[0]
        if grad_deltas.shape != (n, DELTA_DIM):
            raise ValueError("grad_deltas shape mismatch")
        d_w = [np.zeros_like(w) for w in self.weights]
        d_b = [np.zeros_like(b) for b in self.biases]
        if n == 0:
            return NetGrads(d_w, d_b), np.zeros((0, 2))
        enc, inputs, zs, h_last, raw = self._run(means, t)
        g_raw = grad_deltas.copy()
        th = np.tanh(raw[:, 0:2])
        g_raw[:, 0:2] = grad_deltas[:, 0:2] * self.mean_scale * (1.0 - th * th)
        d_w[-1] = g_raw.T @ h_last
        d_b[-1] = g_raw.sum(axis=0)
        g_h = g_raw @ self.weights[-1]
        g_enc = np.zeros_like(enc)
        for i in range(self.depth - 1, -1, -1):
            g_z = g_h * (zs[i] > 0.0)
            d_w[i] = g_z.T @ inputs[i]
            d_b[i] = g_z.sum(axis=0)
            g_in = g_z @ self.weights[i]
            if i == self.skip_index:
                g_h = g_in[:, :-enc.shape[1]]
                g_enc += g_in[:, -enc.shape[1]:]
            elif i == 0:
                g_enc += g_in
            else:
                g_h = g_in
        grad_means = self._grad_through_encoding(means, g_enc)
        return NetGrads(d_w, d_b), grad_means

    def _grad_through_encoding(self, means, g_enc):
        nx = means[:, 0] * (2.0 / self.width_px) - 1.0
        ny = means[:, 1] * (2.0 / self.height_px) - 1.0
        g_nx = g_enc[:, -3].copy()
        g_ny = g_enc[:, -2].copy()
        col = 0
        for coord, acc in ((nx, g_nx), (ny, g_ny)):
            for k in range(self.l_pos):
                w = (2.0 ** k) * math.pi
                acc += g_enc[:, col] * w * np.cos(w * coord)
                acc -= g_enc[:, col + 1] * w * np.sin(w * coord)
                col += 2
        grad = np.empty((means.shape[0], 2))
        grad[:, 0] = g_nx * (2.0 / self.width_px)
        grad[:, 1] = g_ny * (2.0 / self.height_px)
        return grad


def _kaiming(rng, out_dim, in_dim):
    bound = math.sqrt(6.0 / in_dim)
    return rng.uniform(-bound, bound, size=(out_dim, in_dim))


def ema_update(teacher: DeformationNet, student: DeformationNet,
               alpha: float) -> None:
    """teacher <- alpha * teacher + (1 - alpha) * student, in place."""
    t_params = teacher.parameters()
    s_params = student.parameters()
    if len(t_params) != len(s_params):
        raise ValueError("teacher/student layer count mismatch")
    for tp, sp in zip(t_params, s_params):
        if tp.shape != sp.shape:
            raise ValueError("teacher/student shape mismatch")
        tp *= alpha
        tp += (1.0 - alpha) * sp
