"""Adam with per-group learning rates plus adaptive density control.

Gaussian parameter groups: position, scale, rotation, opacity, intensity.
Position and the deformation net decay log-linearly; the rest are constant.
Density control clones small high-gradient Gaussians, splits large ones,
prunes near-transparent ones, and keeps Adam moments aligned throughout;
new Gaussians are always appended so existing blending order is stable.
"""

import math
from dataclasses import dataclass

import numpy as np

from .model import VolumeModel, sigmoid, logit

BETA1 = 0.9
BETA2 = 0.999
ADAM_EPS = 1e-15

LR_POSITION = 1.6e-4
LR_POSITION_FINAL = 1.6e-6
LR_SCALE = 5e-3
LR_ROTATION = 1e-3
LR_OPACITY = 5e-2
LR_INTENSITY = 2.5e-3
LR_DEFORM = 8e-4
LR_DEFORM_FINAL = 1.6e-6

GRAD_THRESHOLD = 2e-4
MAX_CLONE_SCALE_PX = 4.0
SPLIT_FACTOR = 1.6
PRUNE_OPACITY = 0.005
OPACITY_RESET_CEIL = 0.01

GAUSSIAN_GROUPS = {
    "position": "means",
    "scale": "log_scales",
    "rotation": "rotations",
    "opacity": "opacity_logits",
    "intensity": "intensities",
}


def lr_schedule(group: str, iteration: int, total_iters: int,
                overrides=None) -> float:
    """Learning rate for a parameter group at an iteration.

    position: 1.6e-4 -> 1.6e-6 log-linear over total_iters; deform: 8e-4 ->
    1.6e-6 likewise; scale/rotation/opacity/intensity constant.
    """
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    overrides = overrides or {}
    if group == "position":
        lo, hi = overrides.get("position", (LR_POSITION, LR_POSITION_FINAL))
        return _log_linear(lo, hi, iteration, total_iters)
    if group == "deform":
        lo, hi = overrides.get("deform", (LR_DEFORM, LR_DEFORM_FINAL))
        return _log_linear(lo, hi, iteration, total_iters)
    constants = {
        "scale": LR_SCALE,
        "rotation": LR_ROTATION,
        "opacity": LR_OPACITY,
        "intensity": LR_INTENSITY,
    }
    if group in constants:
        return overrides.get(group, constants[group])
    raise ValueError(f"unknown parameter group: {group}")


def _log_linear(lr0: float, lr1: float, iteration: int, total: int) -> float:
    frac = min(max(iteration / total, 0.0), 1.0)
    return math.exp((1.0 - frac) * math.log(lr0) + frac * math.log(lr1))


@dataclass
class AdamSlot:
    m: np.ndarray
    v: np.ndarray
    step: int = 0


def _new_slot(param: np.ndarray) -> AdamSlot:
    return AdamSlot(np.zeros_like(param), np.zeros_like(param))


def adam_step(param: np.ndarray, grad: np.ndarray, slot: AdamSlot,
              lr: float, name: str = "param") -> None:
    """Standard bias-corrected Adam update, in place."""
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError(f"non-finite gradient in group '{name}'")
    slot.step += 1
    slot.m *= BETA1
    slot.m += (1.0 - BETA1) * grad
    slot.v *= BETA2
    slot.v += (1.0 - BETA2) * (grad * grad)
    m_hat = slot.m / (1.0 - BETA1 ** slot.step)
    v_hat = slot.v / (1.0 - BETA2 ** slot.step)
    param -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


class GaussianAdam:
    """Adam over the five per-Gaussian parameter groups of a VolumeModel."""

    def __init__(self, model: VolumeModel):
        self.slots = {name: _new_slot(getattr(model, attr))
                      for name, attr in GAUSSIAN_GROUPS.items()}

    def step(self, model: VolumeModel, grads: dict, lrs: dict) -> None:
        for name, attr in GAUSSIAN_GROUPS.items():
            adam_step(getattr(model, attr), grads[name], self.slots[name],
                      lrs[name], name)

    # density-control bookkeeping: keep moment rows aligned with Gaussians

    def keep(self, mask: np.ndarray) -> None:
        for slot in self.slots.values():
            slot.m = slot.m[mask]
            slot.v = slot.v[mask]

    def append(self, source_idx: np.ndarray, zero: bool) -> None:
        """Append moment rows for Gaussians cloned/split from source_idx."""
        for slot in self.slots.values():
            if zero:
                m_new = np.zeros_like(slot.m[source_idx])
                v_new = np.zeros_like(slot.v[source_idx])
            else:
                m_new = slot.m[source_idx].copy()
                v_new = slot.v[source_idx].copy()
            slot.m = np.concatenate([slot.m, m_new])
            slot.v = np.concatenate([slot.v, v_new])

    def zero_rows(self, idx: np.ndarray) -> None:
        for slot in self.slots.values():
            slot.m[idx] = 0.0
            slot.v[idx] = 0.0

    def zero_group(self, name: str) -> None:
        slot = self.slots[name]
        slot.m[...] = 0.0
        slot.v[...] = 0.0


class NetAdam:
    """Adam over a DeformationNet's parameter list (one learning rate)."""

    def __init__(self, net):
        self.slots = [_new_slot(p) for p in net.parameters()]

    def step(self, net, grads_list, lr: float) -> None:
        params = net.parameters()
        if len(grads_list) != len(params):
            raise ValueError("gradient list length mismatch")
        for i, (p, g) in enumerate(zip(params, grads_list)):
            adam_step(p, g, self.slots[i], lr, f"deform[{i}]")


@dataclass
class DensityStats:
    """Accumulated image-plane positional gradient norms per Gaussian."""

    accum: np.ndarray
    count: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "DensityStats":
        return cls(np.zeros(n), np.zeros(n, dtype=np.int64))

    def add(self, d_means: np.ndarray, touched: np.ndarray) -> None:
        norms = np.hypot(d_means[:, 0], d_means[:, 1])
        self.accum += np.where(touched, norms, 0.0)
        self.count += touched.astype(np.int64)

    def averages(self) -> np.ndarray:
        return np.where(self.count > 0, self.accum / np.maximum(self.count, 1),
                        0.0)


def densify_and_prune(model: VolumeModel, stats: DensityStats,
                      adam: GaussianAdam, rng,
                      grad_threshold: float = GRAD_THRESHOLD,
                      max_clone_scale_px: float = MAX_CLONE_SCALE_PX,
                      split_factor: float = SPLIT_FACTOR,
                      prune_opacity: float = PRUNE_OPACITY,
                      max_gaussians: int = None) -> dict:
    """One clone/split/prune pass; mutates model and adam, returns counts.

    Over-threshold Gaussians with max scale under `max_clone_scale_px` are
    cloned (copy appended, mean offset by one draw from the Gaussian's own
    covariance, moments copied); larger ones are split (scales divided by
    `split_factor`, both halves resampled from the original covariance,
    moments zeroed). Transparent Gaussians are pruned afterwards. Appending
    keeps surviving Gaussians' relative order stable.
    """
    avg = stats.averages()
    over = avg > grad_threshold
    max_scale_px = np.exp(model.log_scales.max(axis=1))
    clone_mask = over & (max_scale_px < max_clone_scale_px)
    split_mask = over & ~clone_mask
    if max_gaussians is not None:
        budget = max(max_gaussians - model.n, 0)
        need = int(clone_mask.sum() + split_mask.sum())
        if need > budget:
            # keep the highest-gradient candidates within budget
            cand = np.flatnonzero(over)
            order = cand[np.argsort(-avg[cand], kind="stable")]
            keep_set = np.zeros(model.n, dtype=bool)
            keep_set[order[:budget]] = True
            clone_mask &= keep_set
            split_mask &= keep_set

    clone_idx = np.flatnonzero(clone_mask)
    split_idx = np.flatnonzero(split_mask)

    def _sample_offsets(idx):
        z = rng.standard_normal((idx.size, 2))
        sx = np.exp(model.log_scales[idx, 0])
        sy = np.exp(model.log_scales[idx, 1])
        c = np.cos(model.rotations[idx])
        s = np.sin(model.rotations[idx])
        ox = c * sx * z[:, 0] - s * sy * z[:, 1]
        oy = s * sx * z[:, 0] + c * sy * z[:, 1]
        return np.column_stack([ox, oy])

    new_rows = {attr: [] for attr in GAUSSIAN_GROUPS.values()}
    appended_src = []
    appended_zero = []

    if clone_idx.size:
        off = _sample_offsets(clone_idx)
        new_rows["means"].append(model.means[clone_idx] + off)
        new_rows["log_scales"].append(model.log_scales[clone_idx].copy())
        new_rows["rotations"].append(model.rotations[clone_idx].copy())
        new_rows["opacity_logits"].append(
            model.opacity_logits[clone_idx].copy())
        new_rows["intensities"].append(model.intensities[clone_idx].copy())
        appended_src.append(clone_idx)
        appended_zero.append(False)

    if split_idx.size:
        shrunk = model.log_scales[split_idx] - math.log(split_factor)
        off_a = _sample_offsets(split_idx)
        off_b = _sample_offsets(split_idx)
        center = model.means[split_idx].copy()
        # first half replaces the original in place
        model.means[split_idx] = center + off_a
        model.log_scales[split_idx] = shrunk
        adam.zero_rows(split_idx)
        new_rows["means"].append(center + off_b)
        new_rows["log_scales"].append(shrunk.copy())
        new_rows["rotations"].append(model.rotations[split_idx].copy())
        new_rows["opacity_logits"].append(
            model.opacity_logits[split_idx].copy())
        new_rows["intensities"].append(model.intensities[split_idx].copy())
        appended_src.append(split_idx)
        appended_zero.append(True)

    for src, zero in zip(appended_src, appended_zero):
        adam.append(src, zero)
    for attr, parts in new_rows.items():
        if parts:
            cur = getattr(model, attr)
            setattr(model, attr, np.concatenate([cur] + parts))

    opacities = sigmoid(model.opacity_logits)
    keep = opacities >= prune_opacity
    n_pruned = int((~keep).sum())
    if n_pruned:
        for attr in GAUSSIAN_GROUPS.values():
            setattr(model, attr, getattr(model, attr)[keep])
        adam.keep(keep)

    stats.accum = np.zeros(model.n)
    stats.count = np.zeros(model.n, dtype=np.int64)
    return {"n_cloned": int(clone_idx.size), "n_split": int(split_idx.size),
            "n_pruned": n_pruned, "n_after": model.n}


def reset_opacity(model: VolumeModel, adam: GaussianAdam = None,
                  ceil: float = OPACITY_RESET_CEIL) -> None:
    """Clamp every opacity to at most `ceil` (in opacity space), in place.

    Opacity Adam moments are zeroed so stale momentum does not immediately
    undo the reset.
    """
    opac = sigmoid(model.opacity_logits)
    model.opacity_logits = logit(np.minimum(opac, ceil))
    if adam is not None:
        adam.zero_group("opacity")
