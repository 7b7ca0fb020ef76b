"""Three-stage per-volume training with EMA teacher-student bootstrapping.

Stage 1 (warm-up) fits the canonical Gaussians alone with the deformation
net frozen at its zero-output initialization. Stage 2 optimizes Gaussians
and net jointly on observed slices. At the stage-2/3 boundary the teacher
net is initialized as a bitwise copy of the student; stage 3 interleaves
supervised steps with pseudo-supervised steps in which the teacher renders
an unobserved timestamp as the target, only the student net receives
gradients, and the teacher tracks the student by EMA.

Every random draw comes from a generator keyed on (seed, iteration, role),
so any iteration's behavior is independent of how the process got there;
resuming from saved state therefore reproduces the original run exactly.
"""

import os
from dataclasses import dataclass, field, fields as dataclass_fields

import numpy as np

from .checkpoint import save_checkpoint
from .deformnet import DeformationNet, ema_update
from .losses import photometric_loss
from .metrics import psnr, ssim, MetricReport
from .model import VolumeModel, initialize_model
from .optim import (DensityStats, GaussianAdam, NetAdam, densify_and_prune,
                    lr_schedule, reset_opacity)
from .rasterizer import render, render_backward
from .volume_io import SliceStack, linear_blend, nearest_slice

# roles for the per-iteration stateless RNG streams
_RNG_STEP_TYPE = 0
_RNG_SLICE_PICK = 1
_RNG_PSEUDO_T = 2
_RNG_DENSIFY = 3


def _rng(seed: int, iteration: int, role: int) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=seed, spawn_key=(iteration, role))
    return np.random.default_rng(seq)


@dataclass
class TrainConfig:
    warmup_iters: int = 2000
    joint_iters: int = 1000
    pseudo_iters: int = 15000
    ema_decay: float = 0.995
    dssim_weight: float = 0.2
    pseudo_ramp_end: int = 10000
    pseudo_w_lo: float = 0.1
    pseudo_w_hi: float = 1.0
    pseudo_ramp_exponential: bool = False
    pseudo_frac_start: float = 0.2
    pseudo_frac_end: float = 0.5
    seed: int = 0
    init_gaussians: int = 1000
    init_scale_px: float = 1.5
    init_opacity: float = 0.1
    net_width: int = 128
    net_depth: int = 6
    l_pos: int = 10
    l_time: int = 6
    mean_scale_frac: float = 0.1
    lr_position: float = 1.6e-4
    lr_position_final: float = 1.6e-6
    lr_scale: float = 5e-3
    lr_rotation: float = 1e-3
    lr_opacity: float = 5e-2
    lr_intensity: float = 2.5e-3
    lr_deform: float = 8e-4
    lr_deform_final: float = 1.6e-6
    densify_from: int = 500
    densify_until: int = 3000
    densify_every: int = 100
    opacity_reset_at: int = 1500
    grad_threshold: float = 2e-4
    max_clone_scale_px: float = 4.0
    split_factor: float = 1.6
    prune_opacity: float = 0.005
    cap_factor: float = 4.0
    checkpoint_every: int = 5000
    log_every: int = 1

    def __post_init__(self):
        if not 0.0 < self.ema_decay < 1.0:
            raise ValueError("ema_decay must be in (0, 1)")
        if not 0.0 <= self.dssim_weight < 1.0:
            raise ValueError("dssim_weight must be in [0, 1)")
        if self.pseudo_iters > 0 and self.pseudo_ramp_end < self.ramp_start:
            raise ValueError("pseudo_ramp_end precedes the ramp start "
                             f"({self.ramp_start})")
        for name in ("warmup_iters", "joint_iters", "pseudo_iters"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def ramp_start(self) -> int:
        """Teacher-initialization iteration: end of the joint stage."""
        return self.warmup_iters + self.joint_iters

    @property
    def total_iters(self) -> int:
        return self.warmup_iters + self.joint_iters + self.pseudo_iters

    @classmethod
    def from_manifest(cls, manifest) -> "TrainConfig":
        kwargs = {}
        for f in dataclass_fields(cls):
            kwargs[f.name] = manifest.get(f.name)
        return cls(**kwargs)

    def lr_overrides(self) -> dict:
        return {
            "position": (self.lr_position, self.lr_position_final),
            "deform": (self.lr_deform, self.lr_deform_final),
            "scale": self.lr_scale,
            "rotation": self.lr_rotation,
            "opacity": self.lr_opacity,
            "intensity": self.lr_intensity,
        }


def stage_of(iteration: int, cfg: TrainConfig) -> int:
    """Stage of a 1-based iteration: 1 warm-up, 2 joint, 3 pseudo."""
    if iteration <= cfg.warmup_iters:
        return 1
    if iteration <= cfg.warmup_iters + cfg.joint_iters:
        return 2
    return 3


def pseudo_weight(iteration: int, cfg: TrainConfig) -> float:
    """Pseudo-loss weight schedule: 0 before the teacher exists, then a
    ramp from w_lo at ramp_start to w_hi at pseudo_ramp_end, exact at both
    endpoints, constant afterwards."""
    start = cfg.ramp_start
    if iteration < start:
        return 0.0
    if iteration >= cfg.pseudo_ramp_end:
        return cfg.pseudo_w_hi
    span = cfg.pseudo_ramp_end - start
    frac = (iteration - start) / span
    if cfg.pseudo_ramp_exponential:
        return cfg.pseudo_w_lo * (cfg.pseudo_w_hi / cfg.pseudo_w_lo) ** frac
    return cfg.pseudo_w_lo + (cfg.pseudo_w_hi - cfg.pseudo_w_lo) * frac


def pseudo_fraction(iteration: int, cfg: TrainConfig) -> float:
    """Probability that a stage-3 iteration is a pseudo step (0.2 -> 0.5)."""
    start = cfg.ramp_start
    end = cfg.pseudo_ramp_end
    if iteration <= start or end <= start:
        return cfg.pseudo_frac_start
    frac = min((iteration - start) / (end - start), 1.0)
    return cfg.pseudo_frac_start \
        + (cfg.pseudo_frac_end - cfg.pseudo_frac_start) * frac


def pseudo_timestamp(iteration: int, rng: np.random.Generator,
                     timestamps: np.ndarray, anisotropy: int,
                     cfg: TrainConfig) -> float:
    """Unobserved timestamp for a pseudo step.

    The first third of stage 3 draws exact midpoints of observed gaps;
    afterwards draws come from the full grid of anisotropy-1 interleaved
    positions per gap. Never returns an observed timestamp.
    """
    n_gaps = len(timestamps) - 1
    gap = int(rng.integers(0, n_gaps))
    t0 = timestamps[gap]
    t1 = timestamps[gap + 1]
    into_stage3 = iteration - (cfg.ramp_start + 1)
    early = into_stage3 < cfg.pseudo_iters / 3.0
    if early or anisotropy < 2:
        return (t0 + t1) / 2.0
    j = int(rng.integers(1, anisotropy))
    return t0 + (t1 - t0) * (j / anisotropy)


@dataclass
class TrainerState:
    """Everything needed to continue (or inspect) a training run."""

    model: VolumeModel
    net: DeformationNet
    teacher: DeformationNet
    g_adam: GaussianAdam
    n_adam: NetAdam
    stats: DensityStats
    iteration: int
    initial_n: int
    loss_lines: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)


def init_state(stack: SliceStack, cfg: TrainConfig) -> TrainerState:
    model = initialize_model(stack.slices[0], seed=cfg.seed,
                             max_gaussians=cfg.init_gaussians,
                             init_scale_px=cfg.init_scale_px,
                             init_opacity=cfg.init_opacity)
    net = DeformationNet(stack.width, stack.height,
                         hidden_width=cfg.net_width, depth=cfg.net_depth,
                         l_pos=cfg.l_pos, l_time=cfg.l_time,
                         mean_scale=cfg.mean_scale_frac * stack.width,
                         seed=cfg.seed + 1)
    state = TrainerState(model=model, net=net, teacher=None,
                         g_adam=GaussianAdam(model), n_adam=NetAdam(net),
                         stats=DensityStats.zeros(model.n), iteration=0,
                         initial_n=model.n)
    state.diagnostics["net_init_params"] = [p.copy()
                                            for p in net.parameters()]
    return state


def _supervised_step(state: TrainerState, stack: SliceStack,
                     cfg: TrainConfig, iteration: int, lrs: dict,
                     lr_deform: float):
    pick = _rng(cfg.seed, iteration, _RNG_SLICE_PICK)
    k = int(pick.integers(0, stack.n))
    t = float(stack.timestamps[k])
    target = stack.slices[k]
    stage = stage_of(iteration, cfg)
    model = state.model
    deltas = None if stage == 1 else state.net.batched_forward(model.means, t)
    image, aux = render(model, deltas)
    loss, grad_img, l1, dssim = photometric_loss(image, target,
                                                 cfg.dssim_weight)
    grads = render_backward(grad_img, aux, model)
    if iteration <= cfg.densify_until:
        state.stats.add(grads.d_means, aux.touched)
    gauss_grads = {
        "position": grads.d_means,
        "scale": grads.d_log_scales,
        "rotation": grads.d_rotations,
        "opacity": grads.d_opacity_logits,
        "intensity": grads.d_intensities,
    }
    if stage >= 2:
        net_grads, grad_means_enc = state.net.backward(model.means, t,
                                                       grads.delta_batch())
        gauss_grads["position"] = grads.d_means + grad_means_enc
        state.n_adam.step(state.net, net_grads.parameters(), lr_deform)
    state.g_adam.step(model, gauss_grads, lrs)
    return loss, l1, dssim


def _pseudo_step(state: TrainerState, stack: SliceStack, cfg: TrainConfig,
                 iteration: int, lr_deform: float, weight: float):
    trng = _rng(cfg.seed, iteration, _RNG_PSEUDO_T)
    t = pseudo_timestamp(iteration, trng, stack.timestamps,
                         stack.anisotropy, cfg)
    model = state.model
    teacher_deltas = state.teacher.batched_forward(model.means, t)
    target, _ = render(model, teacher_deltas)
    deltas = state.net.batched_forward(model.means, t)
    image, aux = render(model, deltas)
    loss, grad_img, l1, dssim = photometric_loss(image, target,
                                                 cfg.dssim_weight)
    if weight > 0.0:
        grads = render_backward(weight * grad_img, aux, model)
        net_grads, _ = state.net.backward(model.means, t,
                                          grads.delta_batch())
        state.n_adam.step(state.net, net_grads.parameters(), lr_deform)
    ema_update(state.teacher, state.net, cfg.ema_decay)
    return weight * loss, l1, dssim


def train(stack: SliceStack, cfg: TrainConfig, state: TrainerState = None,
          stop_after: int = None, log_file=None,
          checkpoint_dir=None) -> TrainerState:
    """Run (or continue) training up to stop_after (default: all) iterations.

    Gaussian topology changes only inside the densification window; pseudo
    steps never touch Gaussian parameters. Loss-log lines are
    `iter stage loss l1 dssim pseudo_w lr_pos n_gauss`.
    """
    if state is None:
        state = init_state(stack, cfg)
    if (cfg.pseudo_iters > 0 and state.teacher is None
            and state.iteration >= cfg.ramp_start):
        # degenerate configs where stage 3 starts immediately
        state.teacher = state.net.copy()
    last = cfg.total_iters if stop_after is None else min(stop_after,
                                                          cfg.total_iters)
    overrides = cfg.lr_overrides()
    log_fh = open(log_file, "a") if log_file else None
    try:
        for iteration in range(state.iteration + 1, last + 1):
            stage = stage_of(iteration, cfg)
            weight = pseudo_weight(iteration, cfg)
            lr_pos = lr_schedule("position", iteration - 1, cfg.total_iters,
                                 overrides)
            lr_def = lr_schedule("deform", iteration - 1, cfg.total_iters,
                                 overrides)
            lrs = {
                "position": lr_pos,
                "scale": lr_schedule("scale", iteration - 1,
                                     cfg.total_iters, overrides),
                "rotation": lr_schedule("rotation", iteration - 1,
                                        cfg.total_iters, overrides),
                "opacity": lr_schedule("opacity", iteration - 1,
                                       cfg.total_iters, overrides),
                "intensity": lr_schedule("intensity", iteration - 1,
                                         cfg.total_iters, overrides),
            }
            is_pseudo = False
            if stage == 3 and state.teacher is not None:
                frac = pseudo_fraction(iteration, cfg)
                is_pseudo = _rng(cfg.seed, iteration,
                                 _RNG_STEP_TYPE).random() < frac
            if is_pseudo:
                loss, l1, dssim = _pseudo_step(state, stack, cfg, iteration,
                                               lr_def, weight)
            else:
                loss, l1, dssim = _supervised_step(state, stack, cfg,
                                                   iteration, lrs, lr_def)
            if (cfg.densify_every > 0
                    and cfg.densify_from <= iteration <= cfg.densify_until
                    and iteration % cfg.densify_every == 0):
                cap = int(cfg.cap_factor * state.initial_n)
                densify_and_prune(state.model, state.stats, state.g_adam,
                                  _rng(cfg.seed, iteration, _RNG_DENSIFY),
                                  grad_threshold=cfg.grad_threshold,
                                  max_clone_scale_px=cfg.max_clone_scale_px,
                                  split_factor=cfg.split_factor,
                                  prune_opacity=cfg.prune_opacity,
                                  max_gaussians=cap)
            if iteration == cfg.opacity_reset_at:
                reset_opacity(state.model, state.g_adam)
            if iteration == cfg.warmup_iters and stage == 1:
                init_params = state.diagnostics.get("net_init_params")
                if init_params is not None:
                    unchanged = all(
                        np.array_equal(a, b) for a, b in
                        zip(init_params, state.net.parameters()))
                    state.diagnostics["stage1_net_unchanged"] = unchanged
            if iteration == cfg.ramp_start and cfg.pseudo_iters > 0:
                state.teacher = state.net.copy()
                state.diagnostics["teacher_init_iteration"] = iteration
            if ((cfg.log_every > 0 and iteration % cfg.log_every == 0)
                    or iteration == last):
                line = (f"{iteration} {stage} {loss:.17g} {l1:.17g} "
                        f"{dssim:.17g} {weight:.17g} {lr_pos:.10g} "
                        f"{state.model.n}")
                state.loss_lines.append(line)
                if log_fh:
                    log_fh.write(line + "\n")
            if (checkpoint_dir and cfg.checkpoint_every > 0
                    and iteration % cfg.checkpoint_every == 0):
                path = os.path.join(checkpoint_dir,
                                    f"ckpt_{iteration:06d}.emg")
                save_checkpoint(path, state.model, state.net)
            state.iteration = iteration
    finally:
        if log_fh:
            log_fh.close()
    return state


def save_state(state: TrainerState, path) -> None:
    """Persist a full TrainerState (model, nets, moments, stats) to .npz."""
    m = state.model
    data = {
        "iteration": np.int64(state.iteration),
        "initial_n": np.int64(state.initial_n),
        "model_means": m.means,
        "model_log_scales": m.log_scales,
        "model_rotations": m.rotations,
        "model_opacity_logits": m.opacity_logits,
        "model_intensities": m.intensities,
        "model_dims": np.array([m.width, m.height], dtype=np.int64),
        "model_axial": np.array([m.z0, m.sz0]),
        "teacher_init_iteration": np.int64(
            state.diagnostics.get("teacher_init_iteration", -1)),
        "stage1_net_unchanged": np.int64(
            {True: 1, False: 0}.get(
                state.diagnostics.get("stage1_net_unchanged"), -1)),
        "stats_accum": state.stats.accum,
        "stats_count": state.stats.count,
    }
    net = state.net
    data["net_arch"] = np.array([net.width_px, net.height_px,
                                 net.hidden_width, net.depth,
                                 net.l_pos, net.l_time], dtype=np.int64)
    data["net_mean_scale"] = np.float64(net.mean_scale)
    for i, p in enumerate(net.parameters()):
        data[f"student_{i}"] = p
    data["has_teacher"] = np.int64(1 if state.teacher is not None else 0)
    if state.teacher is not None:
        for i, p in enumerate(state.teacher.parameters()):
            data[f"teacher_{i}"] = p
    for name, slot in state.g_adam.slots.items():
        data[f"gadam_{name}_m"] = slot.m
        data[f"gadam_{name}_v"] = slot.v
        data[f"gadam_{name}_step"] = np.int64(slot.step)
    for i, slot in enumerate(state.n_adam.slots):
        data[f"nadam_{i}_m"] = slot.m
        data[f"nadam_{i}_v"] = slot.v
        data[f"nadam_{i}_step"] = np.int64(slot.step)
    init_params = state.diagnostics.get("net_init_params")
    if init_params is not None:
        for i, p in enumerate(init_params):
            data[f"netinit_{i}"] = p
    np.savez(path, **data)


def load_state(path) -> TrainerState:
    """Rebuild a TrainerState saved by save_state."""
    with np.load(path) as z:
        dims = z["model_dims"]
        axial = z["model_axial"]
        model = VolumeModel(
            means=z["model_means"].copy(),
            log_scales=z["model_log_scales"].copy(),
            rotations=z["model_rotations"].copy(),
            opacity_logits=z["model_opacity_logits"].copy(),
            intensities=z["model_intensities"].copy(),
            width=int(dims[0]), height=int(dims[1]),
            z0=float(axial[0]), sz0=float(axial[1]))
        arch = z["net_arch"]
        mean_scale = float(z["net_mean_scale"])

        def _restore_net(prefix):
            net = DeformationNet(int(arch[0]), int(arch[1]),
                                 hidden_width=int(arch[2]),
                                 depth=int(arch[3]), l_pos=int(arch[4]),
                                 l_time=int(arch[5]), mean_scale=mean_scale,
                                 seed=0)
            count = 2 * len(net.weights)
            net.set_parameters([z[f"{prefix}_{i}"] for i in range(count)])
            return net

        net = _restore_net("student")
        teacher = _restore_net("teacher") if int(z["has_teacher"]) else None
        g_adam = GaussianAdam(model)
        for name, slot in g_adam.slots.items():
            slot.m = z[f"gadam_{name}_m"].copy()
            slot.v = z[f"gadam_{name}_v"].copy()
            slot.step = int(z[f"gadam_{name}_step"])
        n_adam = NetAdam(net)
        for i, slot in enumerate(n_adam.slots):
            slot.m = z[f"nadam_{i}_m"].copy()
            slot.v = z[f"nadam_{i}_v"].copy()
            slot.step = int(z[f"nadam_{i}_step"])
        stats = DensityStats(z["stats_accum"].copy(),
                             z["stats_count"].copy())
        state = TrainerState(model=model, net=net, teacher=teacher,
                             g_adam=g_adam, n_adam=n_adam, stats=stats,
                             iteration=int(z["iteration"]),
                             initial_n=int(z["initial_n"]))
        n_params = 2 * len(net.weights)
        if "netinit_0" in z:
            state.diagnostics["net_init_params"] = [
                z[f"netinit_{i}"].copy() for i in range(n_params)]
        tii = int(z["teacher_init_iteration"])
        if tii >= 0:
            state.diagnostics["teacher_init_iteration"] = tii
        s1 = int(z["stage1_net_unchanged"])
        if s1 >= 0:
            state.diagnostics["stage1_net_unchanged"] = bool(s1)
    return state


def infer_slice(model: VolumeModel, net: DeformationNet, t: float):
    """Render the deformed model at timestamp t, clamped to [0, 1]."""
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"timestamp {t} outside [0, 1]")
    deltas = None
    if net is not None:
        deltas = net.batched_forward(model.means, t)
    image, _ = render(model, deltas)
    return np.clip(image, 0.0, 1.0)


def evaluate_heldout(model: VolumeModel, net: DeformationNet,
                     stack: SliceStack, held) -> dict:
    """MetricReports for the model and both baselines on held-out slices."""
    ids = [e.index for e in held]
    rows = {"model": [], "nearest": [], "linear": []}
    for e in held:
        pred = infer_slice(model, net, e.t)
        rows["model"].append((psnr(pred, e.image), ssim(pred, e.image)))
        nb = nearest_slice(stack, e.t)
        rows["nearest"].append((psnr(nb, e.image), ssim(nb, e.image)))
        lb = linear_blend(stack, e.t)
        rows["linear"].append((psnr(lb, e.image), ssim(lb, e.image)))
    out = {}
    for key, vals in rows.items():
        out[key] = MetricReport(slice_ids=list(ids),
                                psnrs=[v[0] for v in vals],
                                ssims=[v[1] for v in vals],
                                label=key)
    return out
