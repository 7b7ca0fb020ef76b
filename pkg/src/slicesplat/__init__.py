"""Slice-to-volume reconstruction with deformable 2D Gaussian splatting.

An anisotropic stack of grayscale slices is modeled as the axial evolution
of a 2D Gaussian point cloud: a canonical Gaussian set shared by all slices
plus a small deformation network that shifts, rescales and re-weights each
Gaussian as a function of normalized depth t in [0, 1]. Training is
self-contained per volume and new slices can be synthesized at any
continuous depth.
"""

from slicesplat.model import (
    Gaussian2D,
    DeformationDelta,
    VolumeModel,
    build_covariance,
    eval_gaussian,
    apply_deformation,
    timestamp_of_slice,
    initialize_model,
)
from slicesplat.rasterizer import render, render_backward, RenderAux
from slicesplat.deformnet import DeformationNet, ema_update
from slicesplat.losses import photometric_loss
from slicesplat.metrics import mse, psnr, ssim, MetricReport
from slicesplat.volume_io import (
    SliceStack,
    Manifest,
    load_stack,
    subsample_z,
    stack_from_volume,
    write_slice,
    read_slice,
)
from slicesplat.phantom import generate_phantom, SplitMix64
from slicesplat.checkpoint import save_checkpoint, load_checkpoint
from slicesplat.trainer import (
    TrainConfig,
    train,
    infer_slice,
    pseudo_weight,
    evaluate_heldout,
)

__version__ = "0.1.0"

__all__ = [
    "Gaussian2D",
    "DeformationDelta",
    "VolumeModel",
    "build_covariance",
    "eval_gaussian",
    "apply_deformation",
    "timestamp_of_slice",
    "initialize_model",
    "render",
    "render_backward",
    "RenderAux",
    "DeformationNet",
    "ema_update",
    "photometric_loss",
    "mse",
    "psnr",
    "ssim",
    "MetricReport",
    "SliceStack",
    "Manifest",
    "load_stack",
    "subsample_z",
    "stack_from_volume",
    "write_slice",
    "read_slice",
    "generate_phantom",
    "SplitMix64",
    "save_checkpoint",
    "load_checkpoint",
    "TrainConfig",
    "train",
    "infer_slice",
    "pseudo_weight",
    "evaluate_heldout",
]
