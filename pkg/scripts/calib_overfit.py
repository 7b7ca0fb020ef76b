"""Calibration: single-slice overfit (shape of the overfit acceptance check).

Two copies of one phantom slice at t=0 and t=1, stage-1 only training,
2000 iterations, <=1000 Gaussians. Reports PSNR of the canonical render.
"""

import sys
import time

import numpy as np

from slicesplat.backends import backend_name
from slicesplat.metrics import psnr
from slicesplat.phantom import generate_phantom
from slicesplat.rasterizer import render
from slicesplat.trainer import TrainConfig, train
from slicesplat.volume_io import SliceStack


def main() -> int:
    vol = generate_phantom(seed=7, dims=(64, 64, 61), n_structures=12)
    target = vol[30]
    stack = SliceStack(slices=[target, target.copy()],
                       timestamps=np.array([0.0, 1.0]))
    overrides = {}
    for kv in sys.argv[1:]:
        k, _, v = kv.partition("=")
        overrides[k] = float(v) if "." in v or "e" in v else int(v)
    cfg_kwargs = dict(
        seed=0,
        warmup_iters=2000, joint_iters=0, pseudo_iters=0,
        init_gaussians=250, cap_factor=4.0,
        net_width=16, net_depth=2,
        densify_from=500, densify_until=3000, densify_every=100,
        opacity_reset_at=1500,
        checkpoint_every=0, log_every=100,
    )
    cfg_kwargs.update(overrides)
    cfg = TrainConfig(**cfg_kwargs)
    t0 = time.time()
    state = train(stack, cfg)
    dt = time.time() - t0
    img, _ = render(state.model)
    img = np.clip(img, 0.0, 1.0)
    print(f"backend={backend_name()} n={state.model.n} "
          f"iters={state.iteration} time={dt:.1f}s "
          f"psnr={psnr(img, target):.3f}")
    for line in state.loss_lines[::4]:
        print(line)
    return 0


if __name__ == "__main__":
    sys.exit(main())
