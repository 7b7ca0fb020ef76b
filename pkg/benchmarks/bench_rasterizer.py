"""Compare the numba-jitted rasterizer kernels against the numpy fallback.

Runs forward render and backward passes over a few scene sizes and reports
per-call wall time plus the max absolute image difference between backends.
With SLICESPLAT_NO_NUMBA=1 (or numba missing) only the fallback is timed.
"""

import argparse
import time

import numpy as np

from slicesplat.backends import use_numba
from slicesplat.model import VolumeModel
from slicesplat.rasterizer import render, render_backward


def make_scene(seed: int, n: int, size: int) -> VolumeModel:
    rng = np.random.default_rng(seed)
    return VolumeModel(
        means=rng.uniform(2, size - 2, (n, 2)),
        log_scales=rng.uniform(np.log(1.0), np.log(4.0), (n, 2)),
        rotations=rng.uniform(0, np.pi, n),
        opacity_logits=rng.uniform(-2.0, 1.5, n),
        intensities=rng.uniform(0.1, 1.0, n),
        width=size, height=size)


def time_call(fn, repeats: int) -> float:
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--scenes", nargs="*", default=["100x64", "500x64",
                                                    "1000x128"],
                    help="NxS = N Gaussians on an SxS image")
    args = ap.parse_args()

    from slicesplat import _kernels_numpy
    backends = [("numpy", _kernels_numpy)]
    if use_numba():
        from slicesplat import _kernels_numba
        backends.insert(0, ("numba", _kernels_numba))
    else:
        print("numba backend unavailable; timing the fallback only")

    header = f"{'scene':>12} {'pass':>9}"
    for name, _ in backends:
        header += f" {name + ' ms':>12}"
    if len(backends) == 2:
        header += f" {'speedup':>9} {'max|diff|':>11}"
    print(header)

    for spec in args.scenes:
        n, size = (int(v) for v in spec.split("x"))
        model = make_scene(0, n, size)
        grad = np.full((size, size), 1.0 / size ** 2)

        results = {}
        for name, kern in backends:
            img, aux = render(model, kernels=kern)  # includes JIT warm-up
            grads = render_backward(grad, aux, model, kernels=kern)
            fwd = time_call(lambda k=kern: render(model, kernels=k),
                            args.repeats)
            bwd = time_call(
                lambda k=kern, a=aux: render_backward(grad, a, model,
                                                      kernels=k),
                args.repeats)
            results[name] = (fwd, bwd, img, grads)

        for label, idx in (("forward", 0), ("backward", 1)):
            row = f"{spec:>12} {label:>9}"
            for name, _ in backends:
                row += f" {results[name][idx] * 1e3:>12.3f}"
            if len(backends) == 2:
                ratio = results["numpy"][idx] / results["numba"][idx]
                row += f" {ratio:>8.1f}x"
                if label == "forward":
                    diff = np.abs(results["numba"][2]
                                  - results["numpy"][2]).max()
                else:
                    diff = max(
                        np.abs(a - b).max() for a, b in
                        zip(results["numba"][3].delta_batch().T,
                            results["numpy"][3].delta_batch().T))
                row += f" {diff:>11.2e}"
            print(row)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
