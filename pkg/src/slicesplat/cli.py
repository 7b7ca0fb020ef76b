"""Command-line workflow: phantom, subsample, train, render, eval, ablate.

Every command prints its resolved configuration before doing work, and all
paths in a manifest are taken relative to the manifest file. Exit codes:
0 success, 2 usage error, 1 runtime failure.
"""

import argparse
import os
import sys
from fractions import Fraction

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .phantom import generate_phantom
from .rasterizer import render, dump_aux
from .trainer import (TrainConfig, evaluate_heldout, infer_slice, load_state,
                      save_state, train)
from .volume_io import (Manifest, MANIFEST_SCHEMA, load_stack,
                        read_heldout, stack_from_volume, subsample_z,
                        write_heldout, write_slice)


def _print_config(title: str, pairs) -> None:
    print(f"# {title}")
    for key, val in pairs:
        print(f"{key} = {val}")


def _apply_overrides(manifest: Manifest, sets) -> None:
    for item in sets or []:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, val = item.partition("=")
        key = key.strip()
        if key not in MANIFEST_SCHEMA:
            raise UsageError(f"unknown manifest key {key!r}")
        parser, _ = MANIFEST_SCHEMA[key]
        try:
            manifest.set(key, parser(val.strip()))
        except ValueError as exc:
            raise UsageError(f"bad value for {key!r}: {exc}") from exc


class UsageError(Exception):
    pass


def cmd_phantom(args) -> int:
    w, h, d = args.dims
    if min(w, h, d) < 16:
        raise UsageError("phantom dims must be at least 16 in every axis")
    _print_config("phantom config", [("seed", args.seed),
                                     ("dims", f"{w} {h} {d}"),
                                     ("n_structures", args.n_structures),
                                     ("out", args.out)])
    vol = generate_phantom(args.seed, (w, h, d), args.n_structures)
    os.makedirs(args.out, exist_ok=True)
    for k in range(d):
        write_slice(vol[k], os.path.join(args.out, f"slice_{k:04d}.pgm"))
    manifest = Manifest(base_dir=args.out)
    manifest.set("slices_dir", ".")
    manifest.set("pattern", "slice_*.pgm")
    manifest.set("anisotropy", 1)
    manifest.set("seed", args.seed)
    with open(os.path.join(args.out, "manifest.txt"), "w") as fh:
        fh.write(manifest.to_text())
    print(f"wrote {d} slices + manifest to {args.out}")
    return 0


def cmd_subsample(args) -> int:
    manifest = Manifest.load(args.manifest)
    _apply_overrides(manifest, args.set)
    _print_config("resolved manifest", [("factor", args.factor)])
    print(manifest.resolved_text())
    full = load_stack(manifest)
    observed, held = subsample_z(full, args.factor)
    os.makedirs(args.out, exist_ok=True)
    obs_dir = os.path.join(args.out, "observed")
    os.makedirs(obs_dir, exist_ok=True)
    for k, img in enumerate(observed.slices):
        write_slice(img, os.path.join(obs_dir, f"slice_{k:04d}.pgm"))
    write_heldout(held, os.path.join(args.out, "heldout_map.txt"),
                  os.path.join(args.out, "heldout"))
    out_manifest = Manifest(base_dir=args.out)
    for key in manifest.values:
        if key not in ("slices_dir", "pattern", "anisotropy", "width",
                       "height"):
            out_manifest.set(key, manifest.values[key])
    out_manifest.set("slices_dir", "observed")
    out_manifest.set("pattern", "slice_*.pgm")
    out_manifest.set("anisotropy", args.factor)
    with open(os.path.join(args.out, "manifest.txt"), "w") as fh:
        fh.write(out_manifest.to_text())
    print(f"kept {observed.n} observed slices, withheld {len(held)}; "
          f"outputs in {args.out}")
    return 0


def cmd_train(args) -> int:
    manifest = Manifest.load(args.manifest)
    _apply_overrides(manifest, args.set)
    if args.seed is not None:
        manifest.set("seed", args.seed)
    if args.pseudo_iters is not None:
        manifest.set("pseudo_iters", args.pseudo_iters)
    print("# resolved manifest")
    print(manifest.resolved_text())
    cfg = TrainConfig.from_manifest(manifest)
    stack = load_stack(manifest)
    out_dir = manifest.resolve_path("out_dir")
    os.makedirs(out_dir, exist_ok=True)
    state = load_state(args.resume) if args.resume else None
    state = train(stack, cfg, state=state, stop_after=args.stop_after,
                  log_file=os.path.join(out_dir, "train_log.txt"),
                  checkpoint_dir=out_dir)
    save_checkpoint(os.path.join(out_dir, "model.emg"), state.model,
                    state.net)
    save_state(state, os.path.join(out_dir, "train_state.npz"))
    print(f"finished at iteration {state.iteration} with "
          f"{state.model.n} Gaussians; outputs in {out_dir}")
    return 0


def _parse_fraction(text: str) -> Fraction:
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise UsageError(f"bad fraction {text!r}: {exc}") from exc


def cmd_render(args) -> int:
    if (args.t is None) == (args.range is None):
        raise UsageError("give exactly one of --t or --range")
    if args.range is not None and args.step is None:
        raise UsageError("--range requires --step")
    model, net = load_checkpoint(args.checkpoint)
    if args.t is not None:
        ts = [_parse_fraction(args.t)]
    else:
        t0 = _parse_fraction(args.range[0])
        t1 = _parse_fraction(args.range[1])
        step = _parse_fraction(args.step)
        if step <= 0 or t1 < t0:
            raise UsageError("--range needs t0 <= t1 and positive --step")
        ts = []
        k = 0
        while t0 + k * step <= t1:
            ts.append(t0 + k * step)
            k += 1
    for t in ts:
        if not 0 <= t <= 1:
            raise UsageError(f"timestamp {t} outside [0, 1]")
    _print_config("render config",
                  [("checkpoint", args.checkpoint),
                   ("timestamps", " ".join(f"{float(t):g}" for t in ts)),
                   ("out", args.out)])
    os.makedirs(args.out, exist_ok=True)
    for i, t in enumerate(ts):
        img = infer_slice(model, net, float(t))
        name = f"render_{i:04d}_t{float(t):.6f}.pgm"
        write_slice(img, os.path.join(args.out, name))
    if args.dump_aux:
        t = float(ts[0])
        deltas = net.batched_forward(model.means, t) if net else None
        _, aux = render(model, deltas)
        dump_aux(aux, args.dump_aux)
    print(f"wrote {len(ts)} slices to {args.out}")
    return 0


def cmd_eval(args) -> int:
    manifest = Manifest.load(args.manifest)
    _apply_overrides(manifest, args.set)
    print("# resolved manifest")
    print(manifest.resolved_text())
    model, net = load_checkpoint(args.checkpoint)
    stack = load_stack(manifest)
    held_dir = args.heldout_dir or os.path.join(
        os.path.dirname(os.path.abspath(args.heldout_map)), "heldout")
    held = read_heldout(args.heldout_map, held_dir)
    reports = evaluate_heldout(model, net, stack, held)
    for key in ("model", "nearest", "linear"):
        print(f"== {key} ==")
        print(reports[key].as_table())
    for key in ("model", "nearest", "linear"):
        print(reports[key].as_keyvalues())
    return 0


def cmd_ablate(args) -> int:
    manifest = Manifest.load(args.manifest)
    _apply_overrides(manifest, args.set)
    if args.seed is not None:
        manifest.set("seed", args.seed)
    print("# resolved manifest")
    print(manifest.resolved_text())
    stack = load_stack(manifest)
    held_dir = args.heldout_dir or os.path.join(
        os.path.dirname(os.path.abspath(args.heldout_map)), "heldout")
    held = read_heldout(args.heldout_map, held_dir)
    results = {}
    for label, pseudo in (("full", None), ("no_teacher_student", 0)):
        m2 = Manifest(dict(manifest.values), manifest.base_dir)
        if pseudo is not None:
            m2.set("pseudo_iters", pseudo)
        cfg = TrainConfig.from_manifest(m2)
        state = train(stack, cfg)
        reports = evaluate_heldout(state.model, state.net, stack, held)
        results[label] = reports["model"].mean_psnr
        print(f"{label}: mean held-out PSNR {results[label]:.4f} dB")
    delta = results["full"] - results["no_teacher_student"]
    print(f"teacher-student gain: {delta:+.4f} dB")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="slicesplat",
        description="Slice-stack interpolation with deformable 2D "
                    "Gaussian splatting")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("phantom", help="generate a synthetic volume")
    sp.add_argument("--seed", type=int, default=7)
    sp.add_argument("--dims", type=int, nargs=3, default=[64, 64, 61],
                    metavar=("W", "H", "D"))
    sp.add_argument("--n-structures", type=int, default=12)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_phantom)

    sp = sub.add_parser("subsample", help="withhold intermediate slices")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--factor", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--set", action="append", metavar="KEY=VALUE")
    sp.set_defaults(func=cmd_subsample)

    sp = sub.add_parser("train", help="run the three-stage pipeline")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--pseudo-iters", type=int, dest="pseudo_iters")
    sp.add_argument("--resume", help="train_state.npz to continue from")
    sp.add_argument("--stop-after", type=int, dest="stop_after")
    sp.add_argument("--set", action="append", metavar="KEY=VALUE")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("render", help="synthesize slices from a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--t")
    sp.add_argument("--range", nargs=2, metavar=("T0", "T1"))
    sp.add_argument("--step", help="grid step, fractions allowed (1/60)")
    sp.add_argument("--out", required=True)
    sp.add_argument("--dump-aux", dest="dump_aux",
                    help="write per-pixel contribution dump of the first "
                         "timestamp")
    sp.set_defaults(func=cmd_render)

    sp = sub.add_parser("eval", help="score a checkpoint on held-out slices")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--heldout-map", required=True, dest="heldout_map")
    sp.add_argument("--heldout-dir", dest="heldout_dir")
    sp.add_argument("--set", action="append", metavar="KEY=VALUE")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate", help="compare full pipeline vs "
                                       "--pseudo-iters 0")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--heldout-map", required=True, dest="heldout_map")
    sp.add_argument("--heldout-dir", dest="heldout_dir")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--set", action="append", metavar="KEY=VALUE")
    sp.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
