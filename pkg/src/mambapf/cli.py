"""Command-line entry points: train, denoise, eval, synth-noise, render-debug."""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .config import RunConfig, apply_overrides, load_config, resolve_seed
from .errors import CheckpointError, InvalidInputError, MambaPFError
from .geometry import NoiseSpec, PointCloud, add_gaussian_noise, normalize_to_unit
from .io_formats import (load_checkpoint, load_cloud, load_mesh, restore_params,
                         save_checkpoint, save_cloud)
from .losses import chamfer_distance, format_metric_report, point_to_mesh
from .network import iterative_filter
from .render import RenderConfig, render_views, save_pgm
from .training import (build_model, named_parameters, render_config_from, train,
                       write_loss_log)

CONFIG_FLAGS = ("modules", "iterations", "mamba_layers", "patch_size", "k_graph",
                "embed_dim", "state_dim", "alpha", "views", "image_size",
                "depth_bins", "lr", "steps", "threads", "noise_fraction",
                "sigma_start", "max_step")


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--seed", type=int, default=None)
    for name in CONFIG_FLAGS:
        default = getattr(RunConfig(), name)
        parser.add_argument(f"--{name.replace('_', '-')}", dest=name,
                            type=type(default), default=None)


def _resolve_config(args) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    overrides = {name: getattr(args, name) for name in CONFIG_FLAGS}
    config = apply_overrides(config, overrides)
    return apply_overrides(config, {"seed": resolve_seed(config, args.seed)})


def cmd_train(args) -> int:
    config = _resolve_config(args)
    clouds = [load_cloud(p) for p in args.clean]
    if not clouds:
        raise InvalidInputError("need at least one clean cloud")
    rows: list = []
    progress = None
    if args.verbose:
        progress = lambda step, loss: print(f"step {step}: loss {loss:.6g}")
    params = train(clouds, config, log_rows=rows, progress=progress)
    save_checkpoint(args.checkpoint, config, params)
    if args.loss_log:
        write_loss_log(args.loss_log, rows)
    print(f"saved checkpoint to {args.checkpoint} ({len(params)} tensors)")
    return 0


def cmd_denoise(args) -> int:
    config_ckpt, stored = load_checkpoint(args.checkpoint)
    config = config_ckpt
    if args.config:
        config = load_config(args.config)
        if config.to_dict() != config_ckpt.to_dict():
            raise CheckpointError("config file disagrees with checkpoint config")
    modules = build_model(config)
    params = named_parameters(modules)
    restore_params(params, stored)
    noisy = load_cloud(args.input)
    result = iterative_filter(noisy, modules, T=config.iterations,
                              patch_size=min(config.patch_size, len(noisy)),
                              k=config.k_graph, normalize=config.normalize)
    save_cloud(args.output, result)
    print(f"wrote {len(result)} points to {args.output}")
    return 0


def cmd_eval(args) -> int:
    pred = load_cloud(args.pred)
    gt = load_cloud(args.gt)
    metrics = {"CD": chamfer_distance(pred, gt)}
    if args.gt_mesh:
        metrics["P2M"] = point_to_mesh(pred, load_mesh(args.gt_mesh))
    sys.stdout.write(format_metric_report(metrics))
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(format_metric_report(metrics))
    return 0


def cmd_synth_noise(args) -> int:
    config = _resolve_config(args)
    cloud = load_cloud(args.input)
    spec = NoiseSpec(sigma_fraction=config.noise_fraction,
                     reference=config.noise_reference, seed=config.seed)
    save_cloud(args.output, add_gaussian_noise(cloud, spec))
    print(f"wrote noisy cloud to {args.output}")
    return 0


def cmd_render_debug(args) -> int:
    config = _resolve_config(args)
    cloud = load_cloud(args.input)
    normalized, _ = normalize_to_unit(cloud)
    render_cfg = render_config_from(config)
    os.makedirs(args.outdir, exist_ok=True)
    views = render_views(normalized, render_cfg)
    for i, view in enumerate(views):
        save_pgm(os.path.join(args.outdir, f"view_{i}.pgm"), view.image)
    print(f"wrote {len(views)} views to {args.outdir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mambapf",
        description="Iterative Mamba-based point cloud filtering")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on clean clouds per the iterative loss")
    p.add_argument("clean", nargs="+", help="clean cloud files (xyz/ply)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--loss-log", default=None)
    p.add_argument("--verbose", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("denoise", help="filter a noisy cloud with a checkpoint")
    p.add_argument("input")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--config", help="optional config file; must match checkpoint")
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("eval", help="report CD (and P2M with a mesh)")
    p.add_argument("pred")
    p.add_argument("gt")
    p.add_argument("--gt-mesh", default=None)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth-noise", help="add seeded Gaussian noise to a cloud")
    p.add_argument("input")
    p.add_argument("--output", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_synth_noise)

    p = sub.add_parser("render-debug", help="dump PGM views of a cloud")
    p.add_argument("input")
    p.add_argument("--outdir", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_render_debug)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MambaPFError as exc:
        print(f"ERROR[{exc.code}]: {exc.message}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"ERROR[io]: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
